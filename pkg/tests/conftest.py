from pathlib import Path

import numpy as np
import pytest

from maskedface import fixtures
from maskedface.gallery import load_gallery

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def templates():
    return load_gallery()


@pytest.fixture(scope="session")
def fixture_set(tmp_path_factory):
    """The standard 60-pair fixture: 20 identities x 4 images."""
    out = tmp_path_factory.mktemp("fixtures")
    return fixtures.write_fixture_set(out, n_identities=20, images_per_identity=4, n_pairs=60, seed=0)


@pytest.fixture(scope="session")
def faces():
    """Twenty in-memory fixture faces with landmarks."""
    rng = np.random.default_rng(2024)
    return [fixtures.make_face(rng) for _ in range(20)]
