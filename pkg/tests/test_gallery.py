import json
import shutil

import numpy as np
import pytest

from maskedface import gallery as G
from maskedface.errors import GalleryError
from maskedface.geometry import DEFAULT_FACE_INDICES


def test_bundled_gallery_is_valid(templates):
    assert [t.id for t in templates] == ["solid-blue", "striped-white", "gradient-gray", "checked-red"]
    for t in templates:
        assert t.raster.shape[2] == 4
        assert t.mask_points.shape == (16, 2)
        assert tuple(t.face_indices) == DEFAULT_FACE_INDICES
        assert G.validate_template(t) == []
    assert G.gallery_id() == "synthetic"


def test_bundled_gallery_is_reproducible(tmp_path):
    G.write_synthetic_gallery(tmp_path)
    bundled = G.bundled_gallery_path().parent
    for name in ["manifest.json"] + [f"{t}.png" for t in G._STYLES]:
        assert (tmp_path / name).read_bytes() == (bundled / name).read_bytes(), name


def _copy_gallery(tmp_path):
    dst = tmp_path / "g"
    shutil.copytree(G.bundled_gallery_path().parent, dst)
    return dst


def _edit_manifest(path, fn):
    doc = json.loads((path / "manifest.json").read_text())
    fn(doc)
    (path / "manifest.json").write_text(json.dumps(doc))


def test_collinear_mask_points_are_reported(templates):
    t = templates[0]
    pts = t.mask_points.copy()
    pts[3] = (pts[2] + pts[4]) / 2  # collinear with its strip neighbours
    bad = G.MaskTemplate("bent", t.raster, pts, t.face_indices)
    msgs = [f.message for f in G.validate_template(bad)]
    assert any("degenerate on the mask side" in m for m in msgs)
    assert all(m.startswith("bent:") for m in msgs)


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda t: setattr(t, "mask_points", t.mask_points + 1000), "lies outside"),
        (lambda t: setattr(t, "face_indices", (30,) * 16), "not distinct"),
        (lambda t: setattr(t, "face_indices", tuple(range(60, 76))), "out of range"),
        (lambda t: setattr(t, "mask_points", t.mask_points[:15]), "expected 16 mask points"),
        (lambda t: t.raster.__setitem__((..., 3), 255), "no transparent pixels"),
        (lambda t: t.raster.__setitem__((..., 3), 0), "no opaque pixels"),
        (lambda t: setattr(t, "raster", t.raster[..., :3].copy()), "RGBA"),
    ],
)
def test_validation_findings(templates, mutate, needle):
    src = templates[0]
    t = G.MaskTemplate("x", src.raster.copy(), src.mask_points.copy(), src.face_indices)
    mutate(t)
    findings = G.validate_template(t)
    assert findings and all(f.severity == "error" for f in findings)
    assert any(needle in f.message for f in findings), findings


def test_degenerate_on_canonical_face(templates):
    src = templates[0]
    # Indices 30, 31, 32 are nearly collinear on the nose; 33 34 35 likewise.
    idx = (30, 28, 1, 31, 32, 33, 3, 12, 4, 11, 5, 10, 6, 9, 7, 8)
    fixture = G.canonical_fixture().copy()
    fixture[[31, 32, 33], 1] = fixture[31, 1]
    fixture[[31, 32, 33], 0] = [10, 20, 30]
    t = G.MaskTemplate("flat", src.raster, src.mask_points, idx)
    assert any("canonical face" in f.message for f in G.validate_template(t, fixture))


def test_corrupt_manifest_reports_location(tmp_path):
    g = _copy_gallery(tmp_path)
    (g / "manifest.json").write_text('{"version": 1,\n "templates": [}\n')
    with pytest.raises(GalleryError, match=r"manifest.json:2:\d+"):
        G.load_gallery(g)


def test_missing_raster_and_duplicates(tmp_path):
    g = _copy_gallery(tmp_path)
    (g / "checked-red.png").unlink()
    with pytest.raises(GalleryError, match="checked-red.*raster not found"):
        G.load_gallery(g)
    templates, findings = G.check_gallery(g)
    assert len(templates) == 3 and len(findings) == 1

    g2 = _copy_gallery(tmp_path / "b")
    _edit_manifest(g2, lambda d: d["templates"].append(dict(d["templates"][0])))
    with pytest.raises(GalleryError, match="duplicate id"):
        G.load_gallery(g2 / "manifest.json")


def test_manifest_shape_errors(tmp_path):
    with pytest.raises(GalleryError, match="not found"):
        G.load_gallery(tmp_path / "nope.json")
    g = _copy_gallery(tmp_path)
    _edit_manifest(g, lambda d: d.update(version=7))
    with pytest.raises(GalleryError, match="version"):
        G.load_gallery(g)
    _edit_manifest(g, lambda d: d.update(version=1, templates={}))
    with pytest.raises(GalleryError, match="templates"):
        G.load_gallery(g)


def test_canonical_fixture_matches_layout():
    from maskedface.geometry import canonical_landmarks

    assert np.allclose(G.canonical_fixture(), canonical_landmarks(250), atol=1e-4)
