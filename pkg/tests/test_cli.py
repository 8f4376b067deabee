import json
import shutil

import numpy as np
import pytest

from maskedface import cli
from maskedface.compose import ComposeParams, center_region_mean_L
from maskedface.geometry import read_landmarks, warp_mask
from maskedface.imaging import composite_alpha, read_image, resize_bilinear, scale_points

from .conftest import DATA


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_mask_one_matches_golden(tmp_path, capsys):
    out = tmp_path / "m.png"
    code, stdout, _ = run(capsys, "mask-one", DATA / "face.png", DATA / "face.txt", "-t", "striped-white", "--seed", 42, "-o", out)
    assert code == 0
    assert str(out) in stdout
    golden = DATA / "golden_striped_seed42.png"
    assert np.array_equal(read_image(out), read_image(golden))
    assert out.read_bytes() == golden.read_bytes()
    prov = json.loads(out.with_suffix(".json").read_text())
    assert prov["seed"] == 42 and prov["template_id"] == "striped-white"
    assert len(prov["face_offset"]) == 2 and len(prov["mask_offset"]) == 2
    lm = read_landmarks(out.with_suffix(".txt"))
    assert lm.shape == (68, 2)


def test_mask_one_missing_landmarks(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    code, _, err = run(capsys, "mask-one", DATA / "face.png", missing, "-t", "solid-blue", "-o", tmp_path / "x.png")
    assert code == 1
    assert str(missing) in err


def test_mask_one_unknown_template(tmp_path, capsys):
    code, _, err = run(capsys, "mask-one", DATA / "face.png", DATA / "face.txt", "-t", "paisley", "-o", tmp_path / "x.png")
    assert code == 1 and "paisley" in err


def test_mask_one_without_post_processing(tmp_path, capsys, templates):
    out = tmp_path / "plain.png"
    code, _, _ = run(
        capsys, "mask-one", DATA / "face.png", DATA / "face.txt", "-t", "checked-red", "--alpha", 0, "--beta", 1, "--perturb", 0, "-o", out
    )
    assert code == 0
    face = read_image(DATA / "face.png")
    lm = read_landmarks(DATA / "face.txt")
    t = next(t for t in templates if t.id == "checked-red")
    work = resize_bilinear(face, 500, 500)
    pts = scale_points(lm, (250, 250), (500, 500))[list(t.face_indices)]
    layer, _ = warp_mask(t.raster, t.mask_points, pts, (500, 500))
    expected = resize_bilinear(composite_alpha(layer, work), 250, 250)
    assert np.array_equal(read_image(out), expected)


@pytest.mark.parametrize("flag, value", [("--beta", "4"), ("--alpha", "1.5"), ("--output-side", "0"), ("--beta", "x")])
def test_invalid_arguments_exit_2(tmp_path, capsys, flag, value):
    with pytest.raises(SystemExit) as exc:
        cli.main(["mask-one", str(DATA / "face.png"), str(DATA / "face.txt"), "-t", "solid-blue", "-o", str(tmp_path / "x.png"), flag, value])
    assert exc.value.code == 2


def test_help_shows_defaults(capsys):
    with pytest.raises(SystemExit):
        cli.main(["mask-one", "--help"])
    text = " ".join(capsys.readouterr().out.split())
    for flag, default in [("--alpha", "0.6"), ("--beta", "5"), ("--target-side", "500"), ("--output-side", "250"), ("--seed", "0")]:
        assert flag in text
        assert f"(default: {default})" in text
    assert "--perturb-face-top" in text and "interocular distance (default: 0.1)" in text
    assert "(default: None)" not in text


def test_build_dataset_and_eval(tmp_path, capsys, fixture_set):
    out = tmp_path / "out"
    args = ["build-dataset", "--pairs", fixture_set / "pairs.txt", "--images", fixture_set / "images",
            "--landmarks", fixture_set / "landmarks", "--out", out, "--seed", 3, "--jobs", 1]
    code, stdout, _ = run(capsys, *args)
    assert code == 0
    assert "         1 |            15 |            15" in stdout
    assert "         2 |            15 |            15" in stdout
    assert "scenarios: 1=30 2=15 3=15" in stdout

    # separable embeddings: one cluster per identity, keyed by output file names
    from maskedface.evaluation import read_pairing, write_embeddings_text

    pairs = read_pairing(out / "pairing.txt")
    ids = sorted({i for a, b, _ in pairs for i in (a, b)})
    rng = np.random.default_rng(0)
    centers = {}
    table = {}
    for i in ids:
        person = "_".join(i.split("_")[:2])
        centers.setdefault(person, rng.normal(size=32))
        table[i] = centers[person] + 0.01 * rng.normal(size=32)
    write_embeddings_text(tmp_path / "emb.txt", table)
    report = tmp_path / "r" / "report.json"
    code, stdout, _ = run(capsys, "eval", "--pairing", out / "pairing.txt", "--folds", out / "folds.txt",
                          "--embeddings", tmp_path / "emb.txt", "--report", report)
    assert code == 0
    assert "100.00%" in stdout
    doc = json.loads(report.read_text())
    assert f"{100 * doc['mean_accuracy']:.2f}%" in stdout
    assert report.with_suffix(".txt").read_text().strip() == stdout.strip()


def test_eval_missing_embeddings(tmp_path, capsys):
    (tmp_path / "p.txt").write_text("a b 1\nc d 0\n")
    (tmp_path / "f.txt").write_text("0 0\n1 1\n")
    (tmp_path / "e.txt").write_text("a 2 1 0\nb 2 0 1\n")
    code, _, err = run(capsys, "eval", "--pairing", tmp_path / "p.txt", "--folds", tmp_path / "f.txt",
                       "--embeddings", tmp_path / "e.txt", "-k", 2, "--report", tmp_path / "r.json")
    assert code == 1
    assert "c, d" in err


def test_build_dataset_reports_failures(tmp_path, capsys, fixture_set):
    fx = tmp_path / "fx"
    shutil.copytree(fixture_set, fx)
    first = (fx / "pairs.txt").read_text().split()[0]
    (fx / "images" / f"{first}.png").unlink()
    code, _, err = run(capsys, "build-dataset", "--pairs", fx / "pairs.txt", "--images", fx / "images",
                       "--landmarks", fx / "landmarks", "--out", tmp_path / "out", "--jobs", 1)
    assert code == 1
    assert "failed" in err and first in err


def test_validate_gallery(tmp_path, capsys):
    code, stdout, _ = run(capsys, "validate-gallery")
    assert code == 0 and "4 valid template(s), 0 error(s)" in stdout

    from maskedface.gallery import bundled_gallery_path

    g = tmp_path / "g"
    shutil.copytree(bundled_gallery_path().parent, g)
    (g / "manifest.json").write_text('{"templates": [\n  oops\n]}')
    code, _, err = run(capsys, "validate-gallery", g)
    assert code == 1 and "manifest.json:2:3" in err

    shutil.rmtree(g)
    shutil.copytree(bundled_gallery_path().parent, g)
    doc = json.loads((g / "manifest.json").read_text())
    pts = doc["templates"][1]["mask_points"]
    pts[3] = [(pts[2][0] + pts[4][0]) / 2, (pts[2][1] + pts[4][1]) / 2]
    (g / "manifest.json").write_text(json.dumps(doc))
    code, stdout, _ = run(capsys, "validate-gallery", g)
    assert code == 1
    assert "striped-white: triangle 2 (2, 3, 4) is degenerate on the mask side" in stdout


def test_make_fixtures(tmp_path, capsys):
    code, stdout, _ = run(capsys, "make-fixtures", "--out", tmp_path / "fx", "--identities", 3, "--per-identity", 2,
                          "--pairs", 4, "--gallery-out", tmp_path / "g")
    assert code == 0
    assert len(list((tmp_path / "fx" / "images").glob("*.png"))) == 6
    assert len((tmp_path / "fx" / "pairs.txt").read_text().splitlines()) == 4
    assert (tmp_path / "g" / "manifest.json").is_file()


def test_params_defaults_match_compose():
    args = cli.build_parser().parse_args(["mask-one", "f", "l", "-t", "x", "-o", "o"])
    assert cli._params(args, None) == ComposeParams()


def test_center_L_of_golden_face_is_plausible():
    face = read_image(DATA / "face.png")
    assert 20 < center_region_mean_L(face, read_landmarks(DATA / "face.txt")) < 95
