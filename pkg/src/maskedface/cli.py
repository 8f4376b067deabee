"""maskedface command-line interface.

Exit codes: 0 success, 1 runtime or input error, 2 invalid arguments.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataset, evaluation, fixtures, gallery
from .compose import ComposeParams, apply_mask
from .errors import MaskedFaceError
from .geometry import read_landmarks, write_landmarks
from .imaging import read_image, scale_points, write_png

log = logging.getLogger("maskedface")

_DEFAULTS = ComposeParams()


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults except for options whose absence means "not set"."""

    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def _add_compose_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("rendering")
    g.add_argument("--alpha", type=float, default=_DEFAULTS.alpha, help="lightness alignment strength in [0, 1]")
    g.add_argument("--beta", type=int, default=_DEFAULTS.beta, help="boundary blur kernel size (odd; 1 disables)")
    g.add_argument("--target-side", type=int, default=_DEFAULTS.target_side, help="working resolution (pixels)")
    g.add_argument("--output-side", type=int, default=_DEFAULTS.output_side, help="output resolution (pixels)")
    g.add_argument("--seed", type=int, default=_DEFAULTS.seed, help="random seed")
    g.add_argument(
        "--perturb",
        type=float,
        default=None,
        help="set both perturbation fractions at once",
    )
    g.add_argument(
        "--perturb-face-top",
        type=float,
        default=None,
        help=f"top-of-face jitter radius as a fraction of interocular distance "
        f"(default: {_DEFAULTS.perturb_face_top})",
    )
    g.add_argument(
        "--perturb-mask-top",
        type=float,
        default=None,
        help=f"top-of-mask jitter radius as a fraction of the mask height (default: {_DEFAULTS.perturb_mask_top})",
    )


def _params(args, parser: argparse.ArgumentParser, seed: int | None = None) -> ComposeParams:
    face_top = mask_top = None
    if args.perturb is not None:
        face_top = mask_top = args.perturb
    if args.perturb_face_top is not None:
        face_top = args.perturb_face_top
    if args.perturb_mask_top is not None:
        mask_top = args.perturb_mask_top
    try:
        return ComposeParams(
            target_side=args.target_side,
            alpha=args.alpha,
            beta=args.beta,
            perturb_face_top=_DEFAULTS.perturb_face_top if face_top is None else face_top,
            perturb_mask_top=_DEFAULTS.perturb_mask_top if mask_top is None else mask_top,
            seed=args.seed if seed is None else seed,
            output_side=args.output_side,
        )
    except ValueError as exc:
        parser.error(str(exc))


def _find_template(templates, template_id: str):
    for t in templates:
        if t.id == template_id:
            return t
    known = ", ".join(t.id for t in templates)
    raise MaskedFaceError(f"template {template_id!r} not in gallery (available: {known})")


def cmd_mask_one(args, parser) -> int:
    params = _params(args, parser)
    face_path, lm_path = Path(args.face), Path(args.landmarks)
    for p in (face_path, lm_path):
        if not p.is_file():
            raise MaskedFaceError(f"file not found: {p}")
    templates = gallery.load_gallery(args.gallery)
    template = _find_template(templates, args.template)
    face = read_image(face_path)
    landmarks = read_landmarks(lm_path)
    result = apply_mask(face, landmarks, template, params)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_png(out, result.image)
    h, w = face.shape[:2]
    side = params.output_side
    sidecar = out.with_suffix(".txt")
    write_landmarks(sidecar, scale_points(landmarks, (w, h), (side, side)))
    prov = out.with_suffix(".json")
    doc = {"image": out.name, "landmarks": sidecar.name, **result.provenance()}
    prov.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for p in (out, sidecar, prov):
        print(p)
    return 0


def cmd_build_dataset(args, parser) -> int:
    params = _params(args, parser)
    templates = gallery.load_gallery(args.gallery)
    gid = gallery.gallery_id(args.gallery)
    jobs = args.jobs or dataset.default_jobs()
    plan, folds, result = dataset.build_dataset(
        args.pairs,
        args.images,
        args.landmarks,
        templates,
        args.out,
        seed=args.seed,
        params=params,
        gallery_id=gid,
        folds_path=args.folds,
        jobs=jobs,
    )
    print(dataset.format_statistics(dataset.statistics(plan), folds, plan))
    print(f"wrote {len(result.artifacts)} masked images to {args.out}")
    if result.errors:
        print(f"{len(result.errors)} masked images failed:", file=sys.stderr)
        for e in result.errors:
            print(f"  pair {e['pair_index']} ({e['output']}): {e['error']}", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args, parser) -> int:
    pairs = evaluation.read_pairing(args.pairing)
    folds = dataset.read_folds(args.folds, len(pairs))
    table = evaluation.read_embeddings(args.embeddings)
    report = evaluation.kfold_accuracy(pairs, folds, table, k=args.k)
    text = evaluation.format_report(report)
    print(text)
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    out.with_suffix(".txt").write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_validate_gallery(args, parser) -> int:
    templates, findings = gallery.check_gallery(args.gallery)
    for f in findings:
        print(f)
    n_err = sum(f.severity == "error" for f in findings)
    print(f"{len(templates)} valid template(s), {n_err} error(s)")
    return 1 if n_err else 0


def cmd_make_fixtures(args, parser) -> int:
    out = fixtures.write_fixture_set(
        args.out, args.identities, args.per_identity, args.pairs, seed=args.seed, size=args.size
    )
    print(out)
    if args.gallery_out:
        print(gallery.write_synthetic_gallery(args.gallery_out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = _Formatter
    parser = argparse.ArgumentParser(prog="maskedface", description=__doc__, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask-one", help="render one masked face", formatter_class=fmt)
    p.add_argument("face", help="face image (PNG or JPEG)")
    p.add_argument("landmarks", help="68-point landmark file")
    p.add_argument("-t", "--template", required=True, help="template id in the gallery")
    p.add_argument("-o", "--output", required=True, help="output PNG path")
    p.add_argument("--gallery", default=None, help="gallery manifest or directory (default: bundled)")
    _add_compose_flags(p)
    p.set_defaults(func=cmd_mask_one)

    p = sub.add_parser("build-dataset", help="split pairs, render masks, write folds", formatter_class=fmt)
    p.add_argument("--pairs", required=True, help="pairs.txt: 'name_a name_b label' lines")
    p.add_argument("--images", required=True, help="directory of source images")
    p.add_argument("--landmarks", required=True, help="directory of <name>.txt landmark files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--gallery", default=None, help="gallery manifest or directory (default: bundled)")
    p.add_argument("--folds", default=None, help="existing 'pair_index fold' file to reuse")
    p.add_argument("--jobs", type=int, default=0, help="worker processes (0 = all cores)")
    _add_compose_flags(p)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("eval", help="10-fold verification accuracy", formatter_class=fmt)
    p.add_argument("--pairing", required=True, help="pairing.txt from build-dataset (or a 3-column pair list)")
    p.add_argument("--folds", required=True, help="folds.txt from build-dataset")
    p.add_argument("--embeddings", required=True, help="embeddings (.bin binary, text otherwise)")
    p.add_argument("--report", default="report.json", help="JSON report path; text goes next to it as .txt")
    p.add_argument("-k", type=int, default=dataset.N_FOLDS, help="number of folds")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("validate-gallery", help="check a template gallery", formatter_class=fmt)
    p.add_argument("gallery", nargs="?", default=None, help="manifest or directory (default: bundled)")
    p.set_defaults(func=cmd_validate_gallery)

    p = sub.add_parser("make-fixtures", help="write synthetic faces, landmarks and pairs", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--identities", type=int, default=20, help="number of identities")
    p.add_argument("--per-identity", type=int, default=4, help="images per identity")
    p.add_argument("--pairs", type=int, default=60, help="number of pairs (half positive)")
    p.add_argument("--size", type=int, default=250, help="image side (pixels)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--gallery-out", default=None, help="also write the synthetic gallery here")
    p.set_defaults(func=cmd_make_fixtures)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, parser)
    except (OSError, ValueError, KeyError, MaskedFaceError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
