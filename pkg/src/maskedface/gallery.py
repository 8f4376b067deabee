"""Mask template gallery: manifest loading, validation and the bundled synthetic set."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import GalleryError
from .geometry import (
    DEFAULT_FACE_INDICES,
    MIN_TRIANGLE_AREA,
    N_CORRESPONDENCES,
    N_LANDMARKS,
    canonical_landmarks,
    read_landmarks,
    strip_triangulate,
    triangle_area,
    warp_mask,
)
from .imaging import read_image, write_png

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" or "warning"
    message: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.message}"


@dataclass
class MaskTemplate:
    id: str
    raster: np.ndarray
    mask_points: np.ndarray
    face_indices: tuple[int, ...] = DEFAULT_FACE_INDICES
    style_tags: list[str] = field(default_factory=list)


def bundled_gallery_path() -> Path:
    return Path(str(resources.files("maskedface") / "data" / "gallery" / MANIFEST_NAME))


def canonical_fixture() -> np.ndarray:
    """The frontal 68-point layout templates are validated against (250x250 face)."""
    return read_landmarks(Path(str(resources.files("maskedface") / "data" / "canonical_landmarks.txt")))


def validate_template(template: MaskTemplate, fixture: np.ndarray | None = None) -> list[Finding]:
    """Check every template invariant; an empty list means the template is valid."""
    findings: list[Finding] = []

    def error(msg: str) -> None:
        findings.append(Finding("error", f"{template.id}: {msg}"))

    raster = template.raster
    if raster.ndim != 3 or raster.shape[2] != 4 or raster.dtype != np.uint8:
        error(f"raster must be 8-bit RGBA, got shape {raster.shape}")
        return findings
    alpha = raster[..., 3]
    if not (alpha == 255).any():
        error("no opaque pixels")
    if not (alpha == 0).any():
        error("no transparent pixels")

    pts = np.asarray(template.mask_points, dtype=np.float64)
    idx = list(template.face_indices)
    if pts.shape != (N_CORRESPONDENCES, 2):
        error(f"expected {N_CORRESPONDENCES} mask points, got shape {pts.shape}")
        return findings
    if len(idx) != N_CORRESPONDENCES:
        error(f"expected {N_CORRESPONDENCES} face indices, got {len(idx)}")
        return findings
    if len(set(idx)) != len(idx):
        error(f"face indices are not distinct: {idx}")
    bad = [i for i in idx if not 0 <= i < N_LANDMARKS]
    if bad:
        error(f"face indices out of range [0, {N_LANDMARKS - 1}]: {bad}")
        return findings
    h, w = alpha.shape
    for i, (x, y) in enumerate(pts):
        if not (np.isfinite(x) and np.isfinite(y) and 0 <= x <= w - 1 and 0 <= y <= h - 1):
            error(f"mask point {i} ({x:g}, {y:g}) lies outside the {w}x{h} raster")
    degenerate = False
    for n, tri in enumerate(strip_triangulate(len(pts))):
        if not triangle_area(pts[list(tri)]) > MIN_TRIANGLE_AREA:
            error(f"triangle {n} {tri} is degenerate on the mask side")
            degenerate = True
    if findings or degenerate:
        return findings

    fixture = canonical_fixture() if fixture is None else fixture
    face_pts = fixture[idx]
    for n, tri in enumerate(strip_triangulate(len(pts))):
        if not triangle_area(face_pts[list(tri)]) > MIN_TRIANGLE_AREA:
            error(f"triangle {n} {tri} is degenerate on the canonical face")
    if findings:
        return findings
    layer, warnings = warp_mask(raster, pts, face_pts, (250, 250))
    for msg in warnings:
        error(f"validation warp: {msg}")
    if not (layer[..., 3] > 0).any():
        error("validation warp produced an empty footprint")
    return findings


def _parse_entry(entry: dict, base: Path, n: int) -> MaskTemplate:
    where = f"template #{n}"
    if not isinstance(entry, dict):
        raise GalleryError(f"{where}: expected an object")
    tid = entry.get("id")
    if not isinstance(tid, str) or not tid:
        raise GalleryError(f"{where}: missing string 'id'")
    where = f"template {tid!r}"
    for key in ("raster_path", "mask_points"):
        if key not in entry:
            raise GalleryError(f"{where}: missing '{key}'")
    raster_path = base / entry["raster_path"]
    if not raster_path.is_file():
        raise GalleryError(f"{where}: raster not found: {raster_path}")
    try:
        raster = read_image(raster_path, "RGBA")
    except OSError as exc:
        raise GalleryError(f"{where}: cannot read raster {raster_path}: {exc}") from exc
    try:
        points = np.asarray(entry["mask_points"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise GalleryError(f"{where}: mask_points must be [x, y] pairs") from exc
    face_indices = tuple(int(i) for i in entry.get("face_indices", DEFAULT_FACE_INDICES))
    tags = [str(t) for t in entry.get("style_tags", [])]
    return MaskTemplate(tid, raster, points, face_indices, tags)


def _manifest_file(manifest_path: str | Path | None) -> Path:
    path = bundled_gallery_path() if manifest_path is None else Path(manifest_path)
    return path / MANIFEST_NAME if path.is_dir() else path


def _read_manifest(path: Path) -> dict:
    if not path.is_file():
        raise GalleryError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GalleryError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("templates"), list):
        raise GalleryError(f"{path}: manifest must be an object with a 'templates' list")
    if doc.get("version", MANIFEST_VERSION) != MANIFEST_VERSION:
        raise GalleryError(f"{path}: unsupported manifest version {doc.get('version')!r}")
    return doc


def check_gallery(manifest_path: str | Path | None = None) -> tuple[list[MaskTemplate], list[Finding]]:
    """Parse and validate every template, collecting findings instead of stopping.

    Returns the templates that passed and all findings.  Manifest-level
    problems (missing file, bad JSON, wrong shape) still raise GalleryError.
    """
    path = _manifest_file(manifest_path)
    doc = _read_manifest(path)
    templates, findings = [], []
    seen = set()
    fixture = canonical_fixture()
    for n, entry in enumerate(doc["templates"]):
        try:
            template = _parse_entry(entry, path.parent, n)
        except GalleryError as exc:
            findings.append(Finding("error", str(exc)))
            continue
        if template.id in seen:
            findings.append(Finding("error", f"template {template.id!r}: duplicate id"))
            continue
        seen.add(template.id)
        found = validate_template(template, fixture)
        findings.extend(found)
        if not any(f.severity == "error" for f in found):
            templates.append(template)
    return templates, findings


def load_gallery(manifest_path: str | Path | None = None) -> list[MaskTemplate]:
    """Load and validate every template listed in a gallery manifest.

    ``manifest_path`` may be the manifest file or its directory; ``None``
    selects the bundled synthetic gallery.  Raises GalleryError naming the
    offending templates on any failure.
    """
    templates, findings = check_gallery(manifest_path)
    errors = [f.message for f in findings if f.severity == "error"]
    if errors:
        raise GalleryError("; ".join(errors))
    return templates


def gallery_id(manifest_path: str | Path | None = None) -> str:
    path = _manifest_file(manifest_path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        doc = {}
    return str(doc.get("id") or path.parent.name)


# --- synthetic templates -------------------------------------------------

_STYLES = {
    "solid-blue": ("solid", (132, 178, 214), (96, 140, 180)),
    "striped-white": ("striped", (214, 216, 220), (150, 154, 162)),
    "gradient-gray": ("gradient", (150, 150, 156), (70, 70, 78)),
    "checked-red": ("checked", (176, 64, 72), (120, 40, 52)),
}


def _template_points(scale: float = 1.6, margin: float = 24.0) -> tuple[np.ndarray, tuple[int, int]]:
    face = canonical_landmarks(250)[list(DEFAULT_FACE_INDICES)]
    lo = face.min(axis=0)
    pts = (face - lo) * scale + margin
    size = (int(math.ceil(pts[:, 0].max() + margin)), int(math.ceil(pts[:, 1].max() + margin)))
    return np.round(pts, 2), size


def _fill(style: str, c1, c2, w: int, h: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    c1 = np.array(c1, dtype=np.float64)
    c2 = np.array(c2, dtype=np.float64)
    if style == "solid":
        t = 0.25 * yy / max(h - 1, 1)
    elif style == "striped":
        t = ((yy // 14) % 2) * 0.6
    elif style == "gradient":
        t = yy / max(h - 1, 1)
    else:
        t = (((xx // 20) + (yy // 20)) % 2).astype(np.float64)
    rgb = c1 * (1 - t[..., None]) + c2 * t[..., None]
    return np.round(rgb).astype(np.uint8)


def synthetic_template(template_id: str) -> MaskTemplate:
    """Procedurally drawn mask raster with the default correspondence layout."""
    style, c1, c2 = _STYLES[template_id]
    pts, (w, h) = _template_points()
    order = [DEFAULT_FACE_INDICES.index(i) for i in (28, *range(1, 15))]
    ss = 4
    canvas = Image.new("L", (w * ss, h * ss), 0)
    center = pts[order].mean(axis=0)
    # Grow the outline so the strip coverage is fully opaque.
    outline = center + (pts[order] - center) * 1.06
    ImageDraw.Draw(canvas).polygon([((x + 0.5) * ss, (y + 0.5) * ss) for x, y in outline], fill=255)
    alpha = np.asarray(canvas.resize((w, h), Image.Resampling.BOX), dtype=np.uint8)
    raster = np.dstack([_fill(style, c1, c2, w, h), alpha])
    return MaskTemplate(template_id, raster, pts, DEFAULT_FACE_INDICES, [style])


def write_synthetic_gallery(directory: str | Path, gallery_name: str = "synthetic") -> Path:
    """Write the procedural templates plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for tid in _STYLES:
        t = synthetic_template(tid)
        write_png(directory / f"{tid}.png", t.raster)
        entries.append(
            {
                "id": tid,
                "raster_path": f"{tid}.png",
                "mask_points": t.mask_points.tolist(),
                "face_indices": list(t.face_indices),
                "style_tags": t.style_tags,
            }
        )
    doc = {"version": MANIFEST_VERSION, "id": gallery_name, "templates": entries}
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path
