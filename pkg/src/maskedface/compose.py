"""Masked-face rendering pipeline.

The steps run in a fixed order: upscale the face, perturb correspondence
points, warp the mask layer, composite, pull the mask lightness toward the
face, blur the mask boundary, downscale.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError
from .geometry import DEFAULT_FACE_INDICES, NOSE, NOSE_BRIDGE, check_landmarks, interocular_distance, warp_mask
from .imaging import (
    check_image,
    composite_alpha,
    gaussian_blur_at,
    gaussian_kernel,
    lab_pixels_to_rgb,
    resize_bilinear,
    resize_window,
    rgb_pixels_to_lab,
    scale_points,
    source_span,
    support_span,
    to_uint8,
)

FOOTPRINT_THRESHOLD = 128
CENTER_REGION_MARGIN = 0.2


@dataclass(frozen=True)
class ComposeParams:
    target_side: int = 500
    alpha: float = 0.6
    beta: int = 5
    perturb_face_top: float = 0.1
    perturb_mask_top: float = 0.1
    seed: int = 0
    output_side: int = 250

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        gaussian_kernel(self.beta)
        if self.output_side < 1 or self.target_side < self.output_side:
            raise ValueError(
                f"target_side ({self.target_side}) must be >= output_side ({self.output_side}) >= 1"
            )
        if self.perturb_face_top < 0 or self.perturb_mask_top < 0:
            raise ValueError("perturbation magnitudes must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class MaskedFaceResult:
    image: np.ndarray
    footprint: np.ndarray
    template_id: str
    seed: int
    face_offset: tuple[float, float]
    mask_offset: tuple[float, float]
    warnings: list[str] = field(default_factory=list)
    band: np.ndarray | None = None
    stages: dict = field(default_factory=dict)

    @property
    def applied_perturbations(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return self.face_offset, self.mask_offset

    def provenance(self) -> dict:
        return {
            "template_id": self.template_id,
            "seed": self.seed,
            "face_offset": list(self.face_offset),
            "mask_offset": list(self.mask_offset),
            "warnings": list(self.warnings),
        }


def derive_seed(seed: int, name: str) -> int:
    """Stable 64-bit seed for a named sub-stream of ``seed``."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _disk_offset(rng: np.random.Generator, radius: float) -> np.ndarray:
    u, v = rng.random(2)
    if radius <= 0:
        return np.zeros(2)
    r = radius * math.sqrt(u)
    theta = 2 * math.pi * v
    return np.array([r * math.cos(theta), r * math.sin(theta)])


def top_point_position(face_indices) -> int:
    """Position of the nose-bridge correspondence, falling back to the first point."""
    face_indices = list(face_indices)
    return face_indices.index(NOSE_BRIDGE) if NOSE_BRIDGE in face_indices else 0


def perturb_landmarks(
    landmarks: np.ndarray,
    mask_points: np.ndarray,
    params: ComposeParams,
    rng: np.random.Generator,
    face_indices=None,
) -> tuple[np.ndarray, np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Jitter the top-of-face landmark and the top-of-mask point.

    Offsets are uniform in a disk whose radius is the perturbation fraction
    times the interocular distance (face) or the mask points' bounding-box
    height (mask).  Both draws are always consumed so the stream position does
    not depend on the magnitudes.
    """
    face_indices = DEFAULT_FACE_INDICES if face_indices is None else face_indices
    landmarks = np.array(landmarks, dtype=np.float64)
    mask_points = np.array(mask_points, dtype=np.float64)
    top = top_point_position(face_indices)
    face_radius = params.perturb_face_top * interocular_distance(landmarks)
    mask_height = float(np.ptp(mask_points[:, 1]))
    mask_radius = params.perturb_mask_top * mask_height
    face_offset = _disk_offset(rng, face_radius)
    mask_offset = _disk_offset(rng, mask_radius)
    landmarks[face_indices[top]] += face_offset
    mask_points[top] += mask_offset
    return landmarks, mask_points, (face_offset, mask_offset)


def center_region(landmarks: np.ndarray, width: int, height: int) -> tuple[slice, slice]:
    """Row/column slices of the nose bounding box grown by 20% per side."""
    nose = np.asarray(landmarks, dtype=np.float64)[NOSE]
    (x0, y0), (x1, y1) = nose.min(axis=0), nose.max(axis=0)
    mx = (x1 - x0) * CENTER_REGION_MARGIN
    my = (y1 - y0) * CENTER_REGION_MARGIN
    c0 = max(math.ceil(x0 - mx), 0)
    c1 = min(math.floor(x1 + mx), width - 1)
    r0 = max(math.ceil(y0 - my), 0)
    r1 = min(math.floor(y1 + my), height - 1)
    if c0 > c1 or r0 > r1:
        raise DegenerateGeometryError("center facial region lies outside the image")
    return slice(r0, r1 + 1), slice(c0, c1 + 1)


def center_region_mean_L(face: np.ndarray, landmarks: np.ndarray) -> float:
    """Mean CIELAB lightness over the central facial region."""
    check_image(face)
    rows, cols = center_region(landmarks, face.shape[1], face.shape[0])
    return float(rgb_pixels_to_lab(face[rows, cols, :3])[..., 0].mean())


def adjust_mask_lightness(
    composited: np.ndarray, footprint: np.ndarray, face_mean_L: float, alpha: float
) -> np.ndarray:
    """Shift the mask's lightness toward ``face_mean_L`` by a fraction ``alpha``.

    Each footprint pixel moves by ``alpha * (face_mean_L - mean mask L)``, so
    the mask's texture contrast is kept.  Chroma and non-footprint pixels are
    left alone.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    out = composited.copy()
    idx = np.flatnonzero(footprint)
    if alpha == 0 or len(idx) == 0:
        return out
    flat = out.reshape(-1, out.shape[-1])
    lab = rgb_pixels_to_lab(np.take(flat[:, :3], idx, axis=0))
    shift = alpha * (face_mean_L - lab[:, 0].mean())
    lab[:, 0] += shift
    np.clip(lab[:, 0], 0.0, 100.0, out=lab[:, 0])
    flat[idx, :3] = lab_pixels_to_rgb(lab)
    return out


def _dilate(binary: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev (square) dilation."""
    if radius <= 0:
        return binary.copy()
    out = binary.copy()
    h, w = binary.shape
    for axis, n in ((0, h), (1, w)):
        src = out
        out = src.copy()
        for d in range(1, radius + 1):
            if d >= n:
                break
            if axis == 0:
                out[d:] |= src[:-d]
                out[:-d] |= src[d:]
            else:
                out[:, d:] |= src[:, :-d]
                out[:, :-d] |= src[:, d:]
    return out


def binary_footprint(footprint: np.ndarray) -> np.ndarray:
    return np.asarray(footprint) >= FOOTPRINT_THRESHOLD


def boundary_band(footprint: np.ndarray, radius: int) -> np.ndarray:
    """Pixels within Chebyshev ``radius`` of the binary footprint edge.

    The edge is the set of pixels on either side of the boundary, i.e. those
    with an 8-neighbour of the opposite label.  A radius of 0 yields an empty
    band.
    """
    fp = binary_footprint(footprint)
    if radius <= 0 or not fp.any() or fp.all():
        return np.zeros(fp.shape, dtype=bool)
    edge = _dilate(fp, 1) & _dilate(~fp, 1)
    return _dilate(edge, radius)


def blur_boundary(img: np.ndarray, footprint: np.ndarray, beta: int) -> np.ndarray:
    """Replace band pixels around the footprint edge by their Gaussian-blurred values."""
    gaussian_kernel(beta)
    radius = (beta - 1) // 2
    band = boundary_band(footprint, radius)
    out = img.copy()
    if not band.any():
        return out
    ys, xs = np.nonzero(band)
    out[ys, xs] = to_uint8(gaussian_blur_at(img, ys, xs, beta))
    return out


def output_band_radius(params: ComposeParams) -> int:
    """Band radius at output scale covering the blur band plus resampling spill.

    Two working-scale pixels of slack absorb the partially transparent rim of
    the warped layer and the bilinear support; one output pixel absorbs the
    shift of the re-binarized edge.
    """
    scale = params.output_side / params.target_side
    return math.ceil(((params.beta - 1) // 2 + 2) * scale) + 1


@dataclass(frozen=True)
class PreparedFace:
    """Per-source quantities shared by every mask rendered onto one face."""

    face: np.ndarray
    landmarks: np.ndarray
    target_side: int
    output_side: int
    mean_L: float
    roundtrip: np.ndarray  # upscale then downscale with no mask applied


def prepare_face(face: np.ndarray, landmarks: np.ndarray, params: ComposeParams = ComposeParams()) -> PreparedFace:
    check_image(face)
    face = face[..., :3]
    landmarks = check_landmarks(landmarks)
    side, out = params.target_side, params.output_side
    roundtrip = resize_bilinear(resize_bilinear(face, side, side), out, out)
    return PreparedFace(face, landmarks, side, out, center_region_mean_L(face, landmarks), roundtrip)


def _span(lo: int, hi: int, n: int) -> tuple[int, int]:
    return max(lo, 0), min(hi, n)


def apply_mask(
    face: np.ndarray,
    landmarks: np.ndarray,
    template,
    params: ComposeParams = ComposeParams(),
    keep_stages: bool = False,
    prepared: PreparedFace | None = None,
) -> MaskedFaceResult:
    """Render ``template`` onto ``face`` and return the masked image with provenance.

    Work after the warp is confined to a window around the mask; pixels
    outside it are taken from the no-mask round trip, which they equal
    exactly.  ``prepared`` (from :func:`prepare_face` with the same face,
    landmarks and sizes) skips recomputing the per-face quantities.
    """
    if prepared is None:
        prepared = prepare_face(face, landmarks, params)
    elif (prepared.target_side, prepared.output_side) != (params.target_side, params.output_side):
        raise ValueError("prepared face was built for different target/output sizes")
    face, landmarks = prepared.face, prepared.landmarks
    h, w = face.shape[:2]
    side, out_side = params.target_side, params.output_side
    work_lm = scale_points(landmarks, (w, h), (side, side))

    rng = np.random.default_rng(params.seed)
    face_indices = list(template.face_indices)
    work_lm, mask_pts, (face_off, mask_off) = perturb_landmarks(
        work_lm, template.mask_points, params, rng, face_indices
    )
    layer, warnings = warp_mask(template.raster, mask_pts, work_lm[face_indices], (side, side))
    alpha_plane = layer[..., 3]

    image = prepared.roundtrip.copy()
    footprint = np.zeros((out_side, out_side), dtype=np.uint8)
    stages = {}
    ys, xs = np.nonzero(alpha_plane)
    if len(ys):
        # Pixels the composite or the blur band may change.
        r = (params.beta - 1) // 2
        my = _span(ys.min() - r - 1, ys.max() + r + 2, side)
        mx = _span(xs.min() - r - 1, xs.max() + r + 2, side)
        orows = source_span(side, out_side, *my)
        ocols = source_span(side, out_side, *mx)
        sy = support_span(side, out_side, *orows)
        sx = support_span(side, out_side, *ocols)
        # Window holding the changed pixels, what the blur reads, and what the downscale reads.
        cy = _span(min(my[0] - r, sy[0]), max(my[1] + r, sy[1]), side)
        cx = _span(min(mx[0] - r, sx[0]), max(mx[1] + r, sx[1]), side)
        win = (slice(*cy), slice(*cx))
        work = to_uint8(resize_window(face, (0, 0), (w, h), (side, side), win[0], win[1]))
        composited = composite_alpha(layer[win], work)
        lit = adjust_mask_lightness(composited, alpha_plane[win], prepared.mean_L, params.alpha)
        blurred = blur_boundary(lit, alpha_plane[win], params.beta)
        orow, ocol = slice(*orows), slice(*ocols)
        origin = (cx[0], cy[0])
        image[orow, ocol] = to_uint8(resize_window(blurred, origin, (side, side), (out_side, out_side), orow, ocol))
        small = to_uint8(resize_window(alpha_plane[win], origin, (side, side), (out_side, out_side), orow, ocol))
        footprint[orow, ocol] = np.where(small >= FOOTPRINT_THRESHOLD, 255, 0)
        if keep_stages:
            full = resize_bilinear(face, side, side)
            stages["work"] = full
            for name, part in (("composited", composited), ("lit", lit), ("blurred", blurred)):
                stages[name] = full.copy()
                stages[name][win] = part
    elif keep_stages:
        full = resize_bilinear(face, side, side)
        stages = {"work": full, "composited": full, "lit": full, "blurred": full}

    result = MaskedFaceResult(
        image=image,
        footprint=footprint,
        template_id=template.id,
        seed=params.seed,
        face_offset=tuple(float(v) for v in face_off),
        mask_offset=tuple(float(v) for v in mask_off),
        warnings=list(warnings),
        band=boundary_band(footprint, output_band_radius(params)),
    )
    if keep_stages:
        stages.update(landmarks=work_lm, mask_points=mask_pts, layer=layer, face_mean_L=prepared.mean_L)
        result.stages = stages
    return result
