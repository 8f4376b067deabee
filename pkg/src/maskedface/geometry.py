"""Landmarks, strip triangulation, affine estimation and triangle warping."""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometryError, GenerationFailedError
from .imaging import check_image, to_uint8

log = logging.getLogger(__name__)

N_LANDMARKS = 68
N_CORRESPONDENCES = 16
LEFT_EYE = slice(36, 42)
RIGHT_EYE = slice(42, 48)
NOSE = slice(27, 36)
NOSE_BRIDGE = 28

# Nose tip, nose bridge, then a left/right zigzag down the jawline to the chin.
# Sixteen points give fourteen strip triangles.
DEFAULT_FACE_INDICES = (30, 28, 1, 14, 2, 13, 3, 12, 4, 11, 5, 10, 6, 9, 7, 8)

MIN_TRIANGLE_AREA = 1e-6
MAX_SKIPPED_TRIANGLES = 4

# 68-point mean face in unit coordinates (common dlib/OpenFace alignment template).
MEAN_FACE = np.array([
    (0.079239691381, 0.339223741112), (0.082921948723, 0.456955367943),
    (0.096792710916, 0.575648016728), (0.122141515615, 0.691921601066),
    (0.168687863544, 0.800341263616), (0.239789390707, 0.895732504778),
    (0.325662452515, 0.977068762493), (0.422318282013, 1.043290001490),
    (0.531777802068, 1.060803711260), (0.641296298053, 1.039819241070),
    (0.738105872266, 0.972268833998), (0.824444363295, 0.889624082279),
    (0.894792677532, 0.792494155836), (0.939395486253, 0.681546643421),
    (0.961119338290, 0.562238253072), (0.970579841181, 0.441758925744),
    (0.971193274221, 0.322118743967), (0.163846223133, 0.249151738053),
    (0.217803546570, 0.204255863861), (0.291299351124, 0.192367318323),
    (0.367460241458, 0.203582210627), (0.439294511300, 0.233135599851),
    (0.586445962425, 0.228141644834), (0.660152671635, 0.195923841854),
    (0.737466449096, 0.182360984545), (0.813236546239, 0.192828009114),
    (0.870757188600, 0.235293377042), (0.515345338270, 0.318635461930),
    (0.516221448289, 0.396200446263), (0.517118861835, 0.473797687758),
    (0.518164303430, 0.553157797772), (0.433701156035, 0.604054457668),
    (0.475501237769, 0.620763440240), (0.520712933176, 0.634268222208),
    (0.565874114041, 0.618796581487), (0.607054002672, 0.601576716560),
    (0.252418718401, 0.331052263829), (0.298663015648, 0.302646354002),
    (0.355749724218, 0.303020650651), (0.403718978315, 0.338677110830),
    (0.352507175597, 0.349987615384), (0.296791759886, 0.350478978225),
    (0.631326076346, 0.334136672344), (0.679073381078, 0.296454042670),
    (0.735972361530, 0.294721285802), (0.782865376271, 0.321305281656),
    (0.740312274764, 0.341849376713), (0.684998500910, 0.343734332172),
    (0.353167761422, 0.746189164237), (0.414587777921, 0.719053835073),
    (0.477677654595, 0.706835892494), (0.522732900812, 0.717092275768),
    (0.569832064287, 0.705414478982), (0.635195811927, 0.715655725160),
    (0.699516723310, 0.739419187253), (0.639447159575, 0.805236879972),
    (0.576410514055, 0.835436670169), (0.525398405766, 0.841706377792),
    (0.476415457690, 0.837505914975), (0.413795489020, 0.810045601727),
    (0.380084785646, 0.749979603086), (0.477955996282, 0.745132346120),
    (0.523389793327, 0.748924302636), (0.571057789237, 0.743328946910),
    (0.672409137852, 0.744177032192), (0.572539621444, 0.776609286626),
    (0.524010650300, 0.783370783245), (0.477561227414, 0.778476346951),
])


def check_landmarks(points) -> np.ndarray:
    """Return ``points`` as a validated (68, 2) float array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (N_LANDMARKS, 2):
        raise ValueError(f"expected {N_LANDMARKS} landmarks of (x, y), got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("landmarks must be finite")
    if interocular_distance(pts) <= 0:
        raise ValueError("interocular distance must be positive")
    return pts


def interocular_distance(landmarks: np.ndarray) -> float:
    left = landmarks[LEFT_EYE].mean(axis=0)
    right = landmarks[RIGHT_EYE].mean(axis=0)
    return float(np.hypot(*(right - left)))


def canonical_landmarks(size: int = 250, face_width: float = 0.62, center_y: float = 0.55) -> np.ndarray:
    """Frontal 68-point layout centered in a ``size``-square image."""
    mf = MEAN_FACE
    lo, hi = mf.min(axis=0), mf.max(axis=0)
    scale = face_width * size / (hi[0] - lo[0])
    mid = (lo + hi) / 2
    return (mf - mid) * scale + np.array([size / 2 - 0.5, center_y * size - 0.5])


def read_landmarks(path: str | Path) -> np.ndarray:
    """Read a sidecar of 68 ``x y`` lines."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'x y', got {line!r}")
            rows.append((float(parts[0]), float(parts[1])))
    if len(rows) != N_LANDMARKS:
        raise ValueError(f"{path}: expected {N_LANDMARKS} landmarks, found {len(rows)}")
    return check_landmarks(rows)


def write_landmarks(path: str | Path, landmarks: np.ndarray) -> None:
    pts = check_landmarks(landmarks)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x, y in pts:
            fh.write(f"{x:.4f} {y:.4f}\n")


def strip_triangulate(point_count: int) -> list[tuple[int, int, int]]:
    """Triangle strip ``(i, i+1, i+2)`` over an ordered point list."""
    if point_count < 3:
        raise ValueError(f"need at least 3 points for a triangle strip, got {point_count}")
    return [(i, i + 1, i + 2) for i in range(point_count - 2)]


def triangle_area(tri) -> float:
    (x0, y0), (x1, y1), (x2, y2) = np.asarray(tri, dtype=np.float64)
    return 0.5 * abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))


def estimate_affine(src, dst) -> np.ndarray:
    """Exact 2x3 affine mapping three ``src`` points onto three ``dst`` points."""
    src = np.asarray(src, dtype=np.float64).reshape(3, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(3, 2)
    if not triangle_area(src) > MIN_TRIANGLE_AREA:
        raise DegenerateGeometryError(f"source points are collinear: {src.tolist()}")
    system = np.hstack([src, np.ones((3, 1))])
    return np.linalg.solve(system, dst).T


def apply_affine(matrix: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ matrix[:, :2].T + matrix[:, 2]


def _triangle_cover(tri: np.ndarray, width: int, height: int) -> tuple[int, int, np.ndarray]:
    """Coverage of ``tri`` under the top-left fill rule on its clipped bounding box.

    Returns ``(y_lo, x_lo, inside)`` where ``inside[i, j]`` refers to pixel
    center ``(x_lo + j, y_lo + i)``.
    """
    v = tri.copy()
    cross = (v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1]) - (v[2, 0] - v[0, 0]) * (v[1, 1] - v[0, 1])
    if cross < 0:
        v = v[[0, 2, 1]]
    x_lo = max(math.ceil(v[:, 0].min()), 0)
    x_hi = min(math.floor(v[:, 0].max()), width - 1)
    y_lo = max(math.ceil(v[:, 1].min()), 0)
    y_hi = min(math.floor(v[:, 1].max()), height - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return y_lo, x_lo, np.zeros((0, 0), dtype=bool)
    ys = np.arange(y_lo, y_hi + 1, dtype=np.float64)[:, None]
    xs = np.arange(x_lo, x_hi + 1, dtype=np.float64)[None, :]
    inside = None
    for i in range(3):
        x0, y0 = v[i]
        x1, y1 = v[(i + 1) % 3]
        dx, dy = x1 - x0, y1 - y0
        e = dx * (ys - y0) - dy * (xs - x0)
        # Shared edges run in opposite directions in neighbors, so exactly one owns the tie.
        test = e >= 0 if dy < 0 or (dy == 0 and dx > 0) else e > 0
        inside = test if inside is None else inside & test
    return y_lo, x_lo, inside


def _triangle_pixels(tri: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer pixel centers covered by ``tri`` under the top-left fill rule."""
    y_lo, x_lo, inside = _triangle_cover(tri, width, height)
    ys, xs = np.nonzero(inside)
    return ys + y_lo, xs + x_lo


def _gather_rgba(src: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Rows ``idx`` of an (n, 4) uint8 array, gathered as whole 32-bit words."""
    words = np.ascontiguousarray(src).reshape(-1, 4).view(np.uint32).reshape(-1)
    return np.take(words, idx).view(np.uint8).reshape(-1, 4)


def sample_bilinear(src: np.ndarray, xs: np.ndarray, ys: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Bilinear samples of an RGBA raster; out-of-bounds positions are transparent black.

    Interpolation runs in float32, which is exact for 8-bit inputs at integer
    positions and far finer than the final 8-bit rounding elsewhere.
    """
    check_image(src, (4,))
    h, w = src.shape[:2]
    valid = (xs >= -eps) & (xs <= w - 1 + eps) & (ys >= -eps) & (ys <= h - 1 + eps)
    x = np.clip(xs, 0, w - 1)
    y = np.clip(ys, 0, h - 1)
    x0 = x.astype(np.intp)  # non-negative, so truncation is floor
    y0 = y.astype(np.intp)
    fx = (x - x0).astype(np.float32)
    fy = (y - y0).astype(np.float32)
    dx = (x0 < w - 1).astype(np.intp)
    dy = np.where(y0 < h - 1, w, 0)
    i = y0 * w + x0
    # Channel-first so the elementwise loops run along pixels, not channels.
    a = _gather_rgba(src, i).T.astype(np.float32, order="C")
    b = _gather_rgba(src, i + dx).T.astype(np.float32, order="C")
    i += dy
    c = _gather_rgba(src, i).T.astype(np.float32, order="C")
    d = _gather_rgba(src, i + dx).T.astype(np.float32, order="C")
    b -= a
    b *= fx
    a += b
    d -= c
    d *= fx
    c += d
    c -= a
    c *= fy
    a += c
    a[:, ~valid] = 0.0
    return a.T


def warp_triangle(src: np.ndarray, dst: np.ndarray, src_tri, dst_tri) -> bool:
    """Inverse-map the pixels of ``dst_tri`` from ``src_tri`` into ``dst`` in place.

    Returns False (and leaves ``dst`` untouched) when either triangle is
    degenerate.
    """
    check_image(src, (4,))
    check_image(dst, (4,))
    src_tri = np.asarray(src_tri, dtype=np.float64).reshape(3, 2)
    dst_tri = np.asarray(dst_tri, dtype=np.float64).reshape(3, 2)
    if not (triangle_area(dst_tri) > MIN_TRIANGLE_AREA and triangle_area(src_tri) > MIN_TRIANGLE_AREA):
        return False
    inverse = estimate_affine(dst_tri, src_tri)
    ys, xs = _triangle_pixels(dst_tri, dst.shape[1], dst.shape[0])
    if len(xs) == 0:
        return True
    sx = inverse[0, 0] * xs + inverse[0, 1] * ys + inverse[0, 2]
    sy = inverse[1, 0] * xs + inverse[1, 1] * ys + inverse[1, 2]
    dst[ys, xs] = to_uint8(sample_bilinear(src, sx, sy))
    return True


def warp_mask(
    raster: np.ndarray,
    mask_points,
    face_points,
    target_size: tuple[int, int],
) -> tuple[np.ndarray, list[str]]:
    """Warp a mask raster onto a transparent ``(width, height)`` canvas.

    ``mask_points`` and ``face_points`` are the ordered correspondence
    points (mask pixel space and face pixel space).  Triangles are drawn in
    strip order so later ones win on shared edges.  Returns the RGBA layer and
    a list of warnings for skipped triangles.
    """
    mask_points = np.asarray(mask_points, dtype=np.float64)
    face_points = np.asarray(face_points, dtype=np.float64)
    if mask_points.shape != face_points.shape or mask_points.ndim != 2 or mask_points.shape[1] != 2:
        raise ValueError(f"correspondence mismatch: {mask_points.shape} vs {face_points.shape}")
    width, height = target_size
    layer = np.zeros((height, width, 4), dtype=np.uint8)
    # Equivalent to calling warp_triangle in strip order: record which
    # triangle last claimed each pixel, then sample every pixel once.
    triangles = strip_triangulate(len(mask_points))
    # Every triangle pixel lies inside the points' bounding box.
    x_lo = max(math.floor(face_points[:, 0].min()), 0)
    y_lo = max(math.floor(face_points[:, 1].min()), 0)
    x_hi = min(math.ceil(face_points[:, 0].max()) + 1, width)
    y_hi = min(math.ceil(face_points[:, 1].max()) + 1, height)
    owner = np.full((max(y_hi - y_lo, 0), max(x_hi - x_lo, 0)), -1, dtype=np.int32)
    inverses = np.zeros((len(triangles), 2, 3))
    warnings = []
    for n, tri in enumerate(triangles):
        idx = list(tri)
        src_tri, dst_tri = mask_points[idx], face_points[idx]
        if not (triangle_area(dst_tri) > MIN_TRIANGLE_AREA and triangle_area(src_tri) > MIN_TRIANGLE_AREA):
            warnings.append(f"triangle {n} {tri} is degenerate; skipped")
            continue
        inverses[n] = estimate_affine(dst_tri, src_tri)
        ty, tx, inside = _triangle_cover(dst_tri, width, height)
        if inside.size:
            hh, ww = inside.shape
            owner[ty - y_lo : ty - y_lo + hh, tx - x_lo : tx - x_lo + ww][inside] = n
    if len(warnings) > MAX_SKIPPED_TRIANGLES:
        raise GenerationFailedError(
            f"{len(warnings)} of {len(mask_points) - 2} triangles degenerate "
            f"(limit {MAX_SKIPPED_TRIANGLES})"
        )
    for w in warnings:
        log.warning(w)
    hit = np.flatnonzero(owner >= 0)
    if len(hit):
        lab = owner.reshape(-1)[hit]
        ys, xs = np.divmod(hit, owner.shape[1])
        ys += y_lo
        xs += x_lo
        sx = inverses[:, 0, 0][lab] * xs + inverses[:, 0, 1][lab] * ys + inverses[:, 0, 2][lab]
        sy = inverses[:, 1, 0][lab] * xs + inverses[:, 1, 1][lab] * ys + inverses[:, 1, 2][lab]
        layer.reshape(-1, 4)[ys * width + xs] = to_uint8(sample_bilinear(raster, sx, sy))
    return layer, warnings
