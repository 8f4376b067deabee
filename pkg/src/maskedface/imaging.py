"""Pixel-level primitives.

Images are ``numpy.uint8`` arrays of shape ``(height, width, channels)`` with
channels in R, G, B[, A] order.  Single-channel planes (alpha footprints) are
``(height, width)`` arrays.  Arithmetic runs in floating point (float32 for
resampling, float64 elsewhere) and is rounded half away from zero only when
storing back to 8 bits.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

# sRGB primaries, D65 white (IEC 61966-2-1)
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
D65_WHITE = _RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0


def check_image(img: np.ndarray, channels: tuple[int, ...] = (3, 4)) -> np.ndarray:
    """Validate an image buffer and return it unchanged."""
    if not isinstance(img, np.ndarray) or img.dtype != np.uint8:
        raise ValueError("image must be a uint8 numpy array")
    if img.ndim != 3 or img.shape[2] not in channels:
        raise ValueError(f"image must have shape (h, w, c) with c in {channels}, got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    return img


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Round half away from zero and clamp into [0, 255]."""
    # Negative inputs clamp to 0 under either rounding direction, so
    # floor(v + 0.5) is equivalent here.
    v = np.asarray(values)
    v = v.copy() if v.dtype in (np.float32, np.float64) else v.astype(np.float64)
    v += 0.5
    np.floor(v, out=v)
    np.clip(v, 0, 255, out=v)
    return v.astype(np.uint8)


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_float(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize returning unrounded float32 samples.

    Rows are interpolated first, then columns.  float32 halves the memory
    traffic of the full-frame resizes, which dominate runtime.
    """
    img = np.asarray(img)
    return resize_window(img, (0, 0), (img.shape[1], img.shape[0]), (out_w, out_h))


def resize_window(
    window: np.ndarray,
    origin: tuple[int, int],
    in_size: tuple[int, int],
    out_size: tuple[int, int],
    rows: slice | None = None,
    cols: slice | None = None,
) -> np.ndarray:
    """Output pixels ``[rows, cols]`` of a bilinear resize from ``in_size`` to ``out_size``.

    Only the sub-image ``window`` of the source is supplied; it starts at
    ``origin`` = (x, y) and must cover every source pixel the requested
    outputs read.  Values are bit-identical to the same pixels of a
    full-frame resize.  Sizes are ``(width, height)``.
    """
    out_w, out_h = out_size
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    w, h = in_size
    ox, oy = origin
    rows = slice(0, out_h) if rows is None else rows
    cols = slice(0, out_w) if cols is None else cols
    data = np.asarray(window).astype(np.float32)
    extra = (1,) * (data.ndim - 2)
    if h == out_h:
        data = data[rows.start - oy : rows.stop - oy]
    else:
        y0, y1, wy = (a[rows] for a in _axis_weights(h, out_h))
        top = data[y0 - oy]
        data = data[y1 - oy]
        data -= top
        data *= wy.astype(np.float32).reshape((-1, 1) + extra)
        data += top
    if w == out_w:
        data = data[:, cols.start - ox : cols.stop - ox]
    else:
        x0, x1, wx = (a[cols] for a in _axis_weights(w, out_w))
        left = np.take(data, x0 - ox, axis=1)
        data = np.take(data, x1 - ox, axis=1)
        data -= left
        # Repeat the weights per channel so the multiply runs along whole rows.
        channels = int(np.prod(data.shape[2:], dtype=np.intp))
        rows_view = data.reshape(data.shape[0], -1)
        rows_view *= np.repeat(wx.astype(np.float32), channels)
        data += left
    return data


def source_span(n_in: int, n_out: int, lo: int, hi: int) -> tuple[int, int] | None:
    """Output indices [a, b) whose bilinear support touches source indices [lo, hi)."""
    i0, i1, _ = _axis_weights(n_in, n_out)
    hit = np.nonzero(((i0 >= lo) & (i0 < hi)) | ((i1 >= lo) & (i1 < hi)))[0]
    if len(hit) == 0:
        return None
    return int(hit[0]), int(hit[-1]) + 1


def support_span(n_in: int, n_out: int, a: int, b: int) -> tuple[int, int]:
    """Source indices [lo, hi) read by output indices [a, b)."""
    i0, i1, _ = _axis_weights(n_in, n_out)
    return int(i0[a:b].min()), int(i1[a:b].max()) + 1


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Resize with bilinear sampling, edge clamping and pixel-center alignment.

    Works on both (h, w, c) images and (h, w) planes.
    """
    if img.ndim not in (2, 3):
        raise ValueError(f"expected a 2-D plane or 3-D image, got shape {img.shape}")
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    if img.shape[1] == out_w and img.shape[0] == out_h:
        return img.copy()
    return to_uint8(resize_float(img, out_w, out_h))


def scale_points(points: np.ndarray, in_size: tuple[int, int], out_size: tuple[int, int]) -> np.ndarray:
    """Map pixel coordinates between two raster sizes under center alignment.

    Sizes are ``(width, height)``; a pixel's center sits on integer coordinates.
    """
    pts = np.asarray(points, dtype=np.float64)
    sx = out_size[0] / in_size[0]
    sy = out_size[1] / in_size[1]
    out = np.empty_like(pts)
    out[..., 0] = (pts[..., 0] + 0.5) * sx - 0.5
    out[..., 1] = (pts[..., 1] + 0.5) * sy - 0.5
    return out


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


_LINEAR_LUT = _srgb_to_linear(np.arange(256) / 255.0)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and compand; works in place on float arrays."""
    np.clip(c, 0.0, 1.0, out=c)
    low = c <= 0.0031308
    low_vals = c[low] * 12.92
    np.power(c, 1.0 / 2.4, out=c)
    c *= 1.055
    c -= 0.055
    c[low] = low_vals
    return c


def _lab_f(t: np.ndarray) -> np.ndarray:
    f = np.cbrt(t)
    low = t <= _DELTA**3
    f[low] = t[low] / (3 * _DELTA**2) + 4.0 / 29.0
    return f


def _lab_finv(t: np.ndarray) -> np.ndarray:
    out = t * t
    out *= t
    low = t <= _DELTA
    out[low] = 3 * _DELTA**2 * (t[low] - 4.0 / 29.0)
    return out


# White-point normalisation folded into the matrices.
_RGB_TO_XYZN_T = (_RGB_TO_XYZ / D65_WHITE[:, None]).T
_XYZN_TO_RGB_T = (_XYZ_TO_RGB * D65_WHITE[None, :]).T


def rgb_pixels_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert an (..., 3) array of 8-bit RGB values to CIE L*a*b* (D65)."""
    rgb = np.asarray(rgb)
    if rgb.dtype == np.uint8:
        lin = _LINEAR_LUT[rgb]
    else:
        lin = _srgb_to_linear(rgb.astype(np.float64) / 255.0)
    f = _lab_f(lin @ _RGB_TO_XYZN_T)
    lab = np.empty_like(f)
    np.multiply(f[..., 1], 116.0, out=lab[..., 0])
    lab[..., 0] -= 16.0
    np.subtract(f[..., 0], f[..., 1], out=lab[..., 1])
    lab[..., 1] *= 500.0
    np.subtract(f[..., 1], f[..., 2], out=lab[..., 2])
    lab[..., 2] *= 200.0
    return lab


def lab_pixels_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_pixels_to_lab`; returns clamped uint8 RGB."""
    lab = np.asarray(lab, dtype=np.float64)
    f = np.empty_like(lab)
    fy = f[..., 1]
    np.add(lab[..., 0], 16.0, out=fy)
    fy /= 116.0
    np.divide(lab[..., 1], 500.0, out=f[..., 0])
    f[..., 0] += fy
    np.divide(lab[..., 2], -200.0, out=f[..., 2])
    f[..., 2] += fy
    lin = _lab_finv(f) @ _XYZN_TO_RGB_T
    srgb = _linear_to_srgb(lin)
    srgb *= 255.0
    return to_uint8(srgb)


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """Per-pixel sRGB to L*a*b*.

    Returns a float64 plane with the same channel count as ``img``; an alpha
    channel, if present, is carried through unchanged as the fourth channel.
    """
    check_image(img)
    out = np.empty(img.shape, dtype=np.float64)
    out[..., :3] = rgb_pixels_to_lab(img[..., :3])
    if img.shape[2] == 4:
        out[..., 3] = img[..., 3]
    return out


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_lab`, clamping to the 8-bit range."""
    lab = np.asarray(lab, dtype=np.float64)
    if lab.ndim != 3 or lab.shape[2] not in (3, 4):
        raise ValueError(f"expected an (h, w, 3|4) Lab plane, got {lab.shape}")
    out = np.empty(lab.shape, dtype=np.uint8)
    out[..., :3] = lab_pixels_to_rgb(lab[..., :3])
    if lab.shape[2] == 4:
        out[..., 3] = to_uint8(lab[..., 3])
    return out


def kernel_sigma(size: int) -> float:
    return 0.3 * ((size - 1) * 0.5 - 1) + 0.8


def gaussian_kernel(size: int) -> np.ndarray:
    """Normalized, symmetric 1-D Gaussian coefficients for an odd ``size``."""
    if isinstance(size, bool) or not isinstance(size, (int, np.integer)) or size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size!r}")
    sigma = kernel_sigma(int(size))
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _convolve_axis(data: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    n = data.shape[axis]
    pad = [(0, 0)] * data.ndim
    pad[axis] = (r, r)
    padded = np.pad(data, pad, mode="symmetric")
    out = np.zeros_like(data)
    index = [slice(None)] * data.ndim
    for i, c in enumerate(kernel):
        index[axis] = slice(i, i + n)
        out += c * padded[tuple(index)]
    return out


def gaussian_blur_float(img: np.ndarray, kernel_size: int) -> np.ndarray:
    kernel = gaussian_kernel(kernel_size)
    data = np.asarray(img, dtype=np.float64)
    if kernel_size == 1:
        return data.copy()
    return _convolve_axis(_convolve_axis(data, kernel, 1), kernel, 0)


def _reflect_index(i: np.ndarray, n: int) -> np.ndarray:
    """Half-sample symmetric reflection (``cba|abcd|dcb``) of indices into ``range(n)``."""
    i = np.mod(i, 2 * n)
    return np.where(i >= n, 2 * n - 1 - i, i)


def gaussian_blur_at(img: np.ndarray, ys: np.ndarray, xs: np.ndarray, kernel_size: int) -> np.ndarray:
    """Blurred float values at selected pixels only.

    Accumulates in the same order as :func:`gaussian_blur_float`, so the
    result is bit-identical to indexing the whole-image blur.
    """
    kernel = gaussian_kernel(kernel_size)
    h, w = img.shape[:2]
    offsets = np.arange(kernel_size) - kernel_size // 2
    rows = _reflect_index(ys[:, None] + offsets, h)
    cols = _reflect_index(xs[:, None] + offsets, w)
    data = np.asarray(img)
    flat = data.reshape((h * w,) + data.shape[2:])
    vertical = np.zeros((len(ys),) + data.shape[2:], dtype=np.float64)
    horizontal = np.empty_like(vertical)
    term = np.empty_like(vertical)
    for i, ci in enumerate(kernel):
        base = rows[:, i] * w
        horizontal[...] = 0.0
        for j, cj in enumerate(kernel):
            np.multiply(cj, np.take(flat, base + cols[:, j], axis=0), out=term)
            horizontal += term
        horizontal *= ci
        vertical += horizontal
    return vertical


def gaussian_blur(img: np.ndarray, kernel_size: int) -> np.ndarray:
    """Separable Gaussian blur with half-sample reflected borders.

    The border mirrors about the pixel edge (``cba|abcd|dcb``), which keeps
    the blur matrix symmetric and so preserves the image mean exactly.

    Sigma is derived from the kernel size so that a single odd integer
    controls the filter; ``kernel_size=1`` is the identity.
    """
    gaussian_kernel(kernel_size)
    if kernel_size == 1:
        return img.copy()
    return to_uint8(gaussian_blur_float(img, kernel_size))


def composite_alpha(fg: np.ndarray, bg: np.ndarray) -> np.ndarray:
    """Blend an RGBA foreground over an RGB background."""
    check_image(fg, (4,))
    check_image(bg, (3, 4))
    if fg.shape[:2] != bg.shape[:2]:
        raise ValueError(f"size mismatch: foreground {fg.shape[:2]} vs background {bg.shape[:2]}")
    out = np.ascontiguousarray(bg[..., :3]).copy()
    # Zero-alpha pixels reproduce bg exactly, so only covered pixels are blended.
    idx = np.flatnonzero(fg[..., 3])
    if len(idx) == 0:
        return out
    flat = out.reshape(-1, 3)
    # Channel-first so the elementwise loops run along pixels, not channels.
    f = np.take(fg.reshape(-1, 4), idx, axis=0).T.astype(np.float64, order="C")
    b = np.take(flat, idx, axis=0).T.astype(np.float64, order="C")
    a = f[3] / 255.0
    fa = f[:3]
    fa *= a
    b *= 1.0 - a
    fa += b
    flat[idx] = to_uint8(fa).T
    return out


def read_image(path: str | Path, mode: str = "RGB") -> np.ndarray:
    """Load a PNG/JPEG file as an RGB or RGBA uint8 array."""
    with Image.open(path) as im:
        return np.array(im.convert(mode), dtype=np.uint8)


def write_png(path: str | Path, img: np.ndarray) -> None:
    arr = np.ascontiguousarray(img, dtype=np.uint8)
    Image.fromarray(arr).save(path, format="PNG", compress_level=3)
