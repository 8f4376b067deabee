"""Procedurally drawn faces with known landmarks, for tests and demo builds.

These are cartoons, not photographs: the pipeline only needs a raster and a
68-point layout that agree with each other.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .geometry import canonical_landmarks, write_landmarks
from .imaging import write_png


def _similarity(points: np.ndarray, angle_deg: float, scale: float, shift, center) -> np.ndarray:
    a = math.radians(angle_deg)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]]) * scale
    return (points - center) @ rot.T + center + np.asarray(shift, dtype=np.float64)


def draw_face(landmarks: np.ndarray, size: int, skin, background, rng: np.random.Generator) -> np.ndarray:
    """Render a cartoon face whose features sit on ``landmarks``."""
    img = Image.new("RGB", (size, size), tuple(int(c) for c in background))
    d = ImageDraw.Draw(img)
    lm = [tuple(map(float, p)) for p in landmarks]
    jaw = lm[0:17]
    brow_lift = (np.asarray(lm[19]) - np.asarray(lm[8])) * 0.35
    forehead = [tuple(np.asarray(lm[i]) + brow_lift) for i in (26, 24, 22, 21, 19, 17)]
    skin = tuple(int(c) for c in skin)
    d.polygon(jaw + forehead, fill=skin)
    dark = tuple(max(int(c * 0.45), 0) for c in skin)
    mid = tuple(max(int(c * 0.8), 0) for c in skin)
    d.line(lm[17:22], fill=dark, width=3)
    d.line(lm[22:27], fill=dark, width=3)
    for eye in (lm[36:42], lm[42:48]):
        d.polygon(eye, fill=(245, 245, 245), outline=dark)
        cx = sum(p[0] for p in eye) / 6
        cy = sum(p[1] for p in eye) / 6
        d.ellipse([cx - 3, cy - 3, cx + 3, cy + 3], fill=(40, 30, 30))
    d.line(lm[27:31], fill=mid, width=2)
    d.line(lm[31:36], fill=mid, width=2)
    d.polygon(lm[48:60], fill=(170, 80, 80))
    d.polygon(lm[60:68], fill=(120, 50, 50))
    arr = np.asarray(img, dtype=np.int16)
    noise = rng.integers(-6, 7, size=arr.shape[:2])[..., None]
    return np.clip(arr + noise, 0, 255).astype(np.uint8)


def make_face(rng: np.random.Generator, size: int = 250) -> tuple[np.ndarray, np.ndarray]:
    """One random frontal face and its landmarks."""
    base = canonical_landmarks(size)
    center = base.mean(axis=0)
    lm = _similarity(
        base,
        angle_deg=rng.uniform(-6, 6),
        scale=rng.uniform(0.94, 1.06),
        shift=rng.uniform(-6, 6, size=2),
        center=center,
    )
    skin = rng.uniform([150, 105, 80], [235, 195, 170])
    background = rng.uniform(30, 220, size=3)
    return draw_face(lm, size, skin, background, rng), lm


def write_fixture_set(
    out_dir: str | Path,
    n_identities: int,
    images_per_identity: int,
    n_pairs: int,
    seed: int = 0,
    size: int = 250,
) -> Path:
    """Write images/, landmarks/ and a balanced pairs.txt; returns ``out_dir``.

    Positive pairs are drawn without replacement while unused pairs remain;
    negatives pair images of two different identities.
    """
    if n_pairs % 2:
        raise ValueError("n_pairs must be even (half positive, half negative)")
    if images_per_identity < 2 or n_identities < 2:
        raise ValueError("need at least 2 identities with 2 images each")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "landmarks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    names = []
    for i in range(n_identities):
        ident = []
        for j in range(images_per_identity):
            name = f"Person_{i + 1:04d}_{j + 1:04d}"
            img, lm = make_face(rng, size)
            write_png(out / "images" / f"{name}.png", img)
            write_landmarks(out / "landmarks" / f"{name}.txt", lm)
            ident.append(name)
        names.append(ident)

    half = n_pairs // 2
    candidates = [
        (i, a, b)
        for i in range(n_identities)
        for a in range(images_per_identity)
        for b in range(a + 1, images_per_identity)
    ]
    picks = rng.permutation(len(candidates))
    lines = []
    for k in range(half):
        if k < len(candidates):
            i, a, b = candidates[picks[k]]
        else:
            i = int(rng.integers(n_identities))
            a, b = (int(v) for v in rng.choice(images_per_identity, 2, replace=False))
        lines.append(f"{names[i][a]} {names[i][b]} 1")
    for _ in range(half):
        i, j = (int(v) for v in rng.choice(n_identities, 2, replace=False))
        a, b = (int(v) for v in rng.integers(images_per_identity, size=2))
        lines.append(f"{names[i][a]} {names[j][b]} 0")
    (out / "pairs.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out
