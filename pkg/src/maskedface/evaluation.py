"""Ten-fold face-verification accuracy over externally supplied embeddings.

For each fold the decision threshold is fitted on the other folds and
accuracy is measured on the held-out one.  Similarity is cosine.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

THRESHOLD_EPS = 1e-6


@dataclass(frozen=True)
class FoldResult:
    fold: int
    threshold: float
    accuracy: float
    pairs: int


@dataclass(frozen=True)
class VerificationReport:
    folds: list[FoldResult]
    mean: float
    std: float
    pairs: int

    def to_dict(self) -> dict:
        return {
            "folds": [asdict(f) for f in self.folds],
            "mean_accuracy": self.mean,
            "std_accuracy": self.std,
            "pairs": self.pairs,
        }


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"vectors must be 1-D with equal length, got {u.shape} and {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity is undefined for a zero-norm vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def threshold_candidates(similarities) -> np.ndarray:
    """Midpoints of consecutive sorted unique values, plus one value beyond each end."""
    u = np.unique(np.asarray(similarities, dtype=np.float64))
    mids = (u[:-1] + u[1:]) / 2
    return np.concatenate([[u[0] - THRESHOLD_EPS], mids, [u[-1] + THRESHOLD_EPS]])


def best_threshold(similarities, labels) -> tuple[float, float]:
    """Threshold maximising accuracy when predicting "same" iff ``sim >= threshold``.

    Ties go to the smallest candidate.  Returns ``(threshold, accuracy)``.
    """
    s = np.asarray(similarities, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.ndim != 1 or s.shape != y.shape:
        raise ValueError(f"similarities and labels must be 1-D of equal length, got {s.shape}, {y.shape}")
    if len(s) == 0:
        raise ValueError("best_threshold needs at least one sample")
    if not np.isfinite(s).all():
        raise ValueError("similarities must be finite")
    cands = threshold_candidates(s)
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    pos_below = np.concatenate([[0], np.cumsum(y[order])])
    below = np.searchsorted(s_sorted, cands, side="left")
    n_pos = int(y.sum())
    # correct = positives at or above t + negatives below t
    correct = (n_pos - pos_below[below]) + (below - pos_below[below])
    best = int(np.argmax(correct))
    return float(cands[best]), float(correct[best]) / len(s)


def accuracy_at(similarities, labels, threshold: float) -> float:
    s = np.asarray(similarities, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    return float(np.count_nonzero((s >= threshold) == y)) / len(s)


def pair_similarities(pairs, table: dict[str, np.ndarray]) -> np.ndarray:
    """Cosine similarity per ``(id_a, id_b, label)`` pair; missing ids raise KeyError."""
    missing = sorted({i for a, b, _ in pairs for i in (a, b) if i not in table})
    if missing:
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        raise KeyError(f"{len(missing)} ids missing from the embedding table: {shown}")
    return np.array([cosine_similarity(table[a], table[b]) for a, b, _ in pairs])


def kfold_accuracy(pairs, folds, table: dict[str, np.ndarray], k: int = 10) -> VerificationReport:
    """Per-fold threshold on the other folds, accuracy on the held-out fold.

    ``pairs`` holds ``(id_a, id_b, same_identity)`` triples and ``folds`` the
    fold index of each pair.  The standard deviation is the population one.
    Both are computed with correctly rounded sums, so they do not depend on
    summation order.
    """
    folds = np.asarray(folds, dtype=np.int64)
    if len(folds) != len(pairs):
        raise ValueError(f"{len(pairs)} pairs but {len(folds)} fold entries")
    if len(pairs) and (folds.min() < 0 or folds.max() >= k):
        raise ValueError(f"fold indices must lie in [0, {k - 1}]")
    labels = np.array([bool(lab) for _, _, lab in pairs])
    sims = pair_similarities(pairs, table)
    results = []
    for f in range(k):
        test = folds == f
        if not test.any() or test.all():
            raise ValueError(f"fold {f} must hold some but not all pairs")
        t, _ = best_threshold(sims[~test], labels[~test])
        results.append(FoldResult(f, t, accuracy_at(sims[test], labels[test], t), int(test.sum())))
    accs = [r.accuracy for r in results]
    mean = math.fsum(accs) / k
    std = math.sqrt(math.fsum((a - mean) ** 2 for a in accs) / k)
    return VerificationReport(results, mean, std, len(pairs))


def format_report(report: VerificationReport) -> str:
    lines = ["fold  pairs  threshold  accuracy"]
    for r in report.folds:
        lines.append(f"{r.fold:>4}  {r.pairs:>5}  {r.threshold:>9.5f}  {100 * r.accuracy:>7.2f}%")
    lines.append(f"mean accuracy: {100 * report.mean:.2f}% +- {100 * report.std:.2f}% over {report.pairs} pairs")
    return "\n".join(lines)


# --- files -----------------------------------------------------------------


def read_pairing(path: str | Path) -> list[tuple[str, str, bool]]:
    """Read ``(id_a, id_b, same)`` triples.

    Accepts the five-column pairing file (``name_a name_b file_a file_b
    label``, ids taken from the file columns) or three-column pair lists.
    """
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) == 5:
                a, b, label = parts[2], parts[3], parts[4]
            elif len(parts) == 3:
                a, b, label = parts
            else:
                raise ValueError(f"{path}:{lineno}: expected 3 or 5 columns, got {len(parts)}")
            if label not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            out.append((a, b, label == "1"))
    return out


def _check_table(table: dict[str, np.ndarray], source) -> dict[str, np.ndarray]:
    dims = {v.shape for v in table.values()}
    if len(dims) > 1:
        raise ValueError(f"{source}: embedding dimensions differ: {sorted(d[0] for d in dims)}")
    for key, v in table.items():
        if not np.isfinite(v).all():
            raise ValueError(f"{source}: embedding {key!r} has non-finite values")
        if not v.any():
            raise ValueError(f"{source}: embedding {key!r} has zero norm")
    return table


def read_embeddings_text(path: str | Path) -> dict[str, np.ndarray]:
    """One record per line: ``image-id d v1 ... vd``."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                d = int(parts[1])
                vec = np.array([float(x) for x in parts[2:]], dtype=np.float64)
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed embedding record") from exc
            if len(vec) != d:
                raise ValueError(f"{path}:{lineno}: declared {d} values, found {len(vec)}")
            if parts[0] in table:
                raise ValueError(f"{path}:{lineno}: duplicate id {parts[0]!r}")
            table[parts[0]] = vec
    return _check_table(table, path)


def write_embeddings_text(path: str | Path, table: dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, vec in table.items():
            fh.write(f"{key} {len(vec)} " + " ".join(repr(float(x)) for x in vec) + "\n")


# Binary record: u32 id length, UTF-8 id, u32 dimension, dimension x float32; all little-endian.
_U32 = struct.Struct("<I")


def write_embeddings_binary(path: str | Path, table: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        for key, vec in table.items():
            raw = key.encode("utf-8")
            fh.write(_U32.pack(len(raw)) + raw + _U32.pack(len(vec)))
            fh.write(np.asarray(vec, dtype="<f4").tobytes())


def read_embeddings_binary(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    table = {}
    pos = 0
    while pos < len(data):
        try:
            (n,) = _U32.unpack_from(data, pos)
            key = data[pos + 4 : pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (d,) = _U32.unpack_from(data, pos)
            pos += 4
        except (struct.error, UnicodeDecodeError) as exc:
            raise ValueError(f"{path}: truncated or corrupt record at byte {pos}") from exc
        if pos + 4 * d > len(data):
            raise ValueError(f"{path}: record {key!r} is truncated")
        table[key] = np.frombuffer(data, dtype="<f4", count=d, offset=pos).astype(np.float64)
        pos += 4 * d
    return _check_table(table, path)


def read_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    """Binary layout for ``.bin`` files, text records otherwise."""
    if Path(path).suffix == ".bin":
        return read_embeddings_binary(path)
    return read_embeddings_text(path)

