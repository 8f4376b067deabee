"""Verification-pair dataset construction.

A pair list is split into three scenarios:

1. one face masked (half the pairs, balanced positive/negative),
2. same identity, both masked with *different* templates,
3. different identities, both masked with the *same* template.

The 2:1:1 proportions scale with the input size; 6,000 pairs give
3,000 / 1,500 / 1,500.
"""

from __future__ import annotations

import ctypes
import json
import logging
import os
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .compose import ComposeParams, PreparedFace, apply_mask, derive_seed, prepare_face
from .errors import MaskedFaceError
from .geometry import read_landmarks, write_landmarks
from .imaging import read_image, scale_points, write_png

log = logging.getLogger(__name__)

N_FOLDS = 10
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class Pair:
    name_a: str
    name_b: str
    same_identity: bool


@dataclass
class PairRecord:
    pair_index: int
    name_a: str
    name_b: str
    same_identity: bool
    scenario: int
    masked: tuple[str, ...]  # subset of ("a", "b")
    template_a: str | None = None
    template_b: str | None = None
    seed_a: int | None = None
    seed_b: int | None = None
    out_a: str | None = None
    out_b: str | None = None

    @property
    def mask_count(self) -> int:
        return len(self.masked)

    def file_a(self) -> str:
        return self.out_a or self.name_a

    def file_b(self) -> str:
        return self.out_b or self.name_b


@dataclass
class GenerationPlan:
    seed: int
    records: list[PairRecord]
    gallery_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "gallery_id": self.gallery_id,
            "records": [{**asdict(r), "masked": list(r.masked)} for r in self.records],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> GenerationPlan:
        records = [PairRecord(**{**r, "masked": tuple(r["masked"])}) for r in doc["records"]]
        return cls(seed=doc["seed"], records=records, gallery_id=doc.get("gallery_id"))


@dataclass
class BuildResult:
    artifacts: list[dict]
    errors: list[dict] = field(default_factory=list)


def read_pairs(path: str | Path) -> list[Pair]:
    """Parse ``name_a name_b label`` lines (label 1 = same identity, 0 = different)."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3 or parts[2] not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: expected 'name_a name_b 0|1', got {line!r}")
            pairs.append(Pair(parts[0], parts[1], parts[2] == "1"))
    return pairs


def scenario_sizes(n_pairs: int) -> tuple[int, int, int]:
    quarter = n_pairs // 4
    return 2 * quarter, quarter, quarter


def split_pairs(pairs: list[Pair], seed: int) -> GenerationPlan:
    """Assign each pair to a scenario and choose the masked side for scenario 1."""
    pos = [i for i, p in enumerate(pairs) if p.same_identity]
    neg = [i for i, p in enumerate(pairs) if not p.same_identity]
    n = len(pairs)
    if n == 0 or n % 4 or len(pos) != n // 2 or len(neg) != n // 2:
        raise ValueError(
            f"need a balanced pair list whose size is a multiple of 4; "
            f"got {n} pairs ({len(pos)} positive, {len(neg)} negative)"
        )
    _, s2, s3 = scenario_sizes(n)
    rng = np.random.default_rng(derive_seed(seed, "split"))
    pos = [pos[i] for i in rng.permutation(len(pos))]
    neg = [neg[i] for i in rng.permutation(len(neg))]
    scenario = {}
    for i in pos[:s2]:
        scenario[i] = 2
    for i in neg[:s3]:
        scenario[i] = 3
    for i in pos[s2:] + neg[s3:]:
        scenario[i] = 1
    sides = rng.integers(0, 2, size=n)
    records = []
    for i, p in enumerate(pairs):
        sc = scenario[i]
        masked = ("a", "b") if sc != 1 else (("a",) if sides[i] == 0 else ("b",))
        records.append(PairRecord(i, p.name_a, p.name_b, p.same_identity, sc, masked))
    return GenerationPlan(seed=seed, records=records)


def assign_templates(plan: GenerationPlan, template_ids: list[str], seed: int) -> GenerationPlan:
    """Draw templates uniformly under the scenario constraints, then name outputs.

    Output names append ``_0001``, ``_0002``, ... to the source image name in
    plan order, so one source masked several times gets distinct files.
    """
    template_ids = list(template_ids)
    if not template_ids:
        raise ValueError("gallery is empty")
    if len(template_ids) < 2 and any(r.scenario == 2 for r in plan.records):
        raise ValueError("scenario 2 needs at least 2 templates to mask both faces differently")
    rng = np.random.default_rng(derive_seed(seed, "templates"))
    k = len(template_ids)
    counters: Counter[str] = Counter()
    records = []
    for r in plan.records:
        r = PairRecord(**{**asdict(r), "masked": r.masked})
        if r.scenario == 2:
            a = int(rng.integers(k))
            b = int(rng.integers(k - 1))
            b += b >= a
            r.template_a, r.template_b = template_ids[a], template_ids[b]
        else:
            t = template_ids[int(rng.integers(k))]
            if r.scenario == 3:
                r.template_a = r.template_b = t
            elif r.masked == ("a",):
                r.template_a = t
            else:
                r.template_b = t
        for side in r.masked:
            src = r.name_a if side == "a" else r.name_b
            counters[src] += 1
            out = f"{src}_{counters[src]:04d}"
            if side == "a":
                r.out_a, r.seed_a = out, derive_seed(seed, out)
            else:
                r.out_b, r.seed_b = out, derive_seed(seed, out)
        records.append(r)
    return GenerationPlan(seed=plan.seed, records=records, gallery_id=plan.gallery_id)


def make_folds(plan: GenerationPlan, seed: int, k: int = N_FOLDS) -> list[int]:
    """Balanced fold index per pair.

    Positives and negatives are dealt round-robin separately, each polarity
    ordered by scenario then shuffled within scenario, so every fold also gets
    a near-even share of each scenario.
    """
    recs = plan.records
    n_pos = sum(r.same_identity for r in recs)
    n_neg = len(recs) - n_pos
    if len(recs) % k or n_pos % k or n_neg % k:
        raise ValueError(
            f"cannot split {len(recs)} pairs ({n_pos} positive, {n_neg} negative) "
            f"into {k} balanced folds"
        )
    rng = np.random.default_rng(derive_seed(seed, "folds"))
    folds = [0] * len(recs)
    for polarity in (True, False):
        dealt = []
        for sc in (1, 2, 3):
            group = [r.pair_index for r in recs if r.same_identity == polarity and r.scenario == sc]
            dealt.extend(group[i] for i in rng.permutation(len(group)))
        offset = int(rng.integers(k))
        for j, idx in enumerate(dealt):
            folds[idx] = (j + offset) % k
    return folds


def read_folds(path: str | Path, n_pairs: int) -> list[int]:
    """Parse ``pair_index fold`` lines covering every pair exactly once."""
    folds: dict[int, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'pair_index fold', got {line!r}")
            folds[int(parts[0])] = int(parts[1])
    if sorted(folds) != list(range(n_pairs)):
        raise ValueError(f"{path}: folds must cover pair indices 0..{n_pairs - 1} exactly once")
    return [folds[i] for i in range(n_pairs)]


def write_folds(path: str | Path, folds: list[int]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, f in enumerate(folds):
            fh.write(f"{i} {f}\n")


def write_pairing(path: str | Path, plan: GenerationPlan) -> None:
    """``name_a name_b file_a file_b label`` per pair; files are suffixed when masked."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in plan.records:
            fh.write(f"{r.name_a} {r.name_b} {r.file_a()} {r.file_b()} {int(r.same_identity)}\n")


def statistics(plan: GenerationPlan) -> dict:
    """Pair counts by mask count and polarity, plus scenario sizes."""
    by_masks = defaultdict(lambda: {"positive": 0, "negative": 0})
    for r in plan.records:
        by_masks[r.mask_count]["positive" if r.same_identity else "negative"] += 1
    scenarios = Counter(r.scenario for r in plan.records)
    return {
        "mask_count": {str(k): dict(v) for k, v in sorted(by_masks.items())},
        "scenarios": {str(s): scenarios.get(s, 0) for s in (1, 2, 3)},
        "pairs": len(plan.records),
    }


def format_statistics(stats: dict, folds: list[int] | None = None, plan: GenerationPlan | None = None) -> str:
    lines = ["Mask count | Positive Pair | Negative Pair"]
    for count, v in stats["mask_count"].items():
        lines.append(f"{count:>10} | {v['positive']:>13} | {v['negative']:>13}")
    s = stats["scenarios"]
    lines.append(f"scenarios: 1={s['1']} 2={s['2']} 3={s['3']} (total {stats['pairs']})")
    if folds is not None and plan is not None:
        per = Counter()
        pos = Counter()
        for r, f in zip(plan.records, folds):
            per[f] += 1
            pos[f] += r.same_identity
        sizes = " ".join(f"{per[f]}({pos[f]}+{per[f] - pos[f]})" for f in sorted(per))
        lines.append(f"folds: {sizes}")
    return "\n".join(lines)


def find_image(image_dir: Path, name: str) -> Path:
    for ext in IMAGE_EXTENSIONS:
        p = image_dir / f"{name}{ext}"
        if p.is_file():
            return p
    raise FileNotFoundError(f"no image for {name!r} in {image_dir}")


@dataclass(frozen=True)
class _Task:
    output: str
    source: str
    template_id: str
    seed: int
    pair_index: int
    side: str


_WORKER: dict = {}

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def _keep_freed_memory() -> None:
    """Ask glibc to keep freed frame buffers in the heap.

    Each render allocates and frees many arrays of a few hundred kilobytes.
    By default each one is a fresh mmap whose pages fault in again, which
    costs about a fifth of the build time.  Elsewhere this is a no-op.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(_M_MMAP_THRESHOLD, 32 << 20)
        libc.mallopt(_M_TRIM_THRESHOLD, 256 << 20)
    except (OSError, AttributeError):
        pass


def _init_worker(image_dir, landmark_dir, out_dir, templates, params) -> None:
    _keep_freed_memory()
    _WORKER.update(
        image_dir=Path(image_dir),
        landmark_dir=Path(landmark_dir),
        out_dir=Path(out_dir),
        templates=templates,
        params=params,
        cache=(None, None),
    )


def _load_source(name: str) -> PreparedFace:
    cached_name, cached = _WORKER["cache"]
    if cached_name == name:
        return cached
    face = read_image(find_image(_WORKER["image_dir"], name))
    landmarks = read_landmarks(_WORKER["landmark_dir"] / f"{name}.txt")
    prepared = prepare_face(face, landmarks, _WORKER["params"])
    _WORKER["cache"] = (name, prepared)
    return prepared


def _run_task(task: _Task) -> dict:
    row = asdict(task)
    try:
        prepared = _load_source(task.source)
        template = _WORKER["templates"][task.template_id]
        params = replace(_WORKER["params"], seed=task.seed)
        result = apply_mask(prepared.face, prepared.landmarks, template, params, prepared=prepared)
    except (OSError, ValueError, MaskedFaceError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    out_dir: Path = _WORKER["out_dir"]
    write_png(out_dir / "images" / f"{task.output}.png", result.image)
    h, w = prepared.face.shape[:2]
    side = params.output_side
    write_landmarks(
        out_dir / "landmarks" / f"{task.output}.txt", scale_points(prepared.landmarks, (w, h), (side, side))
    )
    row.update(
        image=f"images/{task.output}.png",
        landmarks=f"landmarks/{task.output}.txt",
        face_offset=list(result.face_offset),
        mask_offset=list(result.mask_offset),
        warnings=result.warnings,
    )
    return row


def plan_tasks(plan: GenerationPlan) -> list[_Task]:
    tasks = []
    for r in plan.records:
        for side in r.masked:
            if side == "a":
                tasks.append(_Task(r.out_a, r.name_a, r.template_a, r.seed_a, r.pair_index, "a"))
            else:
                tasks.append(_Task(r.out_b, r.name_b, r.template_b, r.seed_b, r.pair_index, "b"))
    # Grouping by source lets a worker reuse the decoded face between tasks.
    tasks.sort(key=lambda t: (t.source, t.output))
    return tasks


def generate(
    plan: GenerationPlan,
    image_dir: str | Path,
    landmark_dir: str | Path,
    templates,
    params: ComposeParams,
    out_dir: str | Path,
    jobs: int = 1,
) -> BuildResult:
    """Render every masked face in ``plan`` into ``out_dir``.

    Writes ``images/<name>_NNNN.png`` and ``landmarks/<name>_NNNN.txt``.
    Failures are recorded per pair and do not stop the build.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "landmarks").mkdir(parents=True, exist_ok=True)
    by_id = {t.id: t for t in templates}
    tasks = plan_tasks(plan)
    init = (str(image_dir), str(landmark_dir), str(out), by_id, params)
    if jobs <= 1:
        _init_worker(*init)
        rows = [_run_task(t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (jobs * 8))
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=init) as pool:
            rows = list(pool.map(_run_task, tasks, chunksize=chunk))
    rows.sort(key=lambda r: r["output"])
    artifacts = [r for r in rows if "error" not in r]
    errors = [
        {"pair_index": r["pair_index"], "output": r["output"], "error": r["error"]} for r in rows if "error" in r
    ]
    errors.sort(key=lambda e: (e["pair_index"], e["output"]))
    return BuildResult(artifacts, errors)


def default_jobs() -> int:
    return os.cpu_count() or 1


def build_dataset(
    pairs_path: str | Path,
    image_dir: str | Path,
    landmark_dir: str | Path,
    templates,
    out_dir: str | Path,
    seed: int,
    params: ComposeParams = ComposeParams(),
    gallery_id: str | None = None,
    folds_path: str | Path | None = None,
    jobs: int = 1,
) -> tuple[GenerationPlan, list[int], BuildResult]:
    """Split, assign templates, render, fold, and write every output file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = read_pairs(pairs_path)
    plan = split_pairs(pairs, seed)
    plan.gallery_id = gallery_id
    plan = assign_templates(plan, [t.id for t in templates], seed)
    _write_json(out / "plan.json", plan.to_dict())
    if folds_path is not None:
        folds = read_folds(folds_path, len(plan.records))
    else:
        folds = make_folds(plan, seed)
    result = generate(plan, image_dir, landmark_dir, templates, params, out, jobs=jobs)
    write_pairing(out / "pairing.txt", plan)
    write_folds(out / "folds.txt", folds)
    manifest = {
        "seed": seed,
        "gallery_id": gallery_id,
        "params": asdict(params),
        "statistics": statistics(plan),
        "artifacts": result.artifacts,
        "errors": result.errors,
        "files": ["pairing.txt", "folds.txt", "plan.json"],
    }
    _write_json(out / "manifest.json", manifest)
    return plan, folds, result


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
