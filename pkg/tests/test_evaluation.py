import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from maskedface import evaluation as E


def brute_best_threshold(sims, labels, eps=E.THRESHOLD_EPS):
    """Exhaustive scan over the candidate set with a scalar loop."""
    u = sorted(set(float(s) for s in sims))
    cands = [u[0] - eps] + [(u[i] + u[i + 1]) / 2 for i in range(len(u) - 1)] + [u[-1] + eps]
    best_t, best_c = None, -1
    for t in cands:
        c = sum((s >= t) == bool(y) for s, y in zip(sims, labels))
        if c > best_c:
            best_t, best_c = t, c
    return best_t, best_c / len(sims)


def brute_kfold(pairs, folds, table, k=10):
    def cos(u, v):
        return sum(a * b for a, b in zip(u, v)) / math.sqrt(sum(a * a for a in u) * sum(b * b for b in v))

    sims = [cos(table[a], table[b]) for a, b, _ in pairs]
    accs = []
    for f in range(k):
        train = [(s, y) for s, (_, _, y), g in zip(sims, pairs, folds) if g != f]
        test = [(s, y) for s, (_, _, y), g in zip(sims, pairs, folds) if g == f]
        t, _ = brute_best_threshold([s for s, _ in train], [y for _, y in train])
        accs.append(sum((s >= t) == y for s, y in test) / len(test))
    mean = math.fsum(accs) / k
    return accs, mean, math.sqrt(math.fsum((a - mean) ** 2 for a in accs) / k)


def random_table(rng, n_ids=40, d=8):
    return {f"id{i}": rng.normal(size=d) for i in range(n_ids)}


def random_pairs(rng, n=60, n_ids=40):
    pairs = []
    for i in range(n):
        a, b = rng.choice(n_ids, 2, replace=False)
        pairs.append((f"id{a}", f"id{b}", i % 2 == 0))
    return pairs


# --- cosine -----------------------------------------------------------------


def test_cosine_examples():
    assert E.cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert E.cosine_similarity([1, 0], [0, 1]) == 0.0
    assert E.cosine_similarity([1, 2, 3], [4, 5, 6]) == pytest.approx(32 / math.sqrt(14 * 77), abs=1e-12)
    assert E.cosine_similarity([1, 2, 3], [4, 5, 6]) == pytest.approx(0.9746, abs=1e-4)


def test_cosine_errors():
    with pytest.raises(ValueError, match="zero-norm"):
        E.cosine_similarity([0, 0], [1, 0])
    with pytest.raises(ValueError):
        E.cosine_similarity([1, 0], [1, 0, 0])


# --- threshold ----------------------------------------------------------------


def test_best_threshold_separable():
    t, acc = E.best_threshold([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert acc == 1.0 and 0.2 < t <= 0.8


def test_best_threshold_single_class():
    t, acc = E.best_threshold([0.3, 0.5, 0.9], [1, 1, 1])
    assert acc == 1.0 and t == pytest.approx(0.3 - E.THRESHOLD_EPS)
    t, acc = E.best_threshold([0.3, 0.5, 0.9], [0, 0, 0])
    assert acc == 1.0 and t == pytest.approx(0.9 + E.THRESHOLD_EPS)


def test_best_threshold_tie_prefers_smallest():
    # Both thresholds 0.15 and 0.35 give 2/3; the smaller wins.
    t, acc = E.best_threshold([0.1, 0.2, 0.5], [0, 1, 0])
    assert acc == pytest.approx(2 / 3) and t == pytest.approx(0.15)


def test_best_threshold_empty():
    with pytest.raises(ValueError):
        E.best_threshold([], [])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(np.linspace(-1, 1, 21).tolist()), st.booleans()), min_size=1, max_size=50))
def test_best_threshold_matches_exhaustive_scan(samples):
    sims = [s for s, _ in samples]
    labels = [y for _, y in samples]
    assert E.best_threshold(sims, labels) == brute_best_threshold(sims, labels)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.booleans()), min_size=1, max_size=50))
def test_best_threshold_accuracy_invariant_under_monotone_maps(samples):
    sims = np.array([s for s, _ in samples])
    labels = [y for _, y in samples]
    mapped = np.exp(3 * sims)
    # The property needs a strictly increasing map; exp collapses tiny gaps in floating point.
    assume(np.array_equal(np.argsort(sims, kind="stable"), np.argsort(mapped, kind="stable")))
    assume(len(np.unique(mapped)) == len(np.unique(sims)))
    _, acc = E.best_threshold(sims, labels)
    _, acc2 = E.best_threshold(mapped, labels)
    assert acc == acc2


# --- k-fold -------------------------------------------------------------------


def test_kfold_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(20):
        table = random_table(rng)
        pairs = random_pairs(rng)
        folds = [i % 10 for i in range(60)]
        rep = E.kfold_accuracy(pairs, folds, table)
        accs, mean, std = brute_kfold(pairs, folds, table)
        assert [f.accuracy for f in rep.folds] == accs
        assert (rep.mean, rep.std) == (mean, std)


def test_kfold_separable_is_perfect():
    rng = np.random.default_rng(1)
    centers = rng.normal(size=(30, 16))
    table = {}
    pairs = []
    for i in range(30):
        table[f"{i}a"] = centers[i] + 0.01 * rng.normal(size=16)
        table[f"{i}b"] = centers[i] + 0.01 * rng.normal(size=16)
    for i in range(30):
        pairs.append((f"{i}a", f"{i}b", True))
        pairs.append((f"{i}a", f"{(i + 1) % 30}b", False))
    folds = [i % 10 for i in range(60)]
    assert E.kfold_accuracy(pairs, folds, table).mean == 1.0


def test_kfold_shuffled_labels_are_chance():
    rng = np.random.default_rng(2)
    table = random_table(rng, n_ids=200, d=16)
    pairs = random_pairs(rng, n=600, n_ids=200)
    labels = rng.permutation([p[2] for p in pairs])
    pairs = [(a, b, bool(y)) for (a, b, _), y in zip(pairs, labels)]
    folds = [i % 10 for i in range(600)]
    assert 0.45 <= E.kfold_accuracy(pairs, folds, table).mean <= 0.55


def test_kfold_invariant_to_reordering():
    rng = np.random.default_rng(3)
    table = random_table(rng)
    pairs = random_pairs(rng)
    folds = [i % 10 for i in range(60)]
    perm = rng.permutation(60)
    a = E.kfold_accuracy(pairs, folds, table)
    b = E.kfold_accuracy([pairs[i] for i in perm], [folds[i] for i in perm], table)
    assert a == b


def test_kfold_missing_ids_are_listed():
    table = {"a": np.ones(3), "b": np.ones(3)}
    pairs = [("a", "b", True), ("a", "zz", False), ("yy", "b", True)]
    with pytest.raises(KeyError, match="2 ids missing.*yy, zz"):
        E.kfold_accuracy(pairs, [0, 1, 2], table, k=3)


def test_kfold_report_fields():
    rng = np.random.default_rng(4)
    rep = E.kfold_accuracy(random_pairs(rng), [i % 10 for i in range(60)], random_table(rng))
    assert rep.pairs == 60 and len(rep.folds) == 10
    assert rep.mean == pytest.approx(np.mean([f.accuracy for f in rep.folds]), abs=1e-12)
    assert all(0 <= f.accuracy <= 1 for f in rep.folds)
    text = E.format_report(rep)
    assert f"{100 * rep.mean:.2f}%" in text


# --- files ----------------------------------------------------------------------


def test_embedding_text_and_binary_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    table = {f"img_{i:04d}": rng.normal(size=5) for i in range(4)}
    E.write_embeddings_text(tmp_path / "e.txt", table)
    back = E.read_embeddings(tmp_path / "e.txt")
    assert all(np.array_equal(back[k], v) for k, v in table.items())
    E.write_embeddings_binary(tmp_path / "e.bin", table)
    back = E.read_embeddings(tmp_path / "e.bin")
    assert all(np.array_equal(back[k], v.astype(np.float32)) for k, v in table.items())
    raw = (tmp_path / "e.bin").read_bytes()
    assert raw[:4] == (8).to_bytes(4, "little") and raw[4:12] == b"img_0000"
    assert raw[12:16] == (5).to_bytes(4, "little")


def test_embedding_file_errors(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text("a 3 1 2\n")
    with pytest.raises(ValueError, match="declared 3"):
        E.read_embeddings(p)
    p.write_text("a 2 1 2\nb 3 1 2 3\n")
    with pytest.raises(ValueError, match="dimensions differ"):
        E.read_embeddings(p)
    p.write_text("a 2 0 0\n")
    with pytest.raises(ValueError, match="zero norm"):
        E.read_embeddings(p)
    p.write_text("a 2 nan 1\n")
    with pytest.raises(ValueError, match="non-finite"):
        E.read_embeddings(p)
    b = tmp_path / "e.bin"
    E.write_embeddings_binary(b, {"a": np.ones(4)})
    b.write_bytes(b.read_bytes()[:-3])
    with pytest.raises(ValueError, match="truncated"):
        E.read_embeddings(b)


def test_read_pairing_formats(tmp_path):
    p = tmp_path / "pairing.txt"
    p.write_text("x y x_0001 y 1\nu v u v 0\n")
    assert E.read_pairing(p) == [("x_0001", "y", True), ("u", "v", False)]
    p.write_text("x y 1\n")
    assert E.read_pairing(p) == [("x", "y", True)]
    p.write_text("x y z\n")
    with pytest.raises(ValueError, match="label"):
        E.read_pairing(p)
