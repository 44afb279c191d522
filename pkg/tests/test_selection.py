import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthforge.errors import DomainError, SelectionError, ShapeError
from depthforge.io import dump_json, write_disparity, write_tensor
from depthforge.manifest import parse_manifest
from depthforge.oracles import oracle_fps, oracle_pool
from depthforge.provenance import make_rng
from depthforge.selection import (
    DEFAULT_SCHEDULE, DisparityPairProvider, ScoreFileProvider, SelectionConfig, SelectionState,
    class_frequency_report, diversity_distance, pool_features, preprocess_features, run_selection,
    select_step, uncertainty_score,
)
from depthforge.types import DisparityMap, SegMap


def _ids(n):
    return [f"im{k:04d}" for k in range(n)]


def _run_all(vectors: dict, cfg: SelectionConfig, unc: dict | None = None):
    state = SelectionState.initial(vectors)
    for t in range(1, len(cfg.schedule) + 1):
        state = select_step(state, vectors, cfg, unc[t] if t >= 2 else None)
    return state


# -- features -------------------------------------------------------------------------

def test_pool_identity_on_grid_sized_input(rng):
    raw = rng.normal(size=(2, 4, 8))
    assert np.array_equal(pool_features(raw), raw)


def test_pool_matches_oracle(rng):
    raw = rng.normal(size=(16, 64, 32))
    assert np.allclose(pool_features(raw), oracle_pool(raw, 4, 8), rtol=0, atol=1e-12)
    odd = rng.normal(size=(3, 13, 19))
    assert np.allclose(pool_features(odd), oracle_pool(odd, 4, 8), rtol=0, atol=1e-12)


def test_pool_too_small():
    with pytest.raises(ShapeError):
        pool_features(np.zeros((1, 3, 8)))


def test_identical_items_give_zero_embeddings():
    raws = [np.full((2, 8, 16), 3.5) for _ in range(4)]
    assert np.all(preprocess_features(raws) == 0.0)


def test_preprocess_is_per_channel_zscore(rng):
    raws = [rng.normal(size=(3, 4, 8)) * [[[1.0]], [[10.0]], [[0.1]]] for _ in range(6)]
    emb = preprocess_features(raws).reshape(6, 3, 4, 8)
    assert np.allclose(emb.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    assert np.allclose(emb.std(axis=(0, 2, 3)), 1, atol=1e-12)


def test_preprocess_empty():
    with pytest.raises(SelectionError):
        preprocess_features([])


# -- uncertainty ----------------------------------------------------------------------------

def test_uncertainty_examples(rng):
    d = DisparityMap(rng.uniform(0, 2, size=(5, 7)))
    assert uncertainty_score(d, d) == 0.0
    e1 = DisparityMap(np.full((3, 3), math.e - 1))
    assert uncertainty_score(DisparityMap(np.zeros((3, 3))), e1) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ShapeError):
        uncertainty_score(d, DisparityMap(np.zeros((5, 6))))


def test_uncertainty_matches_loop(rng):
    a, b = rng.uniform(0, 3, size=(6, 9)), rng.uniform(0, 3, size=(6, 9))
    ref = sum(abs(math.log(1 + x) - math.log(1 + y)) for x, y in zip(a.ravel(), b.ravel())) / a.size
    assert abs(uncertainty_score(DisparityMap(a), DisparityMap(b)) - ref) < 1e-9


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_uncertainty_is_a_metric(seed):
    r = np.random.default_rng(seed)
    a, b, c = (DisparityMap(r.uniform(0, 5, size=(4, 4))) for _ in range(3))
    assert uncertainty_score(a, b) == uncertainty_score(b, a)
    assert uncertainty_score(a, c) <= uncertainty_score(a, b) + uncertainty_score(b, c) + 1e-12


# -- diversity ---------------------------------------------------------------------------------

def test_diversity_examples(rng):
    assert diversity_distance([1, 0], [[0, 0], [5, 0]]) == 1.0
    pts = rng.normal(size=(50, 6))
    assert diversity_distance(pts[3], pts) == 0.0
    x = rng.normal(size=6)
    ref = min(math.sqrt(sum((u - v) ** 2 for u, v in zip(x, p))) for p in pts)
    assert abs(diversity_distance(x, pts) - ref) < 1e-12
    with pytest.raises(SelectionError):
        diversity_distance(x, [])


# -- greedy selection -----------------------------------------------------------------------

def test_collinear_order():
    vectors = {"a": [0.0], "b": [1.0], "c": [10.0]}
    state = SelectionState(("a", "b", "c"), ("a",), 0)
    out = select_step(state, vectors, SelectionConfig((3,)))
    assert out.selected == ("a", "c", "b")
    assert oracle_fps(vectors, "a", (3,)) == ["a", "c", "b"]


def test_twenty_points_match_oracle(rng):
    ids = _ids(20)
    vectors = {i: rng.normal(size=5) for i in ids}
    cfg = SelectionConfig((4, 9, 20), 1000.0, seed=11)
    unc = {t: {i: float(rng.uniform(0, 0.01)) for i in ids} for t in (2, 3)}
    got = _run_all(vectors, cfg, unc)
    first = ids[int(make_rng(11).integers(20))]
    assert list(got.selected) == oracle_fps(vectors, first, cfg.schedule, unc, 1000.0)


def test_lambda_zero_equals_pure_diversity(rng):
    ids = _ids(30)
    vectors = {i: rng.normal(size=3) for i in ids}
    unc = {t: {i: 0.5 for i in ids} for t in (2, 3)}
    mixed = _run_all(vectors, SelectionConfig((5, 10, 15), 0.0, 2), unc)
    pure = select_step(SelectionState.initial(ids), vectors, SelectionConfig((15,), 0.0, 2))
    assert mixed.selected == pure.selected


def test_uniform_uncertainty_does_not_change_order(rng):
    ids = _ids(30)
    vectors = {i: rng.normal(size=3) for i in ids}
    unc = {t: {i: 0.25 for i in ids} for t in (2,)}
    a = _run_all(vectors, SelectionConfig((5, 12), 1000.0, 4), unc)
    b = select_step(SelectionState.initial(ids), vectors, SelectionConfig((12,), 0.0, 4))
    assert a.selected == b.selected


def test_missing_uncertainty_raises(rng):
    ids = _ids(10)
    vectors = {i: rng.normal(size=2) for i in ids}
    cfg = SelectionConfig((3, 6))
    s1 = select_step(SelectionState.initial(ids), vectors, cfg)
    with pytest.raises(SelectionError):
        select_step(s1, vectors, cfg, None)
    with pytest.raises(SelectionError):
        select_step(s1, vectors, cfg, {ids[0]: 1.0})


def test_schedule_errors():
    with pytest.raises(DomainError):
        SelectionConfig((5, 5))
    with pytest.raises(DomainError):
        SelectionConfig(())
    with pytest.raises(DomainError):
        SelectionConfig((3,), -1.0)
    with pytest.raises(SelectionError):
        select_step(SelectionState.initial(["a", "b"]), {"a": [0], "b": [1]}, SelectionConfig((3,)))
    with pytest.raises(SelectionError):
        SelectionState.initial(["a", "a"])


def test_full_budget_selects_everything(rng):
    ids = _ids(12)
    vectors = {i: rng.normal(size=2) for i in ids}
    out = select_step(SelectionState.initial(ids), vectors, SelectionConfig((12,)))
    assert sorted(out.selected) == ids and out.remaining == ()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 40), st.sampled_from([0.0, 1.0, 1000.0]))
def test_partition_and_maximality(seed, n, lam):
    r = np.random.default_rng(seed)
    ids = _ids(n)
    vectors = {i: r.normal(size=4) for i in ids}
    sched = tuple(sorted({max(1, n // 4), max(2, n // 2), n}))
    cfg = SelectionConfig(sched, lam, seed)
    unc = {t: {i: float(r.uniform(0, 0.01)) for i in ids} for t in range(2, len(sched) + 1)}
    state = SelectionState.initial(ids)
    for t in range(1, len(sched) + 1):
        state = select_step(state, vectors, cfg, unc.get(t))
        assert set(state.selected).isdisjoint(state.remaining)
        assert set(state.selected) | set(state.remaining) == set(ids)
        assert len(set(state.selected)) == len(state.selected) == sched[t - 1]
    # maximality: replay each pick and rescan every remaining id
    mat = {i: np.asarray(v) for i, v in vectors.items()}
    sel = [state.selected[0]]
    for k, pick in enumerate(state.selected[1:], start=2):
        t = next(s for s, size in enumerate(sched, start=1) if k <= size)

        def score(i):
            d = min(float(np.linalg.norm(mat[i] - mat[s])) for s in sel)
            return d + (lam * unc[t][i] if t >= 2 else 0.0)

        best = max(score(i) for i in ids if i not in sel)
        assert score(pick) >= best - 1e-9
        sel.append(pick)


def test_determinism(rng):
    ids = _ids(40)
    vectors = {i: rng.normal(size=3) for i in ids}
    cfg = SelectionConfig((10,), seed=5)
    a = select_step(SelectionState.initial(ids), vectors, cfg)
    b = select_step(SelectionState.initial(list(reversed(ids))), dict(reversed(vectors.items())), cfg)
    assert a.selected == b.selected


def test_planted_clusters_are_covered_first():
    r = np.random.default_rng(8)
    centers = r.normal(size=(10, 4)) * 100
    vectors = {f"c{c}_{k:02d}": centers[c] + r.uniform(-0.5, 0.5, 4) for c in range(10) for k in range(20)}
    out = select_step(SelectionState.initial(vectors), vectors, SelectionConfig((10,), seed=3))
    assert len({s.split("_")[0] for s in out.selected}) == 10


# -- run_selection ---------------------------------------------------------------------------

def _feature_manifest(tmp, n, rng):
    entries = []
    (tmp / "f").mkdir()
    for i in _ids(n):
        write_tensor(rng.normal(size=(2, 4, 8)), tmp / "f" / f"{i}.dft1")
        entries.append({"id": i, "domain": "target", "labeled": False, "image": "x.png",
                        "disparity": f"d/{i}.png", "feature": f"f/{i}.dft1"})
    return parse_manifest({"num_classes": 19, "entries": entries}, tmp, check_files=False)


def test_default_schedule_on_2975_ids(tmp_path, rng):
    man = _feature_manifest(tmp_path, 2975, rng)
    ids = man.ids()
    scores = {i: float(rng.uniform(0, 0.01)) for i in ids}
    state, docs = run_selection(man, SelectionConfig(DEFAULT_SCHEDULE), lambda t, s: scores, tmp_path / "out")
    files = sorted((tmp_path / "out").glob("selected_step*.json"))
    assert len(files) == 6
    assert [d["count"] for d in docs] == [25, 50, 100, 200, 372, 744]
    assert [len(d["selected"]) for d in docs] == [25, 50, 100, 200, 372, 744]
    for a, b in zip(docs, docs[1:]):
        assert b["selected"][:len(a["selected"])] == a["selected"]


def test_provider_failure_keeps_partial_output(tmp_path, rng):
    man = _feature_manifest(tmp_path, 30, rng)
    prov = ScoreFileProvider(tmp_path / "scores")  # directory does not exist
    with pytest.raises(SelectionError):
        run_selection(man, SelectionConfig((5, 10)), prov, tmp_path / "out")
    assert [p.name for p in (tmp_path / "out").iterdir()] == ["selected_step1.json"]


def test_score_file_and_disparity_providers(tmp_path, rng):
    man = _feature_manifest(tmp_path, 6, rng)
    (tmp_path / "d").mkdir()
    (tmp_path / "u").mkdir()
    for i in man.ids():
        write_disparity(DisparityMap(np.full((2, 2), 0.5)), tmp_path / "d" / f"{i}.png")
        write_disparity(DisparityMap(np.zeros((2, 2))), tmp_path / "u" / f"{i}.png")
    state = SelectionState.initial(man.ids())
    scores = DisparityPairProvider(tmp_path / "u", man)(2, state)
    assert all(v == pytest.approx(math.log(1.5)) for v in scores.values())
    dump_json({"scores": {"im0000": 2}}, tmp_path / "u" / "step2.json")
    assert ScoreFileProvider(tmp_path / "u")(2, state) == {"im0000": 2.0}


# -- statistics ----------------------------------------------------------------------------

def test_frequency_report_examples():
    a = SegMap(np.array([[0, 0], [1, 255]]), 3)
    b = SegMap(np.array([[1, 1], [1, 0]]), 3)
    rep = class_frequency_report([a, b], [a, b])
    assert [r["ratio"] for r in rep] == [1.0, 1.0, None]
    rep = class_frequency_report([a], [a, b])
    assert rep[0] == {"class": 0, "selected_pixels": 2, "total_pixels": 3, "ratio": 2 / 3}
    assert rep[1]["ratio"] == 0.25
    with pytest.raises(ShapeError):
        class_frequency_report([a], [SegMap(np.zeros((1, 1), int), 4)])
