import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from homove.gp import Dataset, GpHyper, GpModel
from homove.turbo import (
    L_INIT, L_MAX, L_MIN, BoRunConfig, TrustRegion, gen_candidates, mix_init, random_search, read_trace, resize,
    run_bo, select_next, side_lengths,
)


# --- geometry ---

def test_side_lengths_hand_example():
    np.testing.assert_allclose(side_lengths(0.8, [1.0, 4.0]), [0.4, 1.6], atol=1e-15)


def test_equal_lengthscales_give_cube():
    np.testing.assert_allclose(side_lengths(0.3, np.full(7, 0.9)), 0.3, atol=1e-15)


@pytest.mark.parametrize("seed", range(100))
def test_volume_identity(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 61))
    L = float(rng.uniform(L_MIN, L_MAX))
    ls = np.exp(rng.uniform(np.log(0.005), np.log(2.0), d))
    Li = side_lengths(L, ls)
    assert math.exp(np.log(Li).sum() - d * math.log(L)) == pytest.approx(1.0, abs=1e-12)


def test_side_lengths_reject_non_positive():
    with pytest.raises(ValueError):
        side_lengths(0.8, [1.0, 0.0])


# --- resize schedule ---

def _run(tr, outcomes):
    for ok in outcomes:
        tr = resize(tr, ok)
    return tr


def test_three_successes_double_to_cap():
    tr = _run(TrustRegion(np.full(3, 0.5)), [True] * 3)
    assert tr.length == 1.6 == L_MAX
    assert tr.succ_count == tr.fail_count == 0


def test_two_successes_do_nothing():
    tr = _run(TrustRegion(np.full(3, 0.5)), [True] * 2)
    assert tr.length == L_INIT and tr.succ_count == 2


def test_fifteen_failures_halve():
    tr = _run(TrustRegion(np.full(3, 0.5)), [False] * 14)
    assert tr.length == L_INIT and tr.fail_count == 14
    tr = resize(tr, False)
    assert tr.length == 0.4 and tr.fail_count == 0


def test_success_resets_failure_streak():
    tr = _run(TrustRegion(np.full(2, 0.5)), [False] * 14 + [True] + [False] * 14)
    assert tr.length == L_INIT and tr.fail_count == 14 and tr.succ_count == 0


def test_collapse_flags_restart():
    tr = TrustRegion(np.full(2, 0.5))
    lengths = []
    while not tr.restart_pending:
        tr = _run(tr, [False] * 15)
        lengths.append(tr.length)
    # 0.8 / 2^k first drops below 2^-7 at k = 7
    assert lengths[-1] == pytest.approx(0.8 / 2 ** 7) and lengths[-1] < L_MIN
    assert all(v >= L_MIN for v in lengths[:-1])


def test_per_dim_lengths_scale_with_base():
    tr = TrustRegion(np.full(2, 0.5), lengths=np.array([0.4, 1.6]))
    tr = _run(tr, [False] * 15)
    np.testing.assert_allclose(tr.lengths, [0.2, 0.8])


# --- candidates and selection ---

def _model(d, n=8, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    return GpModel(X, np.sum((X - 0.5) ** 2, 1), GpHyper(np.full(d, 0.5), 1.0, 1e-3, 0.0))


@given(st.integers(0, 1000), st.floats(0.01, 1.6))
def test_candidates_inside_box(seed, L):
    rng = np.random.default_rng(seed)
    tr = TrustRegion(rng.random(5), L)
    cand = gen_candidates(tr, None, rng, 100)
    lo, hi = tr.box()
    assert cand.shape == (100, 5)
    assert np.all(cand >= lo) and np.all(cand <= hi)
    assert np.all(cand >= 0) and np.all(cand <= 1)


def test_perturbation_count_at_d60():
    rng = np.random.default_rng(1)
    tr = TrustRegion(np.full(60, 0.5), 0.8)
    cand = gen_candidates(tr, None, rng, 500)
    n_pert = (cand != 0.5).sum(1)
    assert abs(n_pert.mean() - 20.0) <= 2.0


def test_full_box_low_dim_covers_cube():
    tr = TrustRegion(np.full(2, 0.5), 2.0)
    cand = gen_candidates(tr, None, np.random.default_rng(0), 512)
    hist, _, _ = np.histogram2d(cand[:, 0], cand[:, 1], bins=4, range=[[0, 1], [0, 1]])
    assert hist.min() >= 16


def test_candidates_use_model_lengthscales():
    m = GpModel(np.zeros((0, 2)), np.zeros(0), GpHyper(np.array([1.0, 4.0]), 1.0, 0.01))
    tr = TrustRegion(np.full(2, 0.5), 0.8)
    gen_candidates(tr, m, np.random.default_rng(0), 10)
    np.testing.assert_allclose(tr.lengths, [0.4, 1.6])


def test_single_candidate_is_selected():
    assert select_next(_model(3), np.full((1, 3), 0.2), np.random.default_rng(0)) == 0


def test_dominant_candidate_selected():
    X = np.array([[0.1], [0.3], [0.5], [0.7], [0.9]])
    y = np.array([0.0, 0.0, -10.0, 0.0, 0.0])
    model = GpModel(X, y, GpHyper(np.array([0.05]), 1.0, 1e-6, 0.0))
    cand = np.vstack([np.linspace(0, 1, 49)[:, None], [[0.5]]])
    hits = sum(select_next(model, cand, np.random.default_rng(s)) in (24, 49) for s in range(100))
    assert hits > 95


def test_selection_deterministic():
    m = _model(4)
    cand = np.random.default_rng(3).random((500, 4))
    assert select_next(m, cand, np.random.default_rng(7)) == select_next(m, cand, np.random.default_rng(7))


# --- loop ---

def _sphere(x):
    return float(np.sum((x - 0.3) ** 2))


def test_budget_equal_to_init_returns_best_design():
    res = run_bo(_sphere, BoRunConfig(d=3, budget=6, seed=2))
    assert len(res.trace) == 6 and all(r["phase"] == "init" for r in res.trace)
    assert res.best_y == min(r["y"] for r in res.trace)


def test_best_trace_monotone_and_points_in_cube():
    res = run_bo(_sphere, BoRunConfig(d=4, budget=40, seed=0))
    best = res.best_curve
    assert np.all(np.diff(best) <= 0)
    X = np.array([r["x"] for r in res.trace])
    assert np.all((X >= 0) & (X <= 1))
    assert len(res.trace) == 40


def test_run_is_deterministic():
    a = run_bo(_sphere, BoRunConfig(d=3, budget=25, seed=5))
    b = run_bo(_sphere, BoRunConfig(d=3, budget=25, seed=5))
    assert [r["y"] for r in a.trace] == [r["y"] for r in b.trace]


def test_failing_evaluations_are_recorded_and_skipped():
    calls = {"n": 0}

    def flaky(x):
        calls["n"] += 1
        if calls["n"] % 4 == 0:
            raise RuntimeError("simulator crashed")
        return _sphere(x)

    res = run_bo(flaky, BoRunConfig(d=2, budget=20, seed=0))
    assert len(res.trace) == 20
    failed = [r for r in res.trace if math.isnan(r["y"])]
    assert len(failed) == 5 and all("simulator crashed" in r["kpi_error"] for r in failed)
    assert res.dataset.n == 15


def test_restart_keeps_global_best():
    cfg = BoRunConfig(d=2, budget=60, seed=1, tau_fail=1, l_min=0.3)
    res = run_bo(_sphere, cfg)
    assert res.n_restarts >= 1
    best = res.best_curve
    assert np.all(np.diff(best) <= 0)


def test_vanilla_mode_runs_without_trust_region():
    res = run_bo(_sphere, BoRunConfig(d=2, budget=15, seed=0, use_trust_region=False))
    assert len(res.trace) == 15 and res.n_restarts == 0


@pytest.mark.parametrize("seed", range(20))
def test_convex_quadratic_budget_200(seed):
    res = run_bo(_sphere, BoRunConfig(d=10, budget=200, seed=seed, refit_every=25, hyper_every=5))
    assert res.best_y <= 0.01


def test_beats_random_search_on_quadratic():
    bo = run_bo(_sphere, BoRunConfig(d=5, budget=60, seed=0))
    rs = random_search(_sphere, 5, 60, seed=0)
    assert bo.best_y < rs.best_y


def test_artifacts_written(tmp_path):
    res = run_bo(_sphere, BoRunConfig(d=2, budget=8, seed=0), out_dir=tmp_path)
    assert {p.name for p in tmp_path.iterdir()} >= {"config.json", "trace.csv", "dataset.json"}
    rows = list(csv.DictReader(open(tmp_path / "trace.csv")))
    assert len(rows) == 8 and float(rows[-1]["best"]) == pytest.approx(res.best_y, rel=1e-6)
    assert len(read_trace(tmp_path / "trace.csv")) == 8
    assert Dataset.load(tmp_path / "dataset.json").n == 8


# --- transfer mixing ---

def _ds(n, offset, tag_bounds=None):
    X = np.linspace(0, 1, n)[:, None] * np.ones((1, 2))
    return Dataset(X, np.arange(n) + offset, tag_bounds or {"lower": [0, 0], "upper": [1, 1]})


def test_mix_half():
    mixed = mix_init(_ds(60, 1000), _ds(60, 0), 0.5, 60)
    assert mixed.n == 60 and mixed.origin.count("target") == 30 and mixed.origin.count("source") == 30
    np.testing.assert_array_equal(mixed.y[:30], np.arange(30))
    # most recent source rows first
    np.testing.assert_array_equal(mixed.y[30:], 1000 + np.arange(59, 29, -1))


def test_mix_extremes():
    src, tgt = _ds(60, 1000), _ds(60, 0)
    full_t = mix_init(src, tgt, 1.0, 60)
    full_s = mix_init(src, tgt, 0.0, 60)
    np.testing.assert_array_equal(full_t.y, tgt.y)
    assert set(full_s.origin) == {"source"} and sorted(full_s.y) == sorted(src.y)


def test_mix_errors():
    with pytest.raises(ValueError):
        mix_init(_ds(10, 0), _ds(60, 0), 0.5, 60)
    with pytest.raises(ValueError):
        mix_init(_ds(60, 0, {"lower": [1]}), _ds(60, 0), 0.5, 60)
    with pytest.raises(ValueError):
        mix_init(_ds(60, 0), _ds(60, 0), 1.5, 60)


def test_source_rows_never_reported_as_best():
    init = mix_init(Dataset(np.full((5, 2), 0.3), np.full(5, -100.0)), _ds(5, 0), 0.5, 6)
    res = run_bo(_sphere, BoRunConfig(d=2, budget=5, seed=0), init=init)
    assert res.best_y > -100.0
