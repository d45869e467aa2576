import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ingp.bm_sim import SimConfig, simulate_ensemble
from ingp.geometry import BoxBoundary, EuclideanDomain, SwissRoll
from ingp.heat_kernel import (WindowFallbackWarning, WindowPolicy, clipped_volume,
                              closed_form_kernel, error_budget, estimate_density, hit_counts,
                              kernel_table, min_paths_for_error, optimal_window, r1_validation,
                              taylor_factor, window_volume)


def test_closed_form_values():
    assert closed_form_kernel(1, 0.0, [0.0], 10.0) == pytest.approx(1 / math.sqrt(20 * math.pi))
    assert closed_form_kernel(1, 0.0, [0.0], 10.0) == pytest.approx(0.126157, abs=1e-6)
    assert closed_form_kernel(2, [0, 0], [1, 1], 2.0) == pytest.approx(0.048266, abs=1e-6)
    for d in (1, 3, 5):
        assert closed_form_kernel(d, np.ones(d), np.ones(d), 0.7) == pytest.approx((2 * math.pi * 0.7) ** (-d / 2))
    with pytest.raises(ValueError):
        closed_form_kernel(1, 0.0, [0.0], 0.0)


def test_hit_counts_match_brute_force(rng):
    pos = rng.normal(size=(500, 3, 2)).astype(np.float32)
    targets = rng.uniform(-1, 1, size=(7, 2))
    w = 0.3
    got = hit_counts(pos, targets, w)
    P = pos.astype(np.float64)
    want = np.array([[np.sum(np.all(np.abs(P[:, s] - tg) < w, axis=1)) for tg in targets]
                     for s in range(3)])
    np.testing.assert_array_equal(got, want)


def test_hit_counts_open_window_1d():
    pos = np.array([[[0.5]], [[1.0]], [[1.5]], [[0.99]]], dtype=np.float32)
    # window (0.5, 1.5) is open, so only 1.0 and 0.99 count
    assert hit_counts(pos, [[1.0]], 0.5)[0, 0] == 2


def test_zero_hits_give_zero():
    ens = simulate_ensemble(EuclideanDomain(1), [0.0], SimConfig(100, 2, 0.01))
    est = estimate_density(ens, [50.0], 2, 0.1, EuclideanDomain(1))
    assert est.value == 0.0 and est.zero_hit and est.stderr == 0.0


def test_estimate_2d_within_three_stderr():
    dom = EuclideanDomain(2)
    cfg = SimConfig(40000, 20, 0.05, seed=4)
    ens = simulate_ensemble(dom, [0, 0], cfg)
    t, target = 1.0, np.array([0.5, 0.5])
    A = float(taylor_factor([0, 0], target, t))
    w = optimal_window(0.12, t, cfg.n_paths, 2, A)
    est = estimate_density(ens, target, 20, w, dom)
    truth = math.exp(-0.25) / (2 * math.pi)
    assert truth == pytest.approx(0.12395, abs=1e-5)
    assert est.t == pytest.approx(1.0)
    assert abs(est.value - truth) < 3 * est.stderr


def test_r1_median_error_small():
    rows = r1_validation(30000, seed=1)
    assert rows.shape == (70, 6)
    assert np.all(np.abs(rows[:, 0]) < 9)
    assert np.median(rows[:, 5]) < 0.03


def test_window_volume_flat_and_curved():
    assert window_volume(EuclideanDomain(2), [[0, 0]], 0.5)[0] == pytest.approx(1.0)
    roll = SwissRoll()
    r = 6.0
    assert window_volume(roll, [[r, 3.0]], 0.1)[0] == pytest.approx(0.04 * math.sqrt(1 + r * r))


def test_clipped_volume_at_wall():
    dom = EuclideanDomain(2, BoxBoundary([0, 0], [1, 1]))
    full = clipped_volume(dom, [[0.5, 0.5]], 0.1)[0]
    wall = clipped_volume(dom, [[0.0 + 1e-9, 0.5]], 0.1)[0]
    corner = clipped_volume(dom, [[1e-9, 1e-9]], 0.1)[0]
    assert full == pytest.approx(0.04)
    assert wall == pytest.approx(0.02, rel=0.05)
    assert corner == pytest.approx(0.01, rel=0.1)


def test_error_budget_example():
    dom = EuclideanDomain(1)
    ens = simulate_ensemble(dom, [0.0], SimConfig(2000, 100, 0.1, seed=3))
    est = estimate_density(ens, [0.0], 100, 0.5, dom)
    num, mc = error_budget(est, 1, dom)
    assert num == pytest.approx(-est.value / 240)
    assert mc == est.stderr
    est_small = estimate_density(ens, [0.0], 100, 1e-3, dom)
    assert abs(error_budget(est_small, 1)[0]) < abs(num) * 1e-4


def test_optimal_window_examples():
    w = optimal_window(0.126, 10.0, 30000, 1, 1.0)
    assert 0.05 <= w <= 0.5            # order 1e-1
    assert optimal_window(0.1, 1.0, 100000, 2, 1.0) == pytest.approx(0.2154434690031884)


@settings(max_examples=30, deadline=None)
@given(st.integers(100, 10**7), st.integers(1, 2))
def test_optimal_window_decreases_with_paths(n, d):
    a = optimal_window(0.1, 5.0, n, d, 0.3)
    b = optimal_window(0.1, 5.0, 4 * n, d, 0.3)
    assert b <= a


def test_optimal_window_fallback_warns():
    with pytest.warns(WindowFallbackWarning):
        w = optimal_window(np.array([0.1, 0.1]), 1.0, 1000, 1, np.array([0.0, 1.0]), fixed_w=0.2)
    assert w[0] == 0.2 and w[1] != 0.2
    with pytest.raises(ValueError):
        optimal_window(0.1, 1.0, 1000, 1, 0.0)


def test_min_paths():
    n1 = min_paths_for_error(0.016 * 0.126, 0.126, 10.0, 1.0, 1)
    assert 1e4 <= n1 < 1e5
    assert min_paths_for_error(0.01 * 0.126, 0.126, 10.0, 1.0, 1) > n1
    assert min_paths_for_error(0.005, 0.1, 1.0, 1.0, 2) == 80000
    with pytest.warns(UserWarning, match="d=3"):
        assert min_paths_for_error(0.005, 0.1, 1.0, 1.0, 3) == 80000


def test_kernel_table_shapes_and_optimal_policy():
    dom = EuclideanDomain(1)
    ens = simulate_ensemble(dom, [0.0], SimConfig(5000, 10, 0.1, seed=9))
    targets = np.array([[0.0], [0.5], [1.0]])
    vals, hits, wins = kernel_table(ens, targets, WindowPolicy(fixed_w=0.2), dom)
    assert vals.shape == hits.shape == wins.shape == (10, 3)
    assert np.all(wins == 0.2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        v2, _, w2 = kernel_table(ens, targets, WindowPolicy("optimal", fixed_w=0.2), dom, steps=[5, 10])
    assert v2.shape == (2, 3)
    assert np.all(w2 <= 0.5 * np.sqrt(np.array([[0.5], [1.0]])) + 1e-12)
    truth = closed_form_kernel(1, 0.0, targets, 1.0)
    np.testing.assert_allclose(v2[1], truth, rtol=0.25)
