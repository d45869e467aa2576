"""End-to-end acceptance checks.

Each test stores ``(passed, detail)`` in ``conftest.ACCEPTANCE`` before it
asserts, so the terminal summary lists every criterion even when one fails.
Set ``INGP_CACHE_DIR`` to keep the ensembles between runs.
"""

import math
import os
import time
import tracemalloc

import numpy as np
import pytest

from ingp.bm_sim import SimConfig, drift_at, simulate_ensemble
from ingp.cache import EnsembleStore
from ingp.config import load_config
from ingp.geometry import ChartDomain, EuclideanDomain, SwissRoll, interior_grid, ushape
from ingp.gp import (Hyperparams, build_covariance_grid, fit, log_marginal_likelihood, predict,
                     psd_repair)
from ingp.heat_kernel import WindowPolicy
from ingp.sparse_gp import (InducingSet, SparseModel, build_sparse_grid, sparse_log_marginal,
                            sparse_predict)
from ingp.workflows import run_benchmark, run_fit, run_predict, run_table1, run_table2

from conftest import ACCEPTANCE, CONFIGS, ensembles_for


@pytest.fixture(scope="module")
def store(tmp_path_factory):
    cache = os.environ.get("INGP_CACHE_DIR") or tmp_path_factory.mktemp("ensembles")
    return EnsembleStore(cache)


def shipped(name, tmp_path):
    cfg = load_config(CONFIGS / name)
    cfg.output = tmp_path / cfg.output.name
    return cfg


def record(k, ok, detail):
    ACCEPTANCE[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.mark.slow
def test_criterion_1_kernel_validation(tmp_path):
    t0 = time.perf_counter()
    summary = dict(run_table1(shipped("table1.yaml", tmp_path)))
    bounds = {300: 0.40, 3000: 0.10, 30000: 0.03}
    ok = all(summary[n] <= b for n, b in bounds.items())
    detail = ", ".join(f"N={n}: {summary[n]:.3f} (<= {b})" for n, b in bounds.items())
    record(1, ok, f"median rel. error {detail}; {time.perf_counter() - t0:.0f}s")


@pytest.mark.slow
def test_criterion_2_hyperparameter_equivalence(tmp_path, store):
    res = run_table2(shipped("table2.yaml", tmp_path), store)
    r = res["rows"]
    l_med, s_med = np.median(r[:, 5]), np.median(r[:, 6])
    ok = (0.8 <= l_med <= 1.5 and 0.6 <= s_med <= 1.3
          and res["p_l"] > 0.05 and res["p_sigma"] > 0.05)
    record(2, ok, f"in-GP median l {l_med:.3f}, sigma {s_med:.3f}; RBF median l "
                  f"{np.median(r[:, 1]):.3f}, sigma {np.median(r[:, 2]):.3f}; "
                  f"rank test p = {res['p_l']:.3f} (l), {res['p_sigma']:.3f} (sigma)")


@pytest.mark.slow
def test_criterion_3_ushape(tmp_path, store):
    hi = run_benchmark(shipped("table3-30db.yaml", tmp_path), store)["rows"]
    lo = run_benchmark(shipped("table3-10db.yaml", tmp_path), store)["rows"]
    a_in, a_gp = hi[:, 1].mean(), hi[:, 2].mean()
    b_in, b_gp = lo[:, 1].mean(), lo[:, 2].mean()
    ok = a_in < 0.5 * a_gp and b_in < b_gp
    record(3, ok, f"30dB rms in-GP {a_in:.3f} vs GP {a_gp:.3f} (ratio {a_in / a_gp:.2f}); "
                  f"10dB {b_in:.3f} vs {b_gp:.3f}")


@pytest.mark.slow
def test_criterion_4_swissroll(tmp_path, store):
    r = run_benchmark(shipped("swissroll.yaml", tmp_path), store)["rows"]
    rin, rgp = r[:, 1].mean(), r[:, 2].mean()
    iin, igp = r[:, 9].mean(), r[:, 10].mean()
    ok = rin < rgp and igp >= 1.5 * iin
    record(4, ok, f"rms in-GP {rin:.3f} vs GP {rgp:.3f}; inner turn {iin:.3f} vs {igp:.3f} "
                  f"(factor {igp / iin:.2f})")


def test_criterion_5_dic_degeneracy():
    dom = ushape()
    pts = interior_grid(dom, 12)
    test = interior_grid(dom, 40)
    ens = ensembles_for(dom, pts, n_paths=3000, n_steps=30, dt=0.02, seed=8)
    pol = WindowPolicy(fixed_w=0.25)
    g = build_covariance_grid(ens, pts, pol, dom, test_points=test)
    sg = build_sparse_grid(ens, pts, pts, pol, dom, test_points=test)
    y = np.sin(pts[:, 0]) + pts[:, 1]
    worst_ll = worst_mean = worst_var = 0.0
    for t in g.t_grid[9::10]:
        hp = Hyperparams(float(t), 1.3, 0.2)
        m = sg.model(hp, floor=0)
        scale = abs(log_marginal_likelihood(g.sigma_at(t), hp, y))
        worst_ll = max(worst_ll, abs(sparse_log_marginal(m, y)
                                     - log_marginal_likelihood(g.sigma_at(t), hp, y)) / scale)
        d = predict(g, hp, y, g.cross_at(t, floor=0), floor=0)
        s = sparse_predict(m, y, sg.cross_at(t))
        worst_mean = max(worst_mean, np.max(np.abs(d.mean - s.mean)))
        # dense variance with the DIC prior Q_** at the test points
        vs = m.project(sg.cross_at(t))
        dv = predict(g, hp, y, g.cross_at(t, floor=0), test_self_cov=vs.T @ vs, floor=0)
        worst_var = max(worst_var, np.max(np.abs(dv.variance - s.variance)))
    ok = worst_ll < 1e-8 and worst_mean < 1e-8 and worst_var < 1e-8
    record(5, ok, f"max |dLL|/|LL| {worst_ll:.1e}, max |d mean| {worst_mean:.1e}, "
                  f"max |d var| {worst_var:.1e}")


def test_criterion_6_sparse_cost():
    r = np.random.default_rng(0)
    m = 42
    a = r.normal(size=(m, m))
    uu = a @ a.T + m * np.eye(m)
    hp = Hyperparams(1.0, 1.0, 0.3)

    def timed(n, reps=7):
        uf = r.normal(size=(m, n))
        y = r.normal(size=n)
        best = math.inf
        for _ in range(reps):
            t0 = time.perf_counter()
            sparse_log_marginal(SparseModel(InducingSet(np.zeros((m, 2))), uu, uf, hp), y)
            best = min(best, time.perf_counter() - t0)
        return best

    n = 100_000
    timed(n // 4, 2)  # warm-up
    ratio = timed(2 * n) / timed(n)

    n_mem = 20_000
    uf = r.normal(size=(m, n_mem))
    y = r.normal(size=n_mem)
    tracemalloc.start()
    try:
        mod = SparseModel(InducingSet(np.zeros((m, 2))), uu, uf, hp)
        sparse_log_marginal(mod, y)
        sparse_predict(mod, y, r.normal(size=(m, 100)))
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    ok = ratio <= 2.5 and peak < n_mem * n_mem * 8
    record(6, ok, f"time(2n)/time(n) = {ratio:.2f} at n={n}, m={m}; peak memory "
                  f"{peak / 1e6:.1f} MB at n={n_mem} (n^2 doubles would be {n_mem**2 * 8 / 1e9:.1f} GB)")


def test_criterion_7_properties():
    notes, ok = [], True

    # increments of flat BM
    ens = simulate_ensemble(EuclideanDomain(2), [0, 0], SimConfig(100_000, 4, 0.25, seed=17))
    inc = np.diff(ens.positions.astype(np.float64), axis=1, prepend=0.0).reshape(-1, 2) / 0.5
    se = 1 / math.sqrt(len(inc))
    good = np.all(np.abs(inc.mean(0)) < 4 * se) and np.all(np.abs(inc.var(0) - 1) < 4 * math.sqrt(2) * se)
    ok &= bool(good)
    notes.append(f"increments mean {np.abs(inc.mean(0)).max():.1e} var {inc.var(0).round(4).tolist()}")

    # drift against the same sums with analytic metric derivatives
    dom = ChartDomain(2, metric=lambda X: np.stack([
        np.stack([np.exp(X[:, 0]), 0.3 * np.ones(len(X))], -1),
        np.stack([0.3 * np.ones(len(X)), 1 + X[:, 1] ** 2], -1)], axis=1))
    worst = 0.0
    for x in np.random.default_rng(1).uniform(-1, 1, size=(20, 2)):
        gi = np.linalg.inv([[math.exp(x[0]), 0.3], [0.3, 1 + x[1] ** 2]])
        dg = [np.array([[math.exp(x[0]), 0], [0, 0]]), np.array([[0, 0], [0, 2 * x[1]]])]
        want = np.array([sum(-(gi @ dg[j] @ gi)[i, j] + 0.5 * gi[i, j] * np.trace(gi @ dg[j])
                             for j in range(2)) for i in range(2)])
        got = drift_at(dom, x)
        worst = max(worst, np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-3)))
    ok &= worst <= 1e-5
    notes.append(f"drift rel err {worst:.1e}")

    # PSD repair
    r = np.random.default_rng(2)
    mins = []
    for _ in range(50):
        a = r.normal(size=(12, 12))
        mins.append(np.linalg.eigvalsh(psd_repair(0.5 * (a + a.T)))[0])
    ok &= min(mins) >= -1e-10
    notes.append(f"repaired min eig {min(mins):.1e}")

    # linearity and argmax invariance on a Monte-Carlo grid
    dom = ushape()
    pts = interior_grid(dom, 15)
    tp = interior_grid(dom, 30)
    g = build_covariance_grid(ensembles_for(dom, pts, n_paths=2000, n_steps=40, dt=0.02),
                              pts, WindowPolicy(fixed_w=0.2), dom, test_points=tp)
    y1 = np.sin(pts[:, 0]) + pts[:, 1] + 0.1 * r.normal(size=len(pts))
    y2 = r.normal(size=len(pts))
    hp = Hyperparams(float(g.t_grid[20]), 1.1, 0.3)
    mean = lambda y: predict(g, hp, y, g.cross_at(hp.t)).mean
    lin = np.max(np.abs(mean(2 * y1 - 0.5 * y2) - (2 * mean(y1) - 0.5 * mean(y2))))
    ok &= lin < 1e-10
    a, b = fit(g, y1), fit(g, 13.0 * y1)
    ok &= a.hp.t == b.hp.t and np.argmax(a.table[:, 1]) == np.argmax(b.table[:, 1])
    notes.append(f"linearity {lin:.1e}, argmax t {a.hp.t:g} / {b.hp.t:g}")

    # every stored position inside, exhaustively
    e = simulate_ensemble(dom, [-0.6, 0.3], SimConfig(3000, 300, 0.01, seed=4))
    inside = dom.inside_batch(e.positions.reshape(-1, 2).astype(np.float64)).all()
    roll = SwissRoll()
    e2 = simulate_ensemble(roll, [5.0, 0.2], SimConfig(2000, 100, 0.5, seed=4))
    inside &= roll.inside_batch(e2.positions.reshape(-1, 2).astype(np.float64)).all()
    ok &= bool(inside)
    notes.append(f"{e.positions.shape[0] * e.positions.shape[1] + e2.positions.shape[0] * e2.positions.shape[1]} positions inside: {bool(inside)}")
    record(7, ok, "; ".join(notes))


@pytest.mark.slow
def test_criterion_8_aral(tmp_path, store):
    means = {}
    only_inducing = True
    for name in ("aral.yaml", "aral-uneven.yaml"):
        cfg = shipped(name, tmp_path)
        before = store.simulated + store.loaded
        out = run_fit(cfg, store)
        used = store.simulated + store.loaded - before
        only_inducing &= used == len(out.model["starts"]) and out.model["kind"] == "sparse"
        pts, inside, pr = run_predict(cfg.output / "model.yaml", cfg.output,
                                      grid_nx=cfg.predict["grid"], variance=True, store=store)
        coords = pts[inside] + np.array(out.model["offset"])
        region = (coords[:, 0] < 59.0) & (coords[:, 1] < 44.8)
        means[name] = float(pr.variance[region].mean())
        n_ind = len(out.model["starts"])
    full, uneven = means["aral.yaml"], means["aral-uneven.yaml"]
    ok = only_inducing and 38 <= n_ind <= 46 and uneven > full
    record(8, ok, f"{n_ind} inducing ensembles only: {only_inducing}; mean variance in the "
                  f"thinned region {full:.4f} -> {uneven:.4f}")
