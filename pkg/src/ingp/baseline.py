"""Euclidean RBF-kernel GP and the benchmark test functions.

Test functions
--------------
U-shape
    ``f = (-6 + 12 a / L) * (1 - 0.4 rho^2)`` where ``a`` is arc length along
    the centreline (lower arm ``y = -1`` from its right tip, then the radius-1
    semicircle about ``(0.5, 0)``, then the upper arm ``y = 1``), ``L = 6 + pi``
    is the centreline length and ``rho`` the signed offset from the centreline
    (``|rho| <= 0.5``).  So ``f = -6`` at the lower-right tip, ``+6`` at the
    upper-right tip and 0 at the middle of the bend.
Swiss roll
    ``f = 3 cos(pi u) + 0.8 sin(pi z / 5)`` on the chart ``(r, z)``, where
    ``u`` in [0, 1] is the normalised arc length of the spiral
    ``(r cos r, r sin r)`` from the inner edge.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .errors import ConfigError, DomainError, FitError
from .geometry import USHAPE_ARM_END, USHAPE_CENTER, SwissRoll, interior_grid, ushape
from .gp import Predictive

USHAPE_LENGTH = 6.0 + math.pi


@dataclass(frozen=True)
class RbfParams:
    l: float
    sigma_r: float

    def __post_init__(self):
        if not (self.l > 0 and self.sigma_r > 0):
            raise ConfigError("RBF length-scale and magnitude must be > 0")


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    n_train: int = 20
    noise_sd: float = 0.1
    grid_size: int = 450
    seed: int = 0

    def __post_init__(self):
        if self.name not in ("ushape", "swissroll"):
            raise ConfigError(f"unknown benchmark {self.name!r}")
        if self.n_train < 2:
            raise ConfigError("n_train must be >= 2")

    def domain(self):
        return ushape() if self.name == "ushape" else SwissRoll()


def rbf_kernel(x1, x2, p):
    """``sigma_r^2 exp(-|x1 - x2|^2 / (2 l^2))``; broadcasts over leading axes."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape[-1] != x2.shape[-1]:
        raise ValueError("points have different dimensions")
    r2 = np.sum((x1 - x2) ** 2, axis=-1)
    return p.sigma_r**2 * np.exp(-r2 / (2 * p.l**2))


def sq_dists(a, b):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    d2 = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2 * a @ b.T
    return np.maximum(d2, 0.0)


def rbf_gram(a, b, p):
    return p.sigma_r**2 * np.exp(-sq_dists(a, b) / (2 * p.l**2))


@dataclass(frozen=True)
class RbfFit:
    params: RbfParams
    sigma_noise: float
    log_likelihood: float
    starts: tuple  # (x0, final negll or None, message) per start


def _negll(theta, d2, y):
    l2 = math.exp(2 * theta[0])
    sr2 = math.exp(2 * theta[1])
    sn2 = math.exp(2 * theta[2])
    n = len(y)
    R = np.exp(-d2 / (2 * l2))
    K = sr2 * R
    K[np.diag_indices(n)] += sn2
    try:
        cf = linalg.cho_factor(K, lower=True)
    except linalg.LinAlgError:
        return np.inf, np.zeros(3)
    alpha = linalg.cho_solve(cf, y)
    f = 0.5 * y @ alpha + np.sum(np.log(np.diag(cf[0]))) + 0.5 * n * math.log(2 * math.pi)
    W = linalg.cho_solve(cf, np.eye(n)) - np.outer(alpha, alpha)
    g_l = 0.5 * np.sum(W * (sr2 * R * d2 / l2))
    g_r = 0.5 * np.sum(W * (2 * K - 2 * sn2 * np.eye(n)))
    g_n = 0.5 * np.trace(W) * 2 * sn2
    return f, np.array([g_l, g_r, g_n])


def fit_rbf(X, y, init=None, noise_init=None):
    """Type-II ML for ``(l, sigma_r, sigma_noise)`` by multi-start L-BFGS-B."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    d2 = sq_dists(X, X)
    span = float(np.sqrt(d2.max())) or 1.0
    s = float(np.std(y)) or 1.0
    init = init or RbfParams(0.2 * span, s)
    n0 = noise_init or 0.1 * s
    bounds = [(math.log(1e-3 * span), math.log(10 * span)),
              (math.log(1e-3 * s), math.log(1e3 * s)),
              (math.log(1e-4 * s), math.log(10 * s))]
    starts = [(init.l, init.sigma_r, n0), (0.3 * init.l, init.sigma_r, 0.3 * n0),
              (3 * init.l, init.sigma_r, n0)]
    best, log_ = None, []
    for x0 in starts:
        th0 = np.clip(np.log(x0), [b[0] for b in bounds], [b[1] for b in bounds])
        try:
            res = optimize.minimize(_negll, th0, args=(d2, y), jac=True, method="L-BFGS-B",
                                    bounds=bounds)
        except (ValueError, FloatingPointError) as exc:
            log_.append((x0, None, str(exc)))
            continue
        log_.append((x0, float(res.fun) if np.isfinite(res.fun) else None, str(res.message)))
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise FitError(f"all RBF optimiser starts diverged: {log_}")
    l, sr, sn = np.exp(best.x)
    return RbfFit(RbfParams(float(l), float(sr)), float(sn), float(-best.fun), tuple(log_))


def rbf_predict(X, y, Xs, params, sigma_noise, variance=True):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    K = rbf_gram(X, X, params) + sigma_noise**2 * np.eye(len(y))
    cf = linalg.cho_factor(K, lower=True)
    ks = rbf_gram(X, Xs, params)
    mean = ks.T @ linalg.cho_solve(cf, y)
    if not variance:
        return Predictive(mean=mean)
    v = linalg.solve_triangular(cf[0], ks, lower=True)
    var = params.sigma_r**2 - np.sum(v * v, axis=0)
    return Predictive(mean=mean, variance=np.maximum(var, 0.0),
                      n_clipped=int(np.count_nonzero(var < 0)))


def gp_fit_predict_rbf(train_points, y, test_points, init=None):
    """Fit the RBF GP to ambient coordinates and predict; returns ``(Predictive, RbfFit)``."""
    fit = fit_rbf(train_points, y, init)
    return rbf_predict(train_points, y, test_points, fit.params, fit.sigma_noise), fit


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------

def ushape_coords(X):
    """Centreline arc length ``a`` and signed offset ``rho`` for U-shape points."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cx, cy = USHAPE_CENTER
    x, y = X[:, 0] - cx, X[:, 1] - cy
    arm = USHAPE_ARM_END - cx
    a = np.empty(len(X))
    rho = np.empty(len(X))
    lower = (x >= 0) & (y < 0)
    upper = (x >= 0) & (y >= 0)
    bend = x < 0
    a[lower] = arm - x[lower]
    rho[lower] = y[lower] + 1
    theta = np.mod(np.arctan2(y[bend], x[bend]), 2 * np.pi)
    a[bend] = arm + (1.5 * np.pi - theta)
    rho[bend] = np.hypot(x[bend], y[bend]) - 1
    a[upper] = arm + np.pi + x[upper]
    rho[upper] = y[upper] - 1
    return a, rho


def spiral_arclength(r):
    r = np.asarray(r, dtype=float)
    return 0.5 * (r * np.sqrt(1 + r * r) + np.arcsinh(r))


def benchmark_truth(spec, points):
    """Test-function values at chart points; raises if any point is outside."""
    name = spec if isinstance(spec, str) else spec.name
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if name == "ushape":
        dom = ushape()
    elif name == "swissroll":
        dom = SwissRoll()
    else:
        raise ConfigError(f"unknown benchmark {name!r}")
    out = ~dom.inside_batch(X)
    if np.any(out):
        raise DomainError(f"{int(out.sum())} point(s) outside the {name} domain, "
                          f"first at row {int(np.flatnonzero(out)[0])}")
    if name == "ushape":
        a, rho = ushape_coords(X)
        return (-6 + 12 * a / USHAPE_LENGTH) * (1 - 0.4 * rho**2)
    r0, r1 = dom.r_range
    s0, s1 = spiral_arclength(r0), spiral_arclength(r1)
    u = (spiral_arclength(X[:, 0]) - s0) / (s1 - s0)
    return 3 * np.cos(np.pi * u) + 0.8 * np.sin(np.pi * X[:, 1] / 5)


def noise_sd_for_db(spec_name, snr_db, grid_size=450):
    """Noise sd giving ``snr_db`` relative to the test function's sd on the test grid."""
    _, _, _, f_grid = benchmark_design(BenchmarkSpec(spec_name, grid_size=grid_size))
    return float(np.std(f_grid) * 10 ** (-snr_db / 20))


def ushape_point(a, rho):
    """Chart point at centreline arc length ``a`` and offset ``rho``."""
    a = np.asarray(a, dtype=float)
    rho = np.asarray(rho, dtype=float)
    cx, cy = USHAPE_CENTER
    arm = USHAPE_ARM_END - cx
    theta = 1.5 * np.pi - (a - arm)
    x = np.where(a < arm, cx + arm - a,
                 np.where(a > arm + np.pi, cx + a - arm - np.pi, cx + (1 + rho) * np.cos(theta)))
    y = np.where(a < arm, cy - 1 + rho,
                 np.where(a > arm + np.pi, cy + 1 + rho, cy + (1 + rho) * np.sin(theta)))
    return np.column_stack([x, y])


def spiral_radius(s):
    """Inverse of :func:`spiral_arclength` by Newton iteration."""
    s = np.asarray(s, dtype=float)
    r = np.sqrt(2 * s)
    for _ in range(50):
        r = r - (spiral_arclength(r) - s) / np.sqrt(1 + r * r)
    return r


def xy_grid(domain, n, bounds=None):
    """Exactly ``n`` interior points of a regular ``nx`` by ``ny`` grid.

    Among all cell-centred grids with ``n`` interior points the one with the
    most nearly square cells is used.
    """
    lo, hi = (np.asarray(b, dtype=float) for b in (bounds or domain.bounds()))
    span = hi - lo
    best = None
    for nx in range(1, 4 * n + 1):
        for ny in range(1, 4 * n + 1):
            ax = lo[0] + (np.arange(nx) + 0.5) * span[0] / nx
            ay = lo[1] + (np.arange(ny) + 0.5) * span[1] / ny
            mesh = np.stack(np.meshgrid(ax, ay, indexing="ij"), axis=-1).reshape(-1, 2)
            pts = mesh[domain.inside_batch(mesh)]
            if len(pts) == n:
                skew = abs(math.log((span[0] / nx) / (span[1] / ny)))
                if best is None or skew < best[0] - 1e-12:
                    best = (skew, pts)
            if len(pts) > n:
                break
    if best is None:
        raise DomainError(f"no regular grid has exactly {n} interior points")
    return best[1]


def training_design(name, n):
    """Deterministic, evenly spread training locations.

    U-shape: a regular x-y grid with exactly ``n`` interior points.  Swiss
    roll: a grid equally spaced in spiral arc length by height, using the
    factor pair of ``n`` closest to square (more arc-length levels).
    """
    if name == "ushape":
        return xy_grid(ushape(), n)
    dom = SwissRoll()
    nz = next(k for k in range(int(math.sqrt(n)), 0, -1) if n % k == 0)
    nu = n // nz
    s0, s1 = spiral_arclength(np.array(dom.r_range))
    r = spiral_radius(s0 + (np.arange(nu) + 0.5) * (s1 - s0) / nu)
    z0, z1 = dom.z_range
    z = z0 + (np.arange(nz) + 0.5) * (z1 - z0) / nz
    return np.stack(np.meshgrid(r, z, indexing="ij"), axis=-1).reshape(-1, 2)


def benchmark_design(spec):
    """``(train_points, grid_points, truth_on_train, truth_on_grid)``.

    Both point sets are deterministic; only the noise changes between
    replicates.
    """
    dom = spec.domain()
    train = training_design(spec.name, spec.n_train)
    try:
        grid = xy_grid(dom, spec.grid_size)
    except DomainError:
        grid = interior_grid(dom, spec.grid_size)
    return train, grid, benchmark_truth(spec, train), benchmark_truth(spec, grid)


def noisy_responses(spec, f_train, replicate):
    rng = np.random.default_rng([spec.seed, replicate])
    return f_train + spec.noise_sd * rng.standard_normal(len(f_train))


def rms(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))
