"""Sparse GP with the Deterministic Inducing Conditional.

Only the m inducing points get Brownian-motion ensembles.  Their paths are
counted near the inducing points (``Sigma_uu``), near the data
(``Sigma_uf``) and near any test points (``Sigma_u*``), so nothing is ever
simulated from a data point.

With ``L L^T = Sigma_uu`` and ``V = L^{-1} Sigma_uf`` the training
covariance is ``sigma_h^2 V^T V + sigma_n^2 I``.  Every quantity below goes
through the m-by-m matrix ``A = rho I + V V^T`` with
``rho = sigma_n^2 / sigma_h^2``, which costs O(n m^2).
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .errors import ConfigError, DataError, FitError, MissingEnsemblesError, NumericalError
from .geometry import interior_grid
from .gp import (LOG_2PI, CovarianceGrid, FitResult, Hyperparams, Predictive, _merge_coincident, grid_index,
                 hyper_bounds, psd_repair, select_best)
from .heat_kernel import kernel_table

log = logging.getLogger(__name__)

UU_JITTER = 1e-6
MAX_COND = 1e10


def place_inducing_grid(domain, m_target, bounds=None):
    """Regular chart grid clipped to the domain, with about ``m_target`` points."""
    return interior_grid(domain, m_target, bounds)


def jitter_uu(sigma_uu):
    """Cholesky factor of ``Sigma_uu``, adding ``1e-6 trace/m`` only when needed.

    The jitter is applied when the factorisation fails or the condition
    number exceeds ``1e10``.  Returns ``(L, jittered)``.
    """
    s = np.asarray(sigma_uu, dtype=float)
    m = len(s)
    try:
        L = linalg.cholesky(s, lower=True)
        d = np.diag(L)
        if (d.max() / d.min()) ** 2 < MAX_COND:
            return L, False
    except linalg.LinAlgError:
        pass
    tr = float(np.trace(s))
    sj = s + UU_JITTER * (tr / m if tr > 0 else 1.0) * np.eye(m)
    try:
        return linalg.cholesky(sj, lower=True), True
    except linalg.LinAlgError:
        lam = np.linalg.eigvalsh(sj)
        raise NumericalError(
            f"Sigma_uu is singular even after jitter: eigenvalues in "
            f"[{lam[0]:.3e}, {lam[-1]:.3e}], condition {abs(lam[-1] / lam[0]):.3e}"
        ) from None


def build_q(sigma_uu, sigma_au, sigma_ub):
    """``Q_ab = Sigma_au Sigma_uu^{-1} Sigma_ub`` by triangular solves."""
    L, _ = jitter_uu(sigma_uu)
    left = linalg.solve_triangular(L, np.atleast_2d(np.asarray(sigma_au, dtype=float)).T,
                                   lower=True)
    right = linalg.solve_triangular(L, np.atleast_2d(np.asarray(sigma_ub, dtype=float)),
                                    lower=True)
    return left.T @ right


@dataclass(frozen=True)
class InducingSet:
    points: np.ndarray
    config: object = None
    cache_refs: tuple = ()

    @property
    def m(self):
        return len(self.points)


@dataclass
class SparseGrid:
    """Inducing-point kernel tables for every diffusion time.

    ``sigma_uu`` is symmetrised and repaired; ``sigma_uf`` and ``sigma_us``
    hold raw estimates from the inducing ensembles, except that columns for
    data or test points sitting exactly on an inducing point reuse the
    repaired ``sigma_uu`` column.
    """

    t_grid: np.ndarray
    inducing: InducingSet
    data_points: np.ndarray
    sigma_uu: np.ndarray
    sigma_uf: np.ndarray
    stderr_uu: np.ndarray
    test_points: np.ndarray = None
    sigma_us: np.ndarray = None

    def index_of(self, t):
        return grid_index(self.t_grid, t)

    def noise_floor(self, t):
        return CovarianceGrid.noise_floor(self, t)

    @property
    def stderr_raw(self):
        return self.stderr_uu

    def model(self, hp, floor=None):
        i = self.index_of(hp.t)
        floor = self.noise_floor(hp.t) if floor is None else floor
        return SparseModel(self.inducing, self.sigma_uu[i], self.sigma_uf[i], hp, floor)

    def cross_at(self, t):
        if self.sigma_us is None:
            raise MissingEnsemblesError("sparse grid was built without test points")
        return self.sigma_us[self.index_of(t)]


def build_sparse_grid(ensembles, inducing_points, data_points, policy, domain,
                      test_points=None, steps=None):
    """Stream inducing ensembles into ``Sigma_uu``, ``Sigma_uf`` and ``Sigma_u*``."""
    u = np.atleast_2d(np.asarray(inducing_points, dtype=float))
    f = np.atleast_2d(np.asarray(data_points, dtype=float))
    m, n = len(u), len(f)
    parts = [u, f]
    k = 0
    if test_points is not None:
        test_points = np.atleast_2d(np.asarray(test_points, dtype=float))
        k = len(test_points)
        parts.append(test_points)
    targets = np.vstack(parts)
    cfg = None
    count = 0
    for i, ens in enumerate(ensembles):
        if i >= m:
            raise MissingEnsemblesError(f"more ensembles than the {m} inducing points")
        if cfg is None:
            cfg = ens.config
            steps = np.arange(1, cfg.n_steps + 1) if steps is None else np.atleast_1d(steps)
            T = len(steps)
            uu = np.empty((T, m, m))
            se = np.empty((T, m, m))
            uf = np.empty((T, m, n))
            us = np.empty((T, m, k)) if k else None
        elif ens.config != cfg:
            raise ConfigError(f"inducing ensemble {i} was simulated with {ens.config}, expected {cfg}")
        if not np.allclose(ens.start, u[i], rtol=0, atol=1e-12):
            raise MissingEnsemblesError(
                f"ensemble {i} starts at {ens.start.tolist()}, not at inducing point {i}")
        values, hits, _ = kernel_table(ens, targets, policy, domain, steps)
        uu[:, i] = values[:, :m]
        se[:, i] = np.where(hits[:, :m] > 0, values[:, :m] / np.sqrt(np.maximum(hits[:, :m], 1)), 0.0)
        uf[:, i] = values[:, m:m + n]
        if k:
            us[:, i] = values[:, m + n:]
        count += 1
    if count != m:
        raise MissingEnsemblesError(f"got {count} ensembles for {m} inducing points")
    uu = np.stack([psd_repair(0.5 * (s + s.T)) for s in uu])
    for i in range(T):
        uf[i] = _merge_coincident(uf[i], uu[i], u, f)
        if k:
            us[i] = _merge_coincident(us[i], uu[i], u, test_points)
    return SparseGrid(cfg.t_grid[steps - 1], InducingSet(u, cfg), f, uu, uf, se, test_points, us)


@dataclass
class SparseModel:
    """Fixed-hyperparameter DIC model.

    With ``floor > 0`` the inverse of ``Sigma_uu`` is replaced by a
    pseudo-inverse over eigenvalues above ``floor`` (the Monte-Carlo noise
    level); otherwise a Cholesky factor is used, jittered only if needed.
    Either way ``V`` is a ``(r, n)`` factor with ``Q_ff = V^T V``.
    """

    inducing: InducingSet
    sigma_uu: np.ndarray
    sigma_uf: np.ndarray
    hp: Hyperparams
    floor: float = 0.0

    def __post_init__(self):
        self.sigma_uu = np.asarray(self.sigma_uu, dtype=float)
        self.sigma_uf = np.asarray(self.sigma_uf, dtype=float)
        self.jittered = False
        if self.floor > 0:
            lam, u = np.linalg.eigh(self.sigma_uu)
            keep = lam > self.floor
            if not np.any(keep):
                raise NumericalError(f"no eigenvalue of Sigma_uu exceeds the noise floor {self.floor:.3e}")
            self._W = (u[:, keep] / np.sqrt(lam[keep])).T
            self._L = None
        else:
            self._L, self.jittered = jitter_uu(self.sigma_uu)
        self._V = self.project(self.sigma_uf)

    @property
    def n(self):
        return self._V.shape[1]

    @property
    def rank(self):
        return self._V.shape[0]

    def project(self, sigma_us):
        """``L^{-1} Sigma_u*`` (or its truncated counterpart) for columns."""
        s = np.asarray(sigma_us, dtype=float)
        if self._L is None:
            return self._W @ s
        return linalg.solve_triangular(self._L, s, lower=True)


def _a_factor(V, hp):
    rho = hp.sigma_noise**2 / hp.sigma_h**2
    A = V @ V.T
    A[np.diag_indices_from(A)] += rho
    try:
        return linalg.cho_factor(A, lower=True)
    except linalg.LinAlgError:
        raise NumericalError(
            "rank-deficient low-rank covariance: sigma_noise is zero (or negligible) "
            "and Q_ff is singular") from None


def sparse_log_marginal(model, y):
    """Log evidence under ``N(0, sigma_h^2 Q_ff + sigma_n^2 I)``.

    Uses the matrix determinant lemma and Woodbury identity; nothing n-by-n
    is formed except in the noise-free case with ``n <= m``.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    V, hp = model._V, model.hp
    m, n = V.shape
    if len(y) != n:
        raise DataError(f"model has {n} data columns but y has {len(y)} entries")
    sh2, sn2 = hp.sigma_h**2, hp.sigma_noise**2
    if sn2 == 0:
        if n > m:
            raise NumericalError(f"sigma_noise = 0 with rank(Q_ff) <= {m} < n = {n}: "
                                 "the low-rank covariance is singular")
        c = sh2 * (V.T @ V)
        try:
            cf = linalg.cho_factor(c, lower=True)
        except linalg.LinAlgError:
            raise NumericalError("sigma_noise = 0 and Q_ff is singular") from None
        quad = y @ linalg.cho_solve(cf, y)
        logdet = 2 * np.sum(np.log(np.diag(cf[0])))
        return float(-0.5 * quad - 0.5 * logdet - 0.5 * n * LOG_2PI)
    cf = _a_factor(V, hp)
    vy = V @ y
    quad = (y @ y - vy @ linalg.cho_solve(cf, vy)) / sn2
    logdet = (n - m) * math.log(sn2) + m * math.log(sh2) + 2 * np.sum(np.log(np.diag(cf[0])))
    return float(-0.5 * quad - 0.5 * logdet - 0.5 * n * LOG_2PI)


def sparse_predict(model, y, sigma_u_star, variance=True):
    """Posterior mean and DIC variance at test points.

    ``sigma_u_star`` is ``(m, m*)`` and must come from the inducing
    ensembles.  With ``V* = L^{-1} Sigma_u*`` the mean is ``V*^T A^{-1} V y``
    and the variance ``sigma_n^2 diag(V*^T A^{-1} V*)``.
    """
    if sigma_u_star is None:
        raise MissingEnsemblesError("sparse prediction needs Sigma_u* from the inducing ensembles")
    y = np.asarray(y, dtype=float).reshape(-1)
    V, hp = model._V, model.hp
    vs = model.project(np.atleast_2d(sigma_u_star))
    if np.atleast_2d(sigma_u_star).shape[0] != model.sigma_uu.shape[0]:
        raise DataError(f"sigma_u_star has {np.atleast_2d(sigma_u_star).shape[0]} rows "
                        f"for {model.sigma_uu.shape[0]} inducing points")
    # with sigma_noise = 0 this is the interpolation limit; A = V V^T must be invertible
    cf = _a_factor(V, hp)
    mean = vs.T @ linalg.cho_solve(cf, V @ y)
    if not variance:
        return Predictive(mean=mean)
    w = linalg.solve_triangular(cf[0], vs, lower=True)
    var = hp.sigma_noise**2 * np.sum(w * w, axis=0)
    clipped = int(np.count_nonzero(var < 0))
    return Predictive(mean=mean, variance=np.maximum(var, 0.0), n_clipped=clipped)


def _spectral_terms(V, y):
    mu, P = np.linalg.eigh(V @ V.T)
    keep = mu > 1e-12 * max(mu[-1], 1e-300)
    mu = mu[keep]
    b = P[:, keep].T @ (V @ y)
    c = b * b / mu
    r2 = max(float(y @ y - c.sum()), 0.0)
    return mu, c, r2


def _sparse_negll(params, mu, c, r2, n):
    sh2 = math.exp(2 * params[0])
    sn2 = math.exp(2 * params[1])
    v = sh2 * mu + sn2
    rest = n - len(mu)
    f = 0.5 * (np.sum(c / v) + r2 / sn2 + np.sum(np.log(v)) + rest * math.log(sn2) + n * LOG_2PI)
    dv = 0.5 * (1.0 / v - c / v**2)
    ga = np.sum(dv * 2 * sh2 * mu)
    gb = np.sum(dv * 2 * sn2) - r2 / sn2 + rest
    return f, np.array([ga, gb])


def sparse_fit(grid, y, fixed_noise=None, floor=None):
    """Maximise the sparse evidence over the diffusion-time grid.

    Same search as the dense fit: three L-BFGS-B starts on
    ``log(sigma_h), log(sigma_noise)`` per ``t``, ties to the smaller ``t``.
    ``floor`` is passed to :class:`SparseModel` (default: the grid's noise
    floor at each ``t``; 0 for exact inverses).
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    n = len(y)
    if grid.sigma_uf.shape[2] != n:
        raise DataError(f"grid has {grid.sigma_uf.shape[2]} data points but y has {n} entries")
    rows = []
    for t in grid.t_grid:
        try:
            V = grid.model(Hyperparams(t, 1.0, 1.0), floor)._V
        except NumericalError as exc:
            log.warning("t=%g skipped: %s", t, exc)
            rows.append((t, np.nan, np.nan, np.nan))
            continue
        mu, c, r2 = _spectral_terms(V, y)
        bounds, starts = hyper_bounds(y, float(np.sum(V * V) / n))
        if fixed_noise is not None:
            bn = math.log(max(fixed_noise, 1e-300))
            bounds[1] = (bn, bn)
            starts = [(a, bn) for a, _ in starts]
        best = None
        for x0 in starts:
            res = optimize.minimize(_sparse_negll, np.array(x0), args=(mu, c, r2, n), jac=True,
                                    method="L-BFGS-B", bounds=bounds)
            if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
                best = res
        if best is None:
            rows.append((t, np.nan, np.nan, np.nan))
        else:
            rows.append((t, -best.fun, math.exp(best.x[0]), math.exp(best.x[1])))
    table = np.array(rows)
    if not np.any(np.isfinite(table[:, 1])):
        raise FitError(f"sparse likelihood optimisation failed at all {len(table)} diffusion times")
    k = select_best(table)
    hp = Hyperparams(float(table[k, 0]), float(table[k, 2]), float(table[k, 3]))
    ll = sparse_log_marginal(grid.model(hp, floor), y)
    return FitResult(hp, ll, table)
