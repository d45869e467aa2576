"""Dense GP regression with Monte-Carlo heat-kernel covariances.

One simulation per training point yields a raw kernel matrix for every
diffusion time on the simulation grid.  Each raw matrix is symmetrised,
repaired to be positive semidefinite and stored unscaled; the magnitude
``sigma_h**2`` and the noise variance are applied at likelihood time, so a
single :class:`CovarianceGrid` serves the whole hyperparameter search.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .errors import ConfigError, DataError, FitError, MissingEnsemblesError, NumericalError
from .heat_kernel import kernel_table

log = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    responses: np.ndarray
    offset: np.ndarray = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        y = np.asarray(self.responses, dtype=float).reshape(-1)
        if len(pts) != len(y):
            raise DataError(f"{len(pts)} points but {len(y)} responses")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "responses", y)

    @property
    def n(self):
        return len(self.responses)

    def subset(self, mask):
        return Dataset(self.points[mask], self.responses[mask], self.offset)


@dataclass(frozen=True)
class Hyperparams:
    t: float
    sigma_h: float
    sigma_noise: float


@dataclass(frozen=True)
class Predictive:
    mean: np.ndarray
    variance: np.ndarray = None
    full_cov: np.ndarray = None
    n_clipped: int = 0


@dataclass
class CovarianceGrid:
    """Kernel matrices for every diffusion time of one simulation batch.

    Attributes
    ----------
    t_grid : (T,) diffusion times
    sigma_raw : (T, n, n) raw estimates; row i comes from the ensemble of point i
    sigma : (T, n, n) symmetrised, PSD-repaired matrices
    stderr_raw : (T, n, n) binomial standard errors of ``sigma_raw``
    cross_raw : (T, n, m) estimates at test points, or None
    """

    t_grid: np.ndarray
    points: np.ndarray
    sigma_raw: np.ndarray
    sigma: np.ndarray
    stderr_raw: np.ndarray
    n_paths: int
    test_points: np.ndarray = None
    cross_raw: np.ndarray = None

    def index_of(self, t):
        return grid_index(self.t_grid, t)

    def sigma_at(self, t):
        return self.sigma[self.index_of(t)]

    def noise_floor(self, t):
        """Spectral size of the Monte-Carlo noise in ``sigma`` at ``t``.

        ``2 sqrt(n)`` times the rms pooled standard error, the usual norm
        of a random symmetric matrix with that entry spread.
        """
        se = self.stderr_raw[self.index_of(t)]
        pooled = 0.5 * np.sqrt(se**2 + se.T**2)
        n = len(pooled)
        return 2.0 * math.sqrt(n) * math.sqrt(float(np.mean(pooled**2)))

    def kernel_at(self, t, floor=None):
        """``sigma`` at ``t`` with eigenvalues raised to at least ``floor``.

        This is the matrix the likelihood and the predictor use.  Eigenvalues
        below the Monte-Carlo noise level (default :meth:`noise_floor`) are
        not identified by the simulation; flooring them acts as a nugget of
        that size instead of trusting whatever the noise left there.
        """
        floor = self.noise_floor(t) if floor is None else floor
        return floor_spectrum(self.sigma_at(t), floor)

    def cross_at(self, t, floor=None):
        """Training-by-test covariances at ``t``.

        Columns are projected onto the eigenvectors of ``sigma`` whose
        eigenvalues exceed ``floor`` (default :meth:`noise_floor`; pass 0 to
        skip).  Directions below it carry (almost) no prior variance after
        repair, so a consistent joint covariance cannot correlate them with
        anything; left in, their Monte-Carlo noise gets multiplied by
        ``1 / sigma_noise^2``.  Test points that coincide with a training
        point take the symmetrised training column instead.
        """
        if self.cross_raw is None:
            raise MissingEnsemblesError("grid was built without test points")
        i = self.index_of(t)
        floor = self.noise_floor(t) if floor is None else floor
        cross = project_onto_signal(self.sigma[i], self.cross_raw[i], floor)
        return _merge_coincident(cross, self.sigma[i], self.points, self.test_points)


def floor_spectrum(sigma, floor):
    sigma = np.asarray(sigma, dtype=float)
    if floor <= 0:
        return sigma.copy()
    lam, u = np.linalg.eigh(sigma)
    out = (u * np.maximum(lam, floor)) @ u.T
    return 0.5 * (out + out.T)


def _grid_floor(grid, t, floor):
    if floor is not None:
        return floor
    return grid.noise_floor(t) if hasattr(grid, "noise_floor") else 0.0


def project_onto_signal(sigma, cols, floor):
    """Project ``cols`` onto eigenvectors of ``sigma`` with eigenvalue > ``floor``."""
    if floor <= 0:
        return np.array(cols)
    lam, u = np.linalg.eigh(sigma)
    keep = u[:, lam > floor]
    return keep @ (keep.T @ cols)


def grid_index(t_grid, t):
    i = int(np.argmin(np.abs(t_grid - t)))
    if not math.isclose(t_grid[i], t, rel_tol=1e-9, abs_tol=1e-12):
        raise ConfigError(f"t={t} is not on the diffusion-time grid")
    return i


def _merge_coincident(cross, sym, rows_pts, cols_pts):
    cross = np.array(cross)
    for j, p in enumerate(cols_pts):
        hit = np.flatnonzero(np.all(rows_pts == p, axis=1))
        if len(hit):
            cross[:, j] = sym[:, hit[0]]
    return cross


def psd_repair(m, jitter=1e-8):
    """Nearest PSD matrix by eigenvalue clipping, plus a small diagonal jitter.

    Negative eigenvalues are set to zero (the Frobenius-nearest PSD matrix)
    and ``jitter * trace / n`` is added to the diagonal.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("psd_repair needs a square matrix")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if not np.allclose(m, m.T, rtol=0, atol=1e-12 * scale):
        raise ValueError("psd_repair needs a symmetric matrix")
    n = len(m)
    lam, q = np.linalg.eigh(m)
    if lam[0] >= 0:
        out = m.copy()
    else:
        out = (q * np.maximum(lam, 0.0)) @ q.T
        out = 0.5 * (out + out.T)
    tr = float(np.trace(out))
    out[np.diag_indices(n)] += jitter * (tr / n if tr > 0 else 1.0)
    return out


def build_covariance_grid(ensembles, points, policy, domain, test_points=None, steps=None):
    """Assemble raw and repaired kernel matrices from per-point ensembles.

    ``ensembles`` may be any iterable (for example a generator that loads
    one ensemble at a time); the i-th ensemble must start at ``points[i]``.
    ``steps`` restricts the grid to some 1-based simulation steps.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    targets = points
    m = 0
    if test_points is not None:
        test_points = np.atleast_2d(np.asarray(test_points, dtype=float))
        m = len(test_points)
        targets = np.vstack([points, test_points])
    cfg = None
    raw = stderr = cross = None
    count = 0
    for i, ens in enumerate(ensembles):
        if i >= n:
            raise ConfigError(f"got more ensembles than the {n} training points")
        if cfg is None:
            cfg = ens.config
            steps = np.arange(1, cfg.n_steps + 1) if steps is None else np.atleast_1d(steps)
            T = len(steps)
            raw = np.empty((T, n, n))
            stderr = np.empty((T, n, n))
            cross = np.empty((T, n, m)) if m else None
        elif ens.config != cfg:
            raise ConfigError(f"ensemble {i} was simulated with {ens.config}, expected {cfg}")
        if not np.allclose(ens.start, points[i], rtol=0, atol=1e-12):
            raise ConfigError(f"ensemble {i} starts at {ens.start.tolist()}, not at point {i}")
        values, hits, _ = kernel_table(ens, targets, policy, domain, steps)
        raw[:, i, :] = values[:, :n]
        with np.errstate(invalid="ignore", divide="ignore"):
            se = np.where(hits > 0, values / np.sqrt(np.maximum(hits, 1)), 0.0)
        stderr[:, i, :] = se[:, :n]
        if m:
            cross[:, i, :] = values[:, n:]
        count += 1
    if count != n:
        raise ConfigError(f"got {count} ensembles for {n} training points")
    sym = 0.5 * (raw + np.swapaxes(raw, 1, 2))
    sigma = np.stack([psd_repair(s) for s in sym])
    return CovarianceGrid(
        t_grid=cfg.t_grid[steps - 1], points=points, sigma_raw=raw, sigma=sigma, stderr_raw=stderr,
        n_paths=cfg.n_paths, test_points=test_points, cross_raw=cross,
    )


def _cholesky(c, what="covariance"):
    try:
        return linalg.cho_factor(c, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        lam = np.linalg.eigvalsh(0.5 * (c + c.T)) if np.all(np.isfinite(c)) else [np.nan]
        raise NumericalError(
            f"Cholesky of the {what} failed ({exc}); n={len(c)}, "
            f"min eigenvalue={lam[0]:.3e}, max eigenvalue={lam[-1]:.3e}"
        ) from None


def log_marginal_likelihood(sigma_t, hp, y):
    """Gaussian log evidence with covariance ``sigma_h^2 Sigma + sigma_noise^2 I``."""
    sigma_t = np.asarray(sigma_t, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = len(y)
    if sigma_t.shape != (n, n):
        raise ValueError(f"matrix is {sigma_t.shape} but y has {n} entries")
    c = hp.sigma_h**2 * sigma_t + hp.sigma_noise**2 * np.eye(n)
    cf = _cholesky(c)
    alpha = linalg.cho_solve(cf, y)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    return float(-0.5 * y @ alpha - 0.5 * logdet - 0.5 * n * LOG_2PI)


@dataclass(frozen=True)
class FitResult:
    hyperparams: Hyperparams
    log_likelihood: float
    table: np.ndarray  # rows: t, log-likelihood, sigma_h, sigma_noise

    @property
    def hp(self):
        return self.hyperparams


def _spectral_negll(params, lam, yt2, n):
    sh2 = math.exp(2 * params[0])
    sn2 = math.exp(2 * params[1])
    v = sh2 * lam + sn2
    q = yt2 / v
    f = 0.5 * np.sum(q) + 0.5 * np.sum(np.log(v)) + 0.5 * n * LOG_2PI
    dv = 0.5 * (1.0 / v - q / v)
    return f, np.array([np.sum(dv * 2 * sh2 * lam), np.sum(dv * 2 * sn2)])


def hyper_bounds(y, kdiag):
    """Log-space bounds and start points for ``(sigma_h, sigma_noise)``.

    All of them scale with the spread of ``y``, which keeps the fit
    equivariant under rescaling of the responses.
    """
    s = float(np.std(y))
    s = s if s > 0 else 1.0
    h0 = s / math.sqrt(max(kdiag, 1e-300))
    bounds = [(math.log(1e-3 * h0), math.log(1e3 * h0)),
              (math.log(1e-4 * s), math.log(10.0 * s))]
    starts = [(math.log(h0), math.log(0.1 * s)),
              (math.log(0.3 * h0), math.log(0.01 * s)),
              (math.log(3.0 * h0), math.log(0.5 * s))]
    return bounds, starts


def _optimise_scales(matrix, y, fixed_noise=None, floor=0.0):
    """Maximise the evidence over ``(sigma_h, sigma_noise)`` for one matrix.

    The matrix is diagonalised once, after which each evaluation is O(n).
    Eigenvalues are floored as in :func:`floor_spectrum`.
    """
    lam, u = np.linalg.eigh(matrix)
    lam = np.maximum(lam, max(floor, 0.0))
    yt2 = (u.T @ y) ** 2
    n = len(y)
    bounds, starts = hyper_bounds(y, float(np.mean(np.diag(matrix))))
    if fixed_noise is not None:
        b = math.log(max(fixed_noise, 1e-300))
        bounds[1] = (b, b)
        starts = [(a, b) for a, _ in starts]
    best = None
    for x0 in starts:
        try:
            res = optimize.minimize(_spectral_negll, np.array(x0), args=(lam, yt2, n),
                                    jac=True, method="L-BFGS-B", bounds=bounds)
        except (FloatingPointError, ValueError):
            continue
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        return None
    return -best.fun, math.exp(best.x[0]), math.exp(best.x[1])


def select_best(table):
    """Row of the largest likelihood; near-ties go to the smaller ``t``."""
    ll = table[:, 1]
    finite = np.isfinite(ll)
    top = np.max(ll[finite])
    tol = 1e-10 * max(1.0, abs(top))
    return int(np.flatnonzero(finite & (ll >= top - tol))[0])


def fit(grid, y, fixed_noise=None, floor=None):
    """Type-II maximum likelihood over the diffusion-time grid.

    For every ``t`` the scales are optimised by L-BFGS-B on their logs from
    three starts; the best ``(t, sigma_h, sigma_noise)`` overall is returned.
    The kernel is the floored matrix of :meth:`CovarianceGrid.kernel_at`;
    ``floor=0`` uses the repaired estimate as is.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) != grid.sigma.shape[1]:
        raise DataError(f"grid has {grid.sigma.shape[1]} points but y has {len(y)} entries")
    rows = []
    floors = [_grid_floor(grid, t, floor) for t in grid.t_grid]
    for t, s, fl in zip(grid.t_grid, grid.sigma, floors):
        r = _optimise_scales(s, y, fixed_noise, fl)
        rows.append((t, np.nan, np.nan, np.nan) if r is None else (t, *r))
    table = np.array(rows)
    if not np.any(np.isfinite(table[:, 1])):
        raise FitError(f"likelihood optimisation failed at all {len(table)} diffusion times")
    k = select_best(table)
    hp = Hyperparams(float(table[k, 0]), float(table[k, 2]), float(table[k, 3]))
    ll = log_marginal_likelihood(floor_spectrum(grid.sigma[k], floors[k]), hp, y)
    return FitResult(hp, ll, table)


def predict(grid, hp, y, cross_cov, test_self_cov=None, variance=None, full_cov=False,
            floor=None):
    """Posterior of the latent function at test points.

    ``cross_cov`` is ``(n, m)``: row i holds estimates from the ensemble of
    training point i.  The variance needs ``test_self_cov`` (kernel values
    among the test points, which requires ensembles started there); asking
    for it without them raises :class:`MissingEnsemblesError`.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if hasattr(grid, "sigma_at"):
        sigma = floor_spectrum(grid.sigma_at(hp.t), _grid_floor(grid, hp.t, floor))
    else:
        sigma = np.asarray(grid, dtype=float)
    cross = np.atleast_2d(np.asarray(cross_cov, dtype=float))
    n = len(y)
    if cross.shape[0] != n:
        raise ValueError(f"cross_cov has {cross.shape[0]} rows for {n} training points")
    if variance and test_self_cov is None:
        raise MissingEnsemblesError(
            "predictive variance needs kernel values among the test points; "
            "simulate ensembles at the test points (--simulate-test-ensembles)"
        )
    sh2, sn2 = hp.sigma_h**2, hp.sigma_noise**2
    cf = _cholesky(sh2 * sigma + sn2 * np.eye(n))
    mean = sh2 * cross.T @ linalg.cho_solve(cf, y)
    if test_self_cov is None:
        return Predictive(mean=mean)
    kss = sh2 * np.asarray(test_self_cov, dtype=float)
    v = linalg.solve_triangular(cf[0], sh2 * cross, lower=True)
    if full_cov:
        cov = kss - v.T @ v
        var = np.diag(cov).copy()
    else:
        cov = None
        var = np.diag(kss) - np.sum(v * v, axis=0)
    clipped = int(np.count_nonzero(var < 0))
    return Predictive(mean=mean, variance=np.maximum(var, 0.0), full_cov=cov, n_clipped=clipped)


def heat_to_rbf(t, sigma_h, d):
    """RBF parameters of the same covariance on R^d.

    ``sigma_h^2 (2 pi t)^(-d/2) exp(-r^2 / 2t)`` equals
    ``sigma_r^2 exp(-r^2 / 2 l^2)`` with ``l = sqrt(t)`` and
    ``sigma_r = sigma_h (2 pi t)^(-d/4)``.
    """
    return math.sqrt(t), sigma_h * (2 * math.pi * t) ** (-d / 4)
