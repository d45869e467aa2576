"""Heat-kernel values as Brownian-motion transition densities.

The density at a target ``s`` after ``l`` steps is the fraction of paths
inside the open chart hypercube ``|x_k - s_k| < w`` divided by the window
volume ``V(w) = (2w)^d sqrt(det g(s))``.  The ``sqrt(det g)`` factor turns a
coordinate density into a density with respect to Riemannian volume; it is
exactly 1 on flat domains.  By default windows that poke out of the domain
are charged only for the part inside (see :func:`clipped_volume`); without
that, estimates near a boundary are biased low by up to the outside fraction.

Window-size and sample-size rules balance the ``O(w^2)`` bias against the
binomial standard error ``sqrt(K / (N V(w)))``.  Setting the two equal gives
``w ~ (t^2 / (K A^2 N))^(1/(d+4))`` with ``A = |sum (s - s0)^2 - d t| / t``,
which is ``A^-2/5 K^-1/5 t^2/5 N^-1/5`` in one dimension and
``A^-1/3 K^-1/6 t^1/3 N^-1/6`` in two.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


class WindowFallbackWarning(UserWarning):
    """The optimal-window formula was unusable and the fixed window was used."""


@dataclass(frozen=True)
class KernelEstimate:
    value: float
    stderr: float
    window: float
    hits: int
    n_paths: int
    volume: float
    t: float
    start: np.ndarray
    target: np.ndarray

    @property
    def zero_hit(self):
        return self.hits == 0


@dataclass(frozen=True)
class WindowPolicy:
    mode: str = "fixed"
    fixed_w: float = 0.1
    pilot_fraction: float = 0.1
    clip_to_domain: bool = True

    def __post_init__(self):
        if self.mode not in ("fixed", "optimal"):
            raise ConfigError(f"window mode must be 'fixed' or 'optimal', not {self.mode!r}")
        if not self.fixed_w > 0:
            raise ConfigError("fixed_w must be > 0")
        if not 0 < self.pilot_fraction <= 1:
            raise ConfigError("pilot_fraction must be in (0, 1]")


def window_volume(domain, targets, w):
    """``(2w)^d sqrt(det g)`` at each target; ``w`` broadcasts against targets."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    d = targets.shape[1]
    return (2.0 * np.asarray(w, dtype=float)) ** d * domain.sqrt_det_metric_batch(targets)


def _quad_offsets(d):
    q = 16 if d <= 2 else 6
    g = (np.arange(q) + 0.5) / q * 2 - 1
    return np.stack(np.meshgrid(*[g] * d, indexing="ij"), axis=-1).reshape(-1, d)


def clipped_volume(domain, targets, w):
    """Riemannian volume of each window intersected with the domain.

    Midpoint rule on a regular sub-grid of the window (16 per axis in one
    and two dimensions).  Equals :func:`window_volume` up to quadrature
    error when the window lies inside a flat domain, and exactly on
    domains without a boundary.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    w = np.broadcast_to(np.asarray(w, dtype=float), (len(targets),))
    if domain.boundary is None:
        return window_volume(domain, targets, w)
    off = _quad_offsets(targets.shape[1])
    out = np.empty(len(targets))
    step = max(1, 200_000 // len(off))
    for a in range(0, len(targets), step):
        pts = targets[a:a + step, None, :] + w[a:a + step, None, None] * off[None]
        flat = pts.reshape(-1, targets.shape[1])
        ok = domain.inside_batch(flat)
        dens = np.zeros(len(flat))
        if np.any(ok):
            dens[ok] = domain.sqrt_det_metric_batch(flat[ok])
        out[a:a + step] = dens.reshape(len(pts), -1).mean(axis=1)
    return (2.0 * w) ** targets.shape[1] * out


def volume_table(domain, targets, windows, clip=True):
    """Window volumes for a ``(T, m)`` table of window sizes.

    Clipped volumes are computed once per target when its window is fixed
    and otherwise interpolated in ``log w`` from nine sizes spanning its
    range.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    windows = np.asarray(windows, dtype=float)
    if not clip or domain.boundary is None:
        return window_volume(domain, targets, windows)
    lo, hi = windows.min(axis=0), windows.max(axis=0)
    if np.all(lo == hi):
        return np.broadcast_to(clipped_volume(domain, targets, lo), windows.shape).copy()
    ladder = np.exp(np.linspace(np.log(lo), np.log(hi), 9))  # (9, m)
    d = targets.shape[1]
    frac = np.stack([clipped_volume(domain, targets, lv) / (2 * lv) ** d for lv in ladder])
    out = np.empty_like(windows)
    for j in range(len(targets)):
        if lo[j] == hi[j]:
            out[:, j] = frac[0, j]
        else:
            out[:, j] = np.interp(np.log(windows[:, j]), np.log(ladder[:, j]), frac[:, j])
    return out * (2 * windows) ** d


def hit_counts(positions, targets, w, steps=None):
    """Number of paths inside each target's window, per step.

    Parameters
    ----------
    positions : array, shape (N, T, d)
    targets : array, shape (m, d)
    w : float or array broadcastable to (len(steps), m)
    steps : sequence of 1-based step indices, default all

    Returns
    -------
    int64 array, shape (len(steps), m)
    """
    positions = np.asarray(positions)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n, T, d = positions.shape
    steps = np.arange(1, T + 1) if steps is None else np.atleast_1d(steps)
    w = np.broadcast_to(np.asarray(w, dtype=float), (len(steps), len(targets)))
    out = np.zeros((len(steps), len(targets)), dtype=np.int64)
    for si, step in enumerate(steps):
        P = positions[:, step - 1, :].astype(np.float64)
        lo_b = targets - w[si][:, None]
        hi_b = targets + w[si][:, None]
        if d == 1:
            xs = np.sort(P[:, 0])
            lo = np.searchsorted(xs, lo_b[:, 0], side="right")
            hi = np.searchsorted(xs, hi_b[:, 0], side="left")
            out[si] = np.maximum(hi - lo, 0)
            continue
        order = np.argsort(P[:, 0], kind="stable")
        xs = P[order, 0]
        rest = P[order, 1:]
        lo = np.searchsorted(xs, lo_b[:, 0], side="right")
        hi = np.searchsorted(xs, hi_b[:, 0], side="left")
        for j in np.flatnonzero(hi > lo):
            seg = rest[lo[j]:hi[j]]
            inside = np.all((seg > lo_b[j, 1:]) & (seg < hi_b[j, 1:]), axis=1)
            out[si, j] = np.count_nonzero(inside)
    return out


def estimate_density(ensemble, target, step_index, w, domain, clip=True):
    """Transition-density estimate at ``target`` after ``step_index`` steps."""
    if not w > 0:
        raise ValueError("window w must be > 0")
    target = np.asarray(target, dtype=float).reshape(1, -1)
    k = int(hit_counts(ensemble.positions, target, w, [step_index])[0, 0])
    n = ensemble.n_paths
    vol = float(clipped_volume(domain, target, w)[0] if clip else window_volume(domain, target, w)[0])
    value = k / (n * vol)
    return KernelEstimate(
        value=value,
        stderr=math.sqrt(value / (n * vol)),
        window=float(w),
        hits=k,
        n_paths=n,
        volume=vol,
        t=step_index * ensemble.config.dt,
        start=np.asarray(ensemble.start, dtype=float),
        target=target[0],
    )


def closed_form_kernel(d, s0, s, t):
    """Heat kernel of R^d: ``(2 pi t)^(-d/2) exp(-|s0 - s|^2 / (2t))``."""
    if not t > 0:
        raise ValueError("diffusion time t must be > 0")
    s0 = np.asarray(s0, dtype=float)
    s = np.asarray(s, dtype=float)
    r2 = np.sum((s0 - s) ** 2, axis=-1)
    return (2 * np.pi * t) ** (-d / 2) * np.exp(-r2 / (2 * t))


def taylor_factor(s0, s, t):
    """``A = |sum (s - s0)^2 - d t| / t``, the leading Taylor coefficient."""
    s0 = np.asarray(s0, dtype=float)
    s = np.asarray(s, dtype=float)
    d = s.shape[-1]
    return np.abs(np.sum((s - s0) ** 2, axis=-1) - d * t) / t


def optimal_window(K_pilot, t, N, d, A, fixed_w=None):
    """Order-of-magnitude window balancing bias and Monte-Carlo error.

    Works elementwise on arrays.  The result is clamped to
    ``[1e-3 sqrt(t), 0.5 sqrt(t)]``.  Where ``A`` or ``K_pilot`` is zero the
    formula has no minimum; those entries fall back to ``fixed_w`` and a
    :class:`WindowFallbackWarning` is issued.
    """
    K = np.asarray(K_pilot, dtype=float)
    A = np.asarray(A, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0) or N < 1:
        raise ValueError("need t > 0 and N >= 1")
    bad = (A <= 0) | (K <= 0) | ~np.isfinite(A) | ~np.isfinite(K)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = (t**2 / (K * A**2 * N)) ** (1.0 / (d + 4))
    w = np.clip(w, 1e-3 * np.sqrt(t), 0.5 * np.sqrt(t))
    if np.any(bad):
        if fixed_w is None:
            raise ValueError("optimal window undefined (A or K is zero) and no fixed_w given")
        warnings.warn(
            f"optimal window undefined at {int(np.count_nonzero(bad))} point(s) "
            f"(A = 0 or zero pilot density); using fixed_w={fixed_w}",
            WindowFallbackWarning,
            stacklevel=2,
        )
        w = np.where(bad, fixed_w, w)
    return float(w) if w.ndim == 0 else w


def error_budget(estimate, d, domain=None):
    """``(numerical, monte_carlo)`` error components of an estimate.

    On flat domains the numerical part is the signed leading Taylor term
    ``K (|s - s0|^2 - d t) / (6t) * w^2 / t``.  Otherwise only its order
    ``K w^2 / t`` is known and that is returned.
    """
    w, t, K = estimate.window, estimate.t, estimate.value
    if domain is None or domain.flat:
        r2 = float(np.sum((estimate.target - estimate.start) ** 2))
        numerical = K * (r2 - d * t) / (6 * t) * w**2 / t
    else:
        numerical = K * w**2 / t
    return numerical, estimate.stderr


def min_paths_for_error(err_target, K, t, A, d):
    """Smallest path count whose balanced total error reaches ``err_target``.

    ``N = t^2 / (K A^2) * (K A / (err t))^((d+4)/2)``; in one dimension this is
    ``A^1/2 K^-1 t^-1/2 (err/K)^-5/2``.  Beyond two dimensions no bound is
    offered and the two-dimensional value is returned with a warning.
    """
    if not err_target > 0:
        raise ValueError("err_target must be > 0")
    if not (K > 0 and t > 0 and A > 0):
        raise ValueError("need K > 0, t > 0 and A > 0")
    if d < 1:
        raise ValueError("d must be >= 1")
    if d > 2:
        warnings.warn(f"no closed-form sample-size bound for d={d}; returning the d=2 bound",
                      stacklevel=2)
        d = 2
    n = t**2 / (K * A**2) * (K * A / (err_target * t)) ** ((d + 4) / 2)
    return int(math.ceil(n))


def kernel_table(ensemble, targets, policy, domain, steps=None):
    """Density estimates at every (or the given 1-based) step for every target.

    Returns
    -------
    values : array (T, m)
    hits : int array (T, m)
    windows : array (T, m)
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    cfg = ensemble.config
    steps = np.arange(1, cfg.n_steps + 1) if steps is None else np.atleast_1d(steps)
    t = cfg.t_grid[steps - 1][:, None]
    n = ensemble.n_paths
    if policy.mode == "fixed":
        windows = np.full((len(steps), len(targets)), policy.fixed_w)
    else:
        n_pilot = max(1, int(math.ceil(policy.pilot_fraction * n)))
        pilot = hit_counts(ensemble.positions[:n_pilot], targets, policy.fixed_w, steps)
        vol0 = volume_table(domain, targets, np.full((1, len(targets)), policy.fixed_w),
                            policy.clip_to_domain)
        k_pilot = pilot / (n_pilot * vol0)
        A = taylor_factor(ensemble.start[None, None, :], targets[None, :, :], t)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", WindowFallbackWarning)
            windows = optimal_window(k_pilot, t, n, targets.shape[1], A, policy.fixed_w)
    hits = hit_counts(ensemble.positions, targets, windows, steps)
    vol = volume_table(domain, targets, windows, policy.clip_to_domain)
    return hits / (n * vol), hits, windows


def r1_validation(n_paths, t=10.0, w=0.5, n_grid=70, dt=0.01, seed=0, workers=1):
    """Estimated vs exact heat kernel on R from the origin.

    Returns rows ``(s, t, K_true, K_hat, stderr, rel_err)`` on ``n_grid``
    equally spaced points strictly inside ``(-9, 9)``.
    """
    from .bm_sim import SimConfig, simulate_ensemble
    from .geometry import EuclideanDomain

    domain = EuclideanDomain(1)
    steps = int(round(t / dt))
    cfg = SimConfig(n_paths, steps, t / steps, seed=seed)
    ens = simulate_ensemble(domain, [0.0], cfg, workers=workers)
    grid = np.linspace(-9.0, 9.0, n_grid + 2)[1:-1]
    k = hit_counts(ens.positions, grid[:, None], w, [steps])[0]
    vol = 2 * w
    k_hat = k / (n_paths * vol)
    k_true = closed_form_kernel(1, 0.0, grid[:, None], t)
    stderr = np.sqrt(k_hat / (n_paths * vol))
    rel = np.abs(k_hat - k_true) / k_true
    return np.column_stack([grid, np.full_like(grid, t), k_true, k_hat, stderr, rel])
