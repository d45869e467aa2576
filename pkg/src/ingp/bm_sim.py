"""Euler-Maruyama simulation of Brownian motion in a chart.

One step proposes ``x' = x + mu(x) dt + sqrt(dt) g(x)^{-1/2} z``.  A proposal
that leaves the domain is thrown away and redrawn with fresh noise (Neumann
rejection) until it lands strictly inside, up to ``max_rejections`` times.

Positions are stored as float32 and the simulation continues from the stored
value, so every stored position passes the interior test exactly.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, StuckPathError
from .geometry import _point
from .rng import MAX_ATTEMPTS, StreamFactory

log = logging.getLogger(__name__)

PATH_CHUNK = 8192


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    n_steps: int
    dt: float
    max_rejections: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise ConfigError("n_paths and n_steps must be >= 1")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt must be a positive finite number")
        if not 1 <= self.max_rejections <= MAX_ATTEMPTS:
            raise ConfigError(f"max_rejections must be in [1, {MAX_ATTEMPTS}]")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")

    @property
    def max_time(self):
        return self.n_steps * self.dt

    @property
    def t_grid(self):
        return self.dt * np.arange(1, self.n_steps + 1)


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated paths from one start point.

    ``positions[j, l]`` is path ``j`` after step ``l + 1``, i.e. at diffusion
    time ``(l + 1) * dt``.
    """

    start: np.ndarray
    config: SimConfig
    positions: np.ndarray
    domain_name: str = ""
    rejections: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_paths(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[2]

    def at_step(self, step_index):
        """Positions at 1-based step ``step_index`` as float64, shape ``(N, d)``."""
        if not 1 <= step_index <= self.config.n_steps:
            raise IndexError(f"step_index {step_index} outside [1, {self.config.n_steps}]")
        return self.positions[:, step_index - 1, :].astype(np.float64)


def drift_at(domain, x):
    """Deterministic per-unit-time increment of the Euler-Maruyama step."""
    x = _point(domain, x)
    return domain.drift_batch(x[None])[0]


def propose_step(domain, x, dt, noise):
    """One unchecked Euler-Maruyama proposal from ``x``."""
    x = _point(domain, x)
    z = np.asarray(noise, dtype=float).reshape(1, -1)
    return _propose(domain, x[None], dt, z)[0]


def _propose(domain, X, dt, Z):
    if domain.flat:
        return X + math.sqrt(dt) * Z
    return X + domain.drift_batch(X) * dt + math.sqrt(dt) * domain.diffuse_batch(X, Z)


def _simulate_chunk(domain, stream, paths, start, cfg):
    d = domain.dim
    keys = stream.path_keys(paths)
    out = np.empty((len(paths), cfg.n_steps, d), dtype=np.float32)
    x = np.broadcast_to(start, (len(paths), d)).astype(np.float64)
    rejected_total = 0
    for step in range(cfg.n_steps):
        todo = np.arange(len(paths))
        new = np.empty_like(x)
        attempt = 0
        while len(todo):
            if attempt > cfg.max_rejections:
                bad = todo[0]
                raise StuckPathError(int(paths[bad]), step + 1, x[bad].tolist(), attempt)
            z = stream.normals(keys[todo], step, attempt, d)
            prop = _propose(domain, x[todo], cfg.dt, z).astype(np.float32).astype(np.float64)
            ok = domain.inside_batch(prop)
            new[todo[ok]] = prop[ok]
            rejected_total += int(np.count_nonzero(~ok))
            todo = todo[~ok]
            attempt += 1
        x = new
        out[:, step, :] = x
    return out, rejected_total


def simulate_ensemble(domain, start, cfg, streams=None, workers=1):
    """Simulate ``cfg.n_paths`` paths of ``cfg.n_steps`` steps from ``start``.

    Parameters
    ----------
    streams : StreamFactory, optional
        Defaults to ``StreamFactory(cfg.seed)``.
    workers : int
        Threads over path chunks.  The result does not depend on it.
    """
    start = _point(domain, start)
    if not domain.inside_batch(start[None])[0]:
        raise DomainError(f"start point {start.tolist()} is not inside domain {domain.name!r}")
    stream = (streams or StreamFactory(cfg.seed)).for_start(start)
    chunks = [np.arange(a, min(a + PATH_CHUNK, cfg.n_paths), dtype=np.uint64)
              for a in range(0, cfg.n_paths, PATH_CHUNK)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda p: _simulate_chunk(domain, stream, p, start, cfg), chunks))
    else:
        parts = [_simulate_chunk(domain, stream, p, start, cfg) for p in chunks]
    positions = np.concatenate([p[0] for p in parts], axis=0)
    positions.setflags(write=False)
    rejections = sum(p[1] for p in parts)
    log.debug("simulated %d paths from %s (%d rejections)", cfg.n_paths, start, rejections)
    return PathEnsemble(start=start, config=cfg, positions=positions,
                        domain_name=domain.name, rejections=rejections)
