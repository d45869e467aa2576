"""On-disk cache of simulated path ensembles.

File layout (little endian)::

    magic     8 bytes  b"INGPENS1"
    version   u16
    name_len  u16, then the UTF-8 domain name
    fp_len    u16, then the ASCII domain fingerprint
    dim       u16, then dim float64 start coordinates
    n_paths   u64
    n_steps   u64
    dt        f64
    max_rej   u32
    seed      u64
    rejects   u64
    payload   n_paths * n_steps * dim float32
    sha256    32 bytes over everything above

Writes go to a temporary file that is renamed into place.
"""

import hashlib
import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .bm_sim import PathEnsemble, SimConfig, simulate_ensemble
from .errors import ResourceError

log = logging.getLogger(__name__)

MAGIC = b"INGPENS1"
VERSION = 1
ENV_VAR = "INGP_CACHE_DIR"


def cache_key(domain, start, cfg):
    h = hashlib.sha256()
    h.update(domain.fingerprint().encode())
    h.update(np.asarray(start, dtype=np.float64).tobytes())
    h.update(struct.pack("<QQdIQ", cfg.n_paths, cfg.n_steps, cfg.dt, cfg.max_rejections, cfg.seed))
    h.update(struct.pack("<H", VERSION))
    return h.hexdigest()[:32]


def _header(ens, fingerprint):
    name = ens.domain_name.encode()
    fp = fingerprint.encode()
    start = np.asarray(ens.start, dtype="<f8")
    cfg = ens.config
    return b"".join([
        MAGIC,
        struct.pack("<H", VERSION),
        struct.pack("<H", len(name)), name,
        struct.pack("<H", len(fp)), fp,
        struct.pack("<H", start.size), start.tobytes(),
        struct.pack("<QQdIQQ", cfg.n_paths, cfg.n_steps, cfg.dt, cfg.max_rejections,
                    cfg.seed, ens.rejections),
    ])


def write_ensemble(path, ens, fingerprint=""):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = _header(ens, fingerprint)
    payload = np.ascontiguousarray(ens.positions, dtype="<f4").tobytes()
    digest = hashlib.sha256(head)
    digest.update(payload)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".ens")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(head)
            fh.write(payload)
            fh.write(digest.digest())
        os.replace(tmp, path)
    except OSError as exc:
        Path(tmp).unlink(missing_ok=True)
        raise ResourceError(f"cannot write ensemble cache {path}: {exc}") from None


class CorruptCacheError(ResourceError):
    pass


def read_ensemble(path):
    """Load and verify a cache file; returns ``(ensemble, fingerprint)``."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 32 or data[:8] != MAGIC:
        raise CorruptCacheError(f"{path}: not an ensemble cache file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCacheError(f"{path}: checksum mismatch")
    pos = 8
    (version,) = struct.unpack_from("<H", body, pos)
    pos += 2
    if version != VERSION:
        raise CorruptCacheError(f"{path}: unsupported version {version}")

    def take_str():
        nonlocal pos
        (n,) = struct.unpack_from("<H", body, pos)
        pos += 2
        s = body[pos:pos + n].decode()
        pos += n
        return s

    name = take_str()
    fingerprint = take_str()
    (dim,) = struct.unpack_from("<H", body, pos)
    pos += 2
    start = np.frombuffer(body, dtype="<f8", count=dim, offset=pos).copy()
    pos += 8 * dim
    n_paths, n_steps, dt, max_rej, seed, rejects = struct.unpack_from("<QQdIQQ", body, pos)
    pos += struct.calcsize("<QQdIQQ")
    count = n_paths * n_steps * dim
    if len(body) - pos != 4 * count:
        raise CorruptCacheError(f"{path}: payload size mismatch")
    positions = np.frombuffer(body, dtype="<f4", count=count, offset=pos)
    positions = positions.reshape(n_paths, n_steps, dim).astype(np.float32)
    positions.setflags(write=False)
    cfg = SimConfig(n_paths, n_steps, dt, max_rej, seed)
    return PathEnsemble(start=start, config=cfg, positions=positions, domain_name=name,
                        rejections=rejects), fingerprint


def default_cache_dir():
    env = os.environ.get(ENV_VAR)
    return Path(env) if env else None


class EnsembleStore:
    """Simulate-or-load access to ensembles.

    Parameters
    ----------
    cache_dir : path, optional
        Where ensembles are persisted; ``None`` disables the disk cache.
    workers : int
        Passed through to :func:`simulate_ensemble`.
    """

    def __init__(self, cache_dir=None, workers=1):
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.workers = workers
        self.simulated = 0
        self.loaded = 0

    def path_for(self, domain, start, cfg):
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{domain.name}-{cache_key(domain, start, cfg)}.ens"

    def get(self, domain, start, cfg):
        path = self.path_for(domain, start, cfg)
        if path is not None and path.exists():
            try:
                ens, fp = read_ensemble(path)
            except CorruptCacheError as exc:
                log.warning("discarding cache entry: %s", exc)
            else:
                if fp == domain.fingerprint():
                    self.loaded += 1
                    return ens
                log.warning("cache entry %s belongs to another domain; re-simulating", path)
        ens = simulate_ensemble(domain, start, cfg, workers=self.workers)
        self.simulated += 1
        if path is not None:
            write_ensemble(path, ens, domain.fingerprint())
        return ens

    def iter(self, domain, starts, cfg):
        for s in starts:
            yield self.get(domain, s, cfg)


def list_cache(cache_dir):
    """``(path, size, header summary or error)`` for each cache file."""
    out = []
    for p in sorted(Path(cache_dir).glob("*.ens")):
        try:
            ens, _ = read_ensemble(p)
            info = (f"{ens.domain_name} start={ens.start.tolist()} N={ens.config.n_paths} "
                    f"T={ens.config.n_steps} dt={ens.config.dt} seed={ens.config.seed}")
        except ResourceError as exc:
            info = f"INVALID: {exc}"
        out.append((p, p.stat().st_size, info))
    return out


def clear_cache(cache_dir):
    n = 0
    for p in Path(cache_dir).glob("*.ens"):
        p.unlink()
        n += 1
    return n
