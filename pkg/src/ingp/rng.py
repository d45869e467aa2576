"""Counter-based random streams for Brownian-motion simulation.

Every standard normal used by the simulator is a pure function of
``(seed, start point, path index, step, attempt, component)``.  Nothing is
drawn sequentially, so splitting paths across workers, or re-running a single
path, reproduces the same numbers bit for bit.

The bit mixer is the SplitMix64 finaliser; uniforms take the top 53 bits and
normals come from the Box-Muller transform.
"""

import hashlib
import struct

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1

# counter layout: step (40 bits) | attempt (20 bits) | component block (4 bits)
MAX_ATTEMPTS = (1 << 20) - 1
MAX_BLOCKS = 1 << 4


def mix64_int(z):
    """SplitMix64 finaliser on a Python int."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def mix64(z):
    """SplitMix64 finaliser, elementwise on a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def _uniform53(bits):
    # strictly inside (0, 1)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def start_key(seed, start):
    """Derive the 64-bit key of one start point from the master seed."""
    start = np.ascontiguousarray(np.asarray(start, dtype=np.float64).ravel())
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", int(seed) & _MASK))
    h.update(start.tobytes())
    return int.from_bytes(h.digest(), "little")


class PathStream:
    """Normals for the paths of one start point.

    Parameters
    ----------
    key : int
        64-bit key from :func:`start_key`.
    """

    def __init__(self, key):
        self.key = int(key) & _MASK

    def path_keys(self, paths):
        paths = np.asarray(paths, dtype=np.uint64)
        base = np.uint64(self.key)
        return mix64(base + (paths + np.uint64(1)) * np.uint64(_GOLDEN))

    def normals(self, path_keys, step, attempt, dim):
        """Standard normals of shape ``(len(path_keys), dim)``.

        ``path_keys`` comes from :meth:`path_keys`; passing the keys rather
        than indices lets the simulator hash each path once per ensemble.
        """
        if attempt > MAX_ATTEMPTS:
            raise ValueError("attempt counter overflow")
        n_pairs = (dim + 1) // 2
        if n_pairs > MAX_BLOCKS // 2:
            raise ValueError(f"dimension {dim} exceeds stream capacity")
        out = np.empty((len(path_keys), 2 * n_pairs))
        base = (int(step) << 24) | (int(attempt) << 4)
        for p in range(n_pairs):
            c1 = np.uint64(mix64_int(base | (2 * p)))
            c2 = np.uint64(mix64_int(base | (2 * p + 1)))
            u1 = _uniform53(mix64(path_keys ^ c1))
            u2 = _uniform53(mix64(path_keys ^ c2))
            r = np.sqrt(-2.0 * np.log(u1))
            theta = 2.0 * np.pi * u2
            out[:, 2 * p] = r * np.cos(theta)
            out[:, 2 * p + 1] = r * np.sin(theta)
        return out[:, :dim]


class StreamFactory:
    """Hands out a :class:`PathStream` per start point.

    Stateless apart from the seed, so one factory can be shared by any number
    of workers.
    """

    def __init__(self, seed):
        self.seed = int(seed)

    def for_start(self, start):
        return PathStream(start_key(self.seed, start))
