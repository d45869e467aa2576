"""Domains given by a single chart: metric tensor, boundary and embedding.

Points live in chart coordinates.  A domain supplies the metric ``g(x)``,
its partial derivatives, a strict interior test and (optionally) a map into
ambient space.  Everything is vectorised over a leading batch axis because
the simulator evaluates thousands of paths per step; the single-point
functions at the bottom of the module wrap the batch versions.

Built-ins: Euclidean space of any dimension (optionally clipped by a box or
polygon), the U-shaped domain, and the Swiss roll
``x(r, z) = (r cos r, r sin r, z)`` whose metric is ``diag(1 + r**2, 1)``.
"""

import ast
import hashlib
import math
import shlex
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DegenerateMetricError, DomainError, NoEmbeddingError

FD_STEP = 1e-5


# ---------------------------------------------------------------------------
# metric tensor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricTensor:
    g: np.ndarray
    det_g: float
    inv_g: np.ndarray
    sqrt_inv_g: np.ndarray

    @classmethod
    def from_matrix(cls, g, point=None):
        g = np.array(g, dtype=float)
        where = point if point is not None else []
        if not np.all(np.isfinite(g)):
            raise DegenerateMetricError(where, "non-finite entries")
        if not np.allclose(g, g.T, rtol=1e-10, atol=1e-12):
            raise DegenerateMetricError(where, "metric is not symmetric")
        g = 0.5 * (g + g.T)
        lam, q = np.linalg.eigh(g)
        if lam[0] <= 0:
            raise DegenerateMetricError(where)
        inv_g = (q / lam) @ q.T
        sqrt_inv_g = (q / np.sqrt(lam)) @ q.T
        for a in (g, inv_g, sqrt_inv_g):
            a.setflags(write=False)
        return cls(g=g, det_g=float(np.prod(lam)), inv_g=inv_g, sqrt_inv_g=sqrt_inv_g)


def _check_metric_batch(G, X):
    bad = ~np.all(np.isfinite(G), axis=(1, 2))
    if np.any(bad):
        raise DegenerateMetricError(X[np.argmax(bad)], "non-finite entries")


# ---------------------------------------------------------------------------
# boundaries
# ---------------------------------------------------------------------------


class BoxBoundary:
    """Open axis-aligned box ``lower < x < upper``."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != self.upper.shape or np.any(self.lower >= self.upper):
            raise DomainError("box bounds must satisfy lower < upper")

    @property
    def dim(self):
        return self.lower.size

    def contains(self, X):
        X = np.asarray(X, dtype=float)
        return np.all((X > self.lower) & (X < self.upper), axis=-1)

    def bounds(self):
        return self.lower.copy(), self.upper.copy()

    def translated(self, offset):
        return BoxBoundary(self.lower + offset, self.upper + offset)

    def signature(self):
        return b"box" + self.lower.tobytes() + self.upper.tobytes()


def _signed_area(ring):
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


def _segments_intersect(p1, p2, q1, q2):
    """Closed-segment intersection test, vectorised over leading axes."""

    def orient(a, b, c):
        return np.sign((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                       - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))

    def on_seg(a, b, c):
        return ((np.minimum(a[..., 0], b[..., 0]) <= c[..., 0])
                & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]))
                & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1])
                & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1])))

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    hit = (o1 != o2) & (o3 != o4) & (o1 != 0) & (o2 != 0) & (o3 != 0) & (o4 != 0)
    hit |= (o1 == 0) & on_seg(p1, p2, q1)
    hit |= (o2 == 0) & on_seg(p1, p2, q2)
    hit |= (o3 == 0) & on_seg(q1, q2, p1)
    hit |= (o4 == 0) & on_seg(q1, q2, p2)
    return hit


class PolygonBoundary:
    """Closed rings in the plane; the first ring is the outer boundary.

    Interior is decided by even-odd ray casting, and points lying on an edge
    are outside.  Rings are stored closed (first vertex repeated at the end),
    the outer ring counter-clockwise and holes clockwise.

    Parameters
    ----------
    rings : sequence of (k, 2) array_like
        Vertex lists.  An open ring is closed automatically.
    validate : bool
        Reject degenerate or self-intersecting rings.
    """

    _CELLS = 128

    def __init__(self, rings, validate=True):
        closed = []
        for i, ring in enumerate(rings):
            r = np.array(ring, dtype=float)
            if r.ndim != 2 or r.shape[1] != 2:
                raise DomainError(f"ring {i}: vertices must be 2-D points")
            if not np.array_equal(r[0], r[-1]):
                r = np.vstack([r, r[:1]])
            if len(r) < 4:
                raise DomainError(f"ring {i}: needs at least 3 distinct vertices")
            area = _signed_area(r)
            if area == 0:
                raise DomainError(f"ring {i}: zero area")
            want_ccw = i == 0
            if (area > 0) != want_ccw:
                r = r[::-1].copy()
            r.setflags(write=False)
            closed.append(r)
        if not closed:
            raise DomainError("polygon needs at least one ring")
        self.rings = tuple(closed)
        starts = np.vstack([r[:-1] for r in self.rings])
        ends = np.vstack([r[1:] for r in self.rings])
        self._a = starts
        self._b = ends
        lo = starts.min(axis=0)
        hi = starts.max(axis=0)
        self._lo, self._hi = lo, hi
        self._tol = 1e-12 * float(np.hypot(*(hi - lo)))
        self._cells = None
        if validate:
            self._validate()

    @property
    def dim(self):
        return 2

    def _validate(self):
        a, b = self._a, self._b
        n = len(a)
        ring_id = np.concatenate([np.full(len(r) - 1, k) for k, r in enumerate(self.rings)])
        local = np.concatenate([np.arange(len(r) - 1) for r in self.rings])
        sizes = np.array([len(r) - 1 for r in self.rings])[ring_id]
        if np.any(np.all(a == b, axis=1)):
            raise DomainError("polygon has a repeated consecutive vertex")
        for i in range(n - 1):
            j = np.arange(i + 1, n)
            same = ring_id[j] == ring_id[i]
            adjacent = same & (
                ((local[j] - local[i]) % sizes[i] == 1) | ((local[i] - local[j]) % sizes[i] == 1)
            )
            j = j[~adjacent]
            if len(j) == 0:
                continue
            hit = _segments_intersect(a[i], b[i], a[j], b[j])
            if np.any(hit):
                k = j[np.argmax(hit)]
                raise DomainError(
                    f"polygon self-intersects: edge {i} ({a[i]} -> {b[i]}) "
                    f"meets edge {k} ({a[k]} -> {b[k]})"
                )

    def bounds(self):
        return self._lo.copy(), self._hi.copy()

    def area(self):
        return abs(_signed_area(self.rings[0])) - sum(abs(_signed_area(r)) for r in self.rings[1:])

    def translated(self, offset):
        offset = np.asarray(offset, dtype=float)
        return PolygonBoundary([r + offset for r in self.rings], validate=False)

    def signature(self):
        return b"poly" + b"|".join(r.tobytes() for r in self.rings)

    # -- exact predicates ---------------------------------------------------

    def crossing_parity(self, X, angle=0.0):
        """Even-odd parity of edge crossings along a ray at ``angle`` radians.

        Ignores the on-edge case; :meth:`contains` handles that separately.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a, b = self._a, self._b
        if angle:
            c, s = math.cos(angle), math.sin(angle)
            rot = np.array([[c, s], [-s, c]])  # rotate by -angle
            X = X @ rot.T
            a = a @ rot.T
            b = b @ rot.T
        out = np.zeros(len(X), dtype=bool)
        chunk = max(1, 2_000_000 // max(1, len(a)))
        ax, ay, bx, by = (v[:, None] for v in (a[:, 0], a[:, 1], b[:, 0], b[:, 1]))
        with np.errstate(divide="ignore", invalid="ignore"):
            for s0 in range(0, len(X), chunk):
                px = X[s0:s0 + chunk, 0][None, :]
                py = X[s0:s0 + chunk, 1][None, :]
                straddle = (ay > py) != (by > py)
                xint = ax + (py - ay) * (bx - ax) / (by - ay)
                cross = straddle & (px < xint)
                out[s0:s0 + chunk] = (np.count_nonzero(cross, axis=0) % 2) == 1
        return out

    def on_edge(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a, b = self._a, self._b
        out = np.zeros(len(X), dtype=bool)
        chunk = max(1, 2_000_000 // max(1, len(a)))
        ex, ey = (b - a)[:, 0][:, None], (b - a)[:, 1][:, None]
        length = np.hypot(ex, ey)
        for s0 in range(0, len(X), chunk):
            dx = X[s0:s0 + chunk, 0][None, :] - a[:, 0][:, None]
            dy = X[s0:s0 + chunk, 1][None, :] - a[:, 1][:, None]
            cross = ex * dy - ey * dx
            dot = ex * dx + ey * dy
            hit = (np.abs(cross) <= self._tol * length) & (dot >= 0) & (dot <= length**2)
            out[s0:s0 + chunk] = np.any(hit, axis=0)
        return out

    def _contains_exact(self, X):
        return self.crossing_parity(X) & ~self.on_edge(X)

    # -- cell-accelerated membership --------------------------------------

    def _build_cells(self):
        n = self._CELLS
        span = self._hi - self._lo
        lo = self._lo - 1e-3 * span
        size = span * (1 + 2e-3) / n
        status = np.zeros((n, n), dtype=np.int8)
        boundary = np.zeros((n, n), dtype=bool)
        step = 0.25 * float(size.min())
        for a, b in zip(self._a, self._b):
            k = max(2, int(math.ceil(np.hypot(*(b - a)) / step)) + 1)
            pts = a + np.linspace(0.0, 1.0, k)[:, None] * (b - a)
            idx = np.floor((pts - lo) / size).astype(int)
            idx = np.clip(idx, 0, n - 1)
            boundary[idx[:, 0], idx[:, 1]] = True
        dil = boundary.copy()
        dil[1:, :] |= boundary[:-1, :]
        dil[:-1, :] |= boundary[1:, :]
        b2 = dil.copy()
        b2[:, 1:] |= dil[:, :-1]
        b2[:, :-1] |= dil[:, 1:]
        ii, jj = np.nonzero(~b2)
        centers = lo + (np.stack([ii, jj], axis=1) + 0.5) * size
        status[ii, jj] = self._contains_exact(centers).astype(np.int8)
        status[b2] = 2
        self._cells = (lo, size, status)

    def contains(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if len(X) < 64:
            out = self._contains_exact(X)
        else:
            if self._cells is None:
                self._build_cells()
            lo, size, status = self._cells
            n = status.shape[0]
            idx = np.floor((X - lo) / size)
            ok = np.all((idx >= 0) & (idx < n), axis=1) & np.all(np.isfinite(X), axis=1)
            out = np.zeros(len(X), dtype=bool)
            ii = idx[ok].astype(int)
            st = status[ii[:, 0], ii[:, 1]]
            sel = np.flatnonzero(ok)
            out[sel[st == 1]] = True
            fuzzy = sel[st == 2]
            if len(fuzzy):
                out[fuzzy] = self._contains_exact(X[fuzzy])
        return out[0] if single else out


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------


class Domain:
    """Base class: a single chart with optional boundary.

    Subclasses override :meth:`metric_batch` (and, when they can,
    :meth:`metric_jacobian_batch`).  The default Jacobian is a central
    difference of the metric with step ``FD_STEP``.
    """

    flat = False

    def __init__(self, dim, boundary=None, name="domain"):
        self.dim = int(dim)
        if self.dim < 1:
            raise DomainError("chart dimension must be >= 1")
        if boundary is not None and boundary.dim != self.dim:
            raise DomainError(
                f"boundary is {boundary.dim}-dimensional but the chart has dimension {self.dim}"
            )
        self.boundary = boundary
        self.name = str(name)

    # metric -------------------------------------------------------------

    def metric_batch(self, X):
        X = np.atleast_2d(X)
        return np.broadcast_to(np.eye(self.dim), (len(X), self.dim, self.dim)).copy()

    def metric_jacobian_batch(self, X):
        """``out[n, j] = dg/dx_j`` at ``X[n]``, shape ``(N, d, d, d)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d = self.dim
        out = np.empty((len(X), d, d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = FD_STEP
            out[:, j] = (self.metric_batch(X + e) - self.metric_batch(X - e)) / (2 * FD_STEP)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def inverse_metric_batch(self, X):
        G = self.metric_batch(X)
        _check_metric_batch(G, np.atleast_2d(X))
        return np.linalg.inv(G)

    def sqrt_inv_metric_batch(self, X):
        X = np.atleast_2d(X)
        G = self.metric_batch(X)
        _check_metric_batch(G, X)
        lam, q = np.linalg.eigh(G)
        if np.any(lam[:, 0] <= 0):
            raise DegenerateMetricError(X[np.argmin(lam[:, 0])])
        return np.einsum("nik,nk,njk->nij", q, 1.0 / np.sqrt(lam), q)

    def sqrt_det_metric_batch(self, X):
        return np.sqrt(np.linalg.det(self.metric_batch(X)))

    # Brownian-motion coefficients ----------------------------------------

    def drift_batch(self, X):
        """Per-unit-time drift of Brownian motion in this chart.

        ``sum_j (-g^-1 dg_j g^-1)_ij + 1/2 sum_j (g^-1)_ij tr(g^-1 dg_j)``
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.flat:
            return np.zeros_like(X)
        ginv = self.inverse_metric_batch(X)
        dg = self.metric_jacobian_batch(X)
        first = -np.einsum("nia,njab,nbj->ni", ginv, dg, ginv)
        trace = np.einsum("nab,njba->nj", ginv, dg)
        second = 0.5 * np.einsum("nij,nj->ni", ginv, trace)
        return first + second

    def diffuse_batch(self, X, Z):
        """Apply ``g^{-1/2}`` to the noise vectors ``Z`` row by row."""
        if self.flat:
            return np.asarray(Z, dtype=float)
        S = self.sqrt_inv_metric_batch(X)
        return np.einsum("nij,nj->ni", S, Z)

    # membership and embedding -------------------------------------------

    def inside_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        finite = np.all(np.isfinite(X), axis=1)
        if self.boundary is None:
            return finite
        return finite & self.boundary.contains(X)

    @property
    def has_embedding(self):
        return False

    def embed_batch(self, X):
        raise NoEmbeddingError(f"domain {self.name!r} has no embedding")

    def bounds(self):
        if self.boundary is None:
            return None
        return self.boundary.bounds()

    def translated(self, offset):
        raise DomainError(f"domain {self.name!r} cannot be translated")

    def _params_signature(self):
        return b""

    def fingerprint(self):
        """Stable hash of everything that changes simulated paths."""
        h = hashlib.sha256()
        h.update(type(self).__name__.encode())
        h.update(self.name.encode())
        h.update(str(self.dim).encode())
        if self.boundary is not None:
            h.update(self.boundary.signature())
        h.update(self._params_signature())
        return h.hexdigest()[:16]

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim})"


class EuclideanDomain(Domain):
    """Flat chart: identity metric, optionally restricted by a boundary."""

    flat = True

    def __init__(self, dim, boundary=None, name=None):
        super().__init__(dim, boundary, name or f"euclidean{dim}")

    def metric_jacobian_batch(self, X):
        X = np.atleast_2d(X)
        d = self.dim
        return np.zeros((len(X), d, d, d))

    def sqrt_inv_metric_batch(self, X):
        return self.metric_batch(X)

    def inverse_metric_batch(self, X):
        return self.metric_batch(X)

    def sqrt_det_metric_batch(self, X):
        return np.ones(len(np.atleast_2d(X)))

    @property
    def has_embedding(self):
        return True

    def embed_batch(self, X):
        return np.atleast_2d(np.asarray(X, dtype=float)).copy()

    def translated(self, offset):
        b = None if self.boundary is None else self.boundary.translated(offset)
        return EuclideanDomain(self.dim, b, self.name)


class ChartDomain(Domain):
    """User chart given by an embedding map or by a metric field.

    Parameters
    ----------
    dim : int
        Chart dimension.
    embedding : callable, optional
        Vectorised map ``(N, d) -> (N, D)``.  When given without ``metric``,
        the metric is ``J^T J`` with ``J`` from central differences.
    metric : callable, optional
        Vectorised map ``(N, d) -> (N, d, d)``.
    """

    def __init__(self, dim, embedding=None, metric=None, boundary=None, name="chart",
                 embedding_source=""):
        super().__init__(dim, boundary, name)
        if embedding is None and metric is None:
            raise DomainError("a chart domain needs an embedding or a metric field")
        self._embedding = embedding
        self._metric = metric
        self.embedding_source = embedding_source

    def metric_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self._metric is not None:
            return np.asarray(self._metric(X), dtype=float)
        J = embedding_jacobian(self._embedding, X)
        return np.einsum("nki,nkj->nij", J, J)

    @property
    def has_embedding(self):
        return self._embedding is not None

    def embed_batch(self, X):
        if self._embedding is None:
            return super().embed_batch(X)
        return np.asarray(self._embedding(np.atleast_2d(np.asarray(X, dtype=float))), dtype=float)

    def translated(self, offset):
        offset = np.asarray(offset, dtype=float)
        emb = None if self._embedding is None else (lambda X, f=self._embedding: f(X - offset))
        met = None if self._metric is None else (lambda X, f=self._metric: f(X - offset))
        b = None if self.boundary is None else self.boundary.translated(offset)
        return ChartDomain(self.dim, emb, met, b, self.name, self.embedding_source)

    def _params_signature(self):
        return self.embedding_source.encode()


def embedding_jacobian(embedding, X, h=FD_STEP):
    """Central-difference Jacobian ``(N, D, d)`` of a vectorised embedding."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cols = []
    for j in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[j] = h
        cols.append((np.asarray(embedding(X + e)) - np.asarray(embedding(X - e))) / (2 * h))
    return np.stack(cols, axis=-1)


class SwissRoll(Domain):
    """Swiss roll in chart coordinates ``(r, z)`` on an open box.

    The default ranges ``r in (1.5 pi, 4.5 pi)`` give one and a half turns,
    so the centre of the roll sits a radial distance ``2 pi`` from its tail.
    """

    def __init__(self, r_range=(1.5 * math.pi, 4.5 * math.pi), z_range=(0.0, 10.0),
                 name="swissroll"):
        self.r_range = tuple(float(v) for v in r_range)
        self.z_range = tuple(float(v) for v in z_range)
        box = BoxBoundary([self.r_range[0], self.z_range[0]], [self.r_range[1], self.z_range[1]])
        super().__init__(2, box, name)

    def metric_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        G = np.zeros((len(X), 2, 2))
        G[:, 0, 0] = 1.0 + X[:, 0] ** 2
        G[:, 1, 1] = 1.0
        return G

    def metric_jacobian_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros((len(X), 2, 2, 2))
        out[:, 0, 0, 0] = 2.0 * X[:, 0]
        return out

    def inverse_metric_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros((len(X), 2, 2))
        out[:, 0, 0] = 1.0 / (1.0 + X[:, 0] ** 2)
        out[:, 1, 1] = 1.0
        return out

    def sqrt_inv_metric_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros((len(X), 2, 2))
        out[:, 0, 0] = 1.0 / np.sqrt(1.0 + X[:, 0] ** 2)
        out[:, 1, 1] = 1.0
        return out

    def sqrt_det_metric_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.sqrt(1.0 + X[:, 0] ** 2)

    def drift_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        r = X[:, 0]
        out = np.zeros_like(X)
        out[:, 0] = -r / (1.0 + r**2) ** 2
        return out

    def diffuse_batch(self, X, Z):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = np.array(Z, dtype=float)
        Z[:, 0] /= np.sqrt(1.0 + X[:, 0] ** 2)
        return Z

    @property
    def has_embedding(self):
        return True

    def embed_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        r, z = X[:, 0], X[:, 1]
        return np.stack([r * np.cos(r), r * np.sin(r), z], axis=1)

    def _params_signature(self):
        return np.array(self.r_range + self.z_range).tobytes()


# ---------------------------------------------------------------------------
# built-in shapes
# ---------------------------------------------------------------------------

USHAPE_CENTER = (0.5, 0.0)
USHAPE_INNER_RADIUS = 0.5
USHAPE_OUTER_RADIUS = 1.5
USHAPE_ARM_END = 3.5
USHAPE_ARC_SEGMENTS = 32


def ushape_vertices(n_arc=USHAPE_ARC_SEGMENTS):
    """Closed counter-clockwise vertex ring of the U-shaped domain.

    Two arms of width 1 (``y in [0.5, 1.5]`` and ``y in [-1.5, -0.5]``,
    ``x in [0.5, 3.5]``) joined on the left by a half annulus centred at
    ``(0.5, 0)`` with radii 0.5 and 1.5.  Each arc is split into ``n_arc``
    chords.
    """
    cx, cy = USHAPE_CENTER
    ri, ro, xe = USHAPE_INNER_RADIUS, USHAPE_OUTER_RADIUS, USHAPE_ARM_END
    inner = np.linspace(1.5 * np.pi, 0.5 * np.pi, n_arc + 1)[1:-1]
    outer = np.linspace(0.5 * np.pi, 1.5 * np.pi, n_arc + 1)[1:-1]
    pts = [(xe, cy - ro), (xe, cy - ri), (cx, cy - ri)]
    pts += [(cx + ri * np.cos(a), cy + ri * np.sin(a)) for a in inner]
    pts += [(cx, cy + ri), (xe, cy + ri), (xe, cy + ro), (cx, cy + ro)]
    pts += [(cx + ro * np.cos(a), cy + ro * np.sin(a)) for a in outer]
    pts += [(cx, cy - ro), (xe, cy - ro)]
    return np.array(pts)


def ushape():
    return EuclideanDomain(2, PolygonBoundary([ushape_vertices()]), name="ushape")


def euclidean(dim, lower=None, upper=None):
    box = None if lower is None else BoxBoundary(lower, upper)
    return EuclideanDomain(dim, box)


def builtin_domain(name):
    """Look up a built-in domain by name.

    ``euclidean<d>`` / ``r<d>`` give unbounded flat space, plus ``ushape``,
    ``swissroll`` and ``aral`` (the shipped lake polygon).
    """
    key = name.lower()
    if key == "ushape":
        return ushape()
    if key == "swissroll":
        return SwissRoll()
    if key == "aral":
        from .datasets import aral_domain

        return aral_domain()
    for prefix in ("euclidean", "r"):
        if key.startswith(prefix) and key[len(prefix):].isdigit():
            return EuclideanDomain(int(key[len(prefix):]))
    raise DomainError(f"unknown built-in domain {name!r}")


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


def interior_grid(domain, m_target, bounds=None):
    """Cell-centred regular grid clipped to the interior, about ``m_target`` points.

    Tries every column count and keeps the grid whose interior count is
    closest to ``m_target`` (first one on ties), so the result is
    deterministic.
    """
    if m_target < 1:
        raise ValueError("m_target must be >= 1")
    if bounds is None:
        bounds = domain.bounds()
        if bounds is None:
            raise DomainError("unbounded domain: pass explicit grid bounds")
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    span = hi - lo
    d = domain.dim
    best = None
    max_cols = int(math.ceil((4 * m_target) ** (1.0 / d) * max(1.0, span[0] / span.min()))) + 2
    for n0 in range(1, max_cols + 1):
        h = span[0] / n0
        counts = [n0] + [max(1, int(round(s / h))) for s in span[1:]]
        if np.prod(counts) > 200 * m_target + 1000:
            break
        axes = [lo[k] + (np.arange(c) + 0.5) * span[k] / c for k, c in enumerate(counts)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        pts = mesh[domain.inside_batch(mesh)]
        err = abs(len(pts) - m_target)
        if len(pts) and (best is None or err < best[0]):
            best = (err, pts)
        if err == 0:
            break
    if best is None:
        raise DomainError("grid has no interior points; use a finer grid")
    return best[1]


# ---------------------------------------------------------------------------
# embedding expressions and domain files
# ---------------------------------------------------------------------------

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh,
    "arctan": np.arctan, "abs": np.abs,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
    ast.Div: np.divide, ast.Pow: np.power,
}


def compile_expression(source, dim):
    """Compile comma-separated expressions in ``x0..x{d-1}`` to a vectorised map."""
    try:
        tree = ast.parse(f"({source},)", mode="eval")
    except SyntaxError as exc:
        raise DataError(f"bad embedding expression {source!r}: {exc.msg}") from None

    def ev(node, X):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return np.full(len(X), float(node.value))
        if isinstance(node, ast.Name):
            if node.id in _CONSTS:
                return np.full(len(X), _CONSTS[node.id])
            if node.id.startswith("x") and node.id[1:].isdigit() and int(node.id[1:]) < dim:
                return X[:, int(node.id[1:])]
            raise DataError(f"unknown name {node.id!r} in embedding expression")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left, X), ev(node.right, X))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand, X)
            return -v if isinstance(node.op, ast.USub) else v
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0], X))
        raise DataError(f"unsupported construct in embedding expression: {ast.dump(node)}")

    components = tree.body.elts

    def embedding(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([ev(c, X) for c in components], axis=1)

    embedding(np.zeros((1, dim)))  # fail early on bad names
    return embedding


_NAMED_EMBEDDINGS = {
    "cylinder": (2, "cos(x0), sin(x0), x1"),
    "swissroll": (2, "x0*cos(x0), x0*sin(x0), x1"),
}


def parse_domain_text(text, source="<string>"):
    """Parse the domain file format.

    Header line ``dim=<d> name=<id>`` with optional ``embedding=<builtin or
    expression>`` and ``box=lo:hi,lo:hi``; then one ``x y`` vertex per line,
    rings separated by blank lines.  ``#`` starts a comment.
    """
    lines = text.splitlines()
    header = None
    rings, current = [], []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if header is None:
            if not line:
                continue
            try:
                header = dict(tok.split("=", 1) for tok in shlex.split(line))
            except ValueError:
                raise DataError(f"{source}:{lineno}: header must be key=value tokens") from None
            continue
        if not line:
            if current:
                rings.append(current)
                current = []
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{source}:{lineno}: expected 'x y', got {raw.strip()!r}")
        try:
            current.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise DataError(f"{source}:{lineno}: non-numeric vertex {raw.strip()!r}") from None
    if current:
        rings.append(current)
    if header is None or "dim" not in header:
        raise DataError(f"{source}: missing 'dim=<d> name=<id>' header")
    try:
        dim = int(header["dim"])
    except ValueError:
        raise DataError(f"{source}: dim must be an integer") from None
    name = header.get("name", Path(source).stem)
    boundary = None
    if rings:
        if dim != 2:
            raise DataError(f"{source}: polygon rings need dim=2")
        boundary = PolygonBoundary(rings)
    elif "box" in header:
        try:
            pairs = [tuple(float(v) for v in p.split(":")) for p in header["box"].split(",")]
        except ValueError:
            raise DataError(f"{source}: box must look like lo:hi,lo:hi") from None
        if len(pairs) != dim:
            raise DataError(f"{source}: box has {len(pairs)} ranges for dim={dim}")
        boundary = BoxBoundary([p[0] for p in pairs], [p[1] for p in pairs])
    emb = header.get("embedding")
    if emb is None or emb == "identity":
        return EuclideanDomain(dim, boundary, name)
    if emb in _NAMED_EMBEDDINGS:
        need, expr = _NAMED_EMBEDDINGS[emb]
        if need != dim:
            raise DataError(f"{source}: embedding {emb!r} needs dim={need}")
    else:
        expr = emb
    return ChartDomain(dim, embedding=compile_expression(expr, dim), boundary=boundary,
                       name=name, embedding_source=expr)


def load_domain_file(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read domain file {path}: {exc}") from None
    return parse_domain_text(text, str(path))


def format_domain_text(domain):
    head = f"dim={domain.dim} name={domain.name}"
    if isinstance(domain, ChartDomain) and domain.embedding_source:
        head += f" embedding={shlex.quote(domain.embedding_source)}"
    body = []
    if isinstance(domain.boundary, PolygonBoundary):
        for ring in domain.boundary.rings:
            body.append("\n".join(f"{float(x)!r} {float(y)!r}" for x, y in ring))
    elif isinstance(domain.boundary, BoxBoundary):
        lo, hi = domain.boundary.bounds()
        head += " box=" + ",".join(f"{float(a)!r}:{float(b)!r}" for a, b in zip(lo, hi))
    return head + "\n" + "\n\n".join(body) + "\n"


def resolve_domain(spec):
    """A built-in name, or a path to a domain file."""
    p = Path(spec)
    if p.suffix or p.exists():
        return load_domain_file(p)
    return builtin_domain(spec)


# ---------------------------------------------------------------------------
# single-point operations
# ---------------------------------------------------------------------------


def _point(domain, x):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != domain.dim:
        raise DomainError(f"point has {x.size} coordinates, domain {domain.name!r} has {domain.dim}")
    return x


def metric_at(domain, x):
    x = _point(domain, x)
    return MetricTensor.from_matrix(domain.metric_batch(x[None])[0], point=x)


def metric_jacobian_at(domain, x):
    """List of ``d`` matrices ``dg/dx_j``."""
    x = _point(domain, x)
    metric_at(domain, x)
    dg = domain.metric_jacobian_batch(x[None])[0]
    return [dg[j] for j in range(domain.dim)]


def inside(domain, x):
    return bool(domain.inside_batch(_point(domain, x)[None])[0])


def embed(domain, x):
    return domain.embed_batch(_point(domain, x)[None])[0]
