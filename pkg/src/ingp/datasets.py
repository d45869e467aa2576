"""Shipped lake polygon and a synthetic chlorophyll-like data set.

The polygon is a hand-drawn stand-in for a two-basin lake in lon/lat
degrees: a narrow western basin and a wide eastern basin, separated in the
south by a peninsula (lon 59.0 to 59.35, tip near lat 45.42) and joined
north of it; the eastern basin holds one island.

The responses are synthetic log-chlorophyll values::

    2 + 0.3 (lat - 45) - 0.15 (lon - 60) + 0.9 beta(lat) tanh((lon - 59.2) / 0.08)

plus N(0, 0.15^2) noise, where ``beta`` is 1 south of lat 44.9 and falls
smoothly to 0 at lat 45.35.  So the field jumps by about 1.8 across the
peninsula but is smooth through the open water north of it.
"""

import csv
import io
from importlib import resources

import numpy as np

from .errors import DataError
from .geometry import EuclideanDomain, PolygonBoundary, format_domain_text, parse_domain_text

ARAL_OUTER = [
    (58.25, 43.85), (58.85, 43.80), (58.95, 44.30), (59.00, 44.90), (59.05, 45.35),
    (59.20, 45.42), (59.35, 45.30), (59.40, 44.80), (59.50, 44.30), (59.90, 43.90),
    (60.60, 43.60), (61.20, 43.80), (61.60, 44.30), (61.70, 45.00), (61.50, 45.60),
    (61.00, 46.10), (60.30, 46.30), (59.60, 46.25), (59.00, 46.10), (58.50, 45.80),
    (58.20, 45.20), (58.10, 44.50),
]
ARAL_ISLAND = [(60.05, 44.95), (60.15, 45.30), (60.40, 45.35), (60.45, 45.05), (60.25, 44.90)]

ARAL_N = 485
ARAL_SEED = 20_170_412
ARAL_NOISE = 0.15
# southern part of the western basin, thinned in the uneven variant
ARAL_REMOVAL = {"lon_max": 59.0, "lat_max": 44.8, "keep_every": 10}

DOMAIN_FILE = "aral.domain"
DATA_FILE = "aral_synthetic.csv"


def _make_domain():
    return EuclideanDomain(2, PolygonBoundary([ARAL_OUTER, ARAL_ISLAND]), name="aral")


def aral_domain():
    """The shipped lake polygon (lon/lat degrees, flat metric)."""
    text = resources.files("ingp.data").joinpath(DOMAIN_FILE).read_text()
    return parse_domain_text(text, DOMAIN_FILE)


def _beta(lat):
    s = np.clip((45.35 - lat) / 0.45, 0.0, 1.0)
    return s * s * (3 - 2 * s)


def aral_mean(points):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    lon, lat = p[:, 0], p[:, 1]
    return (2 + 0.3 * (lat - 45) - 0.15 * (lon - 60)
            + 0.9 * _beta(lat) * np.tanh((lon - 59.2) / 0.08))


def generate_aral_data(n=ARAL_N, seed=ARAL_SEED, noise=ARAL_NOISE):
    """Uniform random locations in the lake with noisy synthetic responses."""
    dom = _make_domain()
    rng = np.random.default_rng(seed)
    lo, hi = dom.bounds()
    pts = np.empty((0, 2))
    while len(pts) < n:
        cand = rng.uniform(lo, hi, size=(4 * n, 2))
        pts = np.vstack([pts, cand[dom.inside_batch(cand)]])
    pts = np.round(pts[:n], 4)
    keep = dom.inside_batch(pts)  # rounding could push a point onto the shore
    pts = pts[keep]
    y = aral_mean(pts) + noise * rng.standard_normal(len(pts))
    return pts, np.round(y, 4)


def write_shipped_files(directory):
    """Regenerate the polygon and CSV shipped under ``ingp/data``."""
    from pathlib import Path

    directory = Path(directory)
    (directory / DOMAIN_FILE).write_text(
        "# two-basin lake stand-in, lon/lat degrees; outer ring then island\n"
        + format_domain_text(_make_domain()))
    pts, y = generate_aral_data()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lon", "lat", "chl"])
    for (a, b), v in zip(pts, y):
        w.writerow([f"{a:.4f}", f"{b:.4f}", f"{v:.4f}"])
    (directory / DATA_FILE).write_text(buf.getvalue())


def aral_data_path():
    return resources.files("ingp.data").joinpath(DATA_FILE)


def load_aral_data():
    """``(points, responses)`` from the shipped CSV."""
    with aral_data_path().open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError("shipped data file is empty")
    pts = np.array([[float(r["lon"]), float(r["lat"])] for r in rows])
    y = np.array([float(r["chl"]) for r in rows])
    return pts, y


def removal_mask(points, lon_max=59.0, lat_max=44.8, keep_every=10):
    """True for points kept in the uneven variant.

    Points with ``lon < lon_max`` and ``lat < lat_max`` are dropped except
    every ``keep_every``-th of them (0 drops all).
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    region = (p[:, 0] < lon_max) & (p[:, 1] < lat_max)
    keep = ~region
    if keep_every:
        idx = np.flatnonzero(region)
        keep[idx[::keep_every]] = True
    return keep
