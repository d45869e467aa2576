"""Binary PPM (P6) heat maps.

Colour map: piecewise-linear through five anchors, low to high::

    0.00  ( 48,  18,  59)  dark violet
    0.25  ( 50, 136, 189)  blue
    0.50  (102, 194, 165)  teal
    0.75  (254, 224, 139)  sand
    1.00  (213,  62,  79)  red

Masked cells (outside the domain, or NaN) are drawn light grey
``(220, 220, 220)``.
"""

import os
import tempfile
from pathlib import Path

import numpy as np

ANCHORS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
COLOURS = np.array([[48, 18, 59], [50, 136, 189], [102, 194, 165], [254, 224, 139],
                    [213, 62, 79]], dtype=float)
MASK_COLOUR = (220, 220, 220)


def colourise(values, vmin=None, vmax=None):
    """Map an array to ``uint8`` RGB; NaNs get the mask colour."""
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v)
    if np.any(ok):
        lo = v[ok].min() if vmin is None else vmin
        hi = v[ok].max() if vmax is None else vmax
    else:
        lo, hi = 0.0, 1.0
    span = hi - lo if hi > lo else 1.0
    u = np.clip((np.where(ok, v, lo) - lo) / span, 0, 1)
    rgb = np.stack([np.interp(u, ANCHORS, COLOURS[:, k]) for k in range(3)], axis=-1)
    rgb = np.rint(rgb).astype(np.uint8)
    rgb[~ok] = MASK_COLOUR
    return rgb


def write_ppm(path, image, vmin=None, vmax=None, scale=1):
    """Write a 2-D value array as a P6 image; row 0 is the top of the picture.

    ``scale`` repeats each cell into a ``scale x scale`` block.
    """
    rgb = colourise(image, vmin, vmax)
    if scale > 1:
        rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    h, w = rgb.shape[:2]
    data = f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes()
    atomic_write_bytes(path, data)


def read_ppm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def grid_image(points, values, axes):
    """Place values of cell-centred grid points into a ``(ny, nx)`` image.

    ``axes`` are the x and y cell centres; cells with no value stay NaN.
    Row 0 holds the largest y so the picture is north-up.
    """
    ax, ay = (np.asarray(a, dtype=float) for a in axes)
    img = np.full((len(ay), len(ax)), np.nan)
    p = np.atleast_2d(points)
    ix = np.rint((p[:, 0] - ax[0]) / (ax[1] - ax[0] if len(ax) > 1 else 1)).astype(int)
    iy = np.rint((p[:, 1] - ay[0]) / (ay[1] - ay[0] if len(ay) > 1 else 1)).astype(int)
    img[len(ay) - 1 - iy, ix] = values
    return img


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode())
