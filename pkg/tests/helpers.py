"""Shared builders for the test modules."""
import math

import numpy as np
from declutter.raster import BitMask, GridMeta

META64 = GridMeta(64, 64, 0.002, (0.001, 0.001))


def disc_mask(meta, cx, cy, r):
    """Cells whose center is within ``r`` meters of ``(cx, cy)``."""
    rows, cols = np.indices(meta.shape)
    x, y = meta.cell_to_world(rows, cols)
    return BitMask(meta, (x - cx) ** 2 + (y - cy) ** 2 <= r * r)


def rect_mask(meta, r0, r1, c0, c1):
    a = np.zeros(meta.shape, dtype=bool)
    a[r0:r1, c0:c1] = True
    return BitMask(meta, a)


def random_blobs(rng, meta, k):
    """``k`` possibly overlapping disc segments at random positions."""
    x0, x1, y0, y1 = meta.extent
    out = []
    for _ in range(k):
        cx, cy = rng.uniform(x0, x1), rng.uniform(y0, y1)
        r = rng.uniform(0.006, 0.03)
        m = disc_mask(meta, cx, cy, r)
        if m.any():
            out.append(m)
    return out


def angle_diff(a, b):
    """Distance between two axis orientations (mod pi)."""
    d = (a - b) % math.pi
    return min(d, math.pi - d)
