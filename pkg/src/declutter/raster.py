"""Grid geometry on the workspace surface.

Masks and fields are thin wrappers over numpy arrays indexed ``[row, col]``,
where columns run along world x and rows along world y.  Everything here is
pure: operations return new objects and never mutate their inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

#: default resolution, meters per cell
DEFAULT_CELL_SIZE = 0.002

_SNAP = 1e-9


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class GridMeta:
    width: int
    height: int
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must be non-empty, got {self.width}x{self.height}")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def for_workspace(cls, size_x: float = 1.0, size_y: float = 0.6,
                      cell_size: float = DEFAULT_CELL_SIZE) -> GridMeta:
        """Grid covering ``[0, size_x] x [0, size_y]`` with cell centers inset by half a cell."""
        w = int(round(size_x / cell_size))
        h = int(round(size_y / cell_size))
        return cls(w, h, cell_size, (cell_size / 2, cell_size / 2))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """World bounds ``(x0, x1, y0, y1)`` of the cell edges."""
        half = self.cell_size / 2
        x0 = self.origin[0] - half
        y0 = self.origin[1] - half
        return (x0, x0 + self.width * self.cell_size, y0, y0 + self.height * self.cell_size)

    def fractional_cell(self, x: float, y: float) -> tuple[float, float]:
        """Continuous ``(row, col)`` coordinates; integers are cell centers."""
        col = (x - self.origin[0]) / self.cell_size
        row = (y - self.origin[1]) / self.cell_size
        return _snap(row), _snap(col)

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        row, col = self.fractional_cell(x, y)
        return int(math.floor(row + 0.5)), int(math.floor(col + 0.5))

    def cell_to_world(self, row, col):
        x = self.origin[0] + np.asarray(col) * self.cell_size
        y = self.origin[1] + np.asarray(row) * self.cell_size
        if np.ndim(x) == 0:
            return float(x), float(y)
        return x, y

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def contains_point(self, x: float, y: float) -> bool:
        x0, x1, y0, y1 = self.extent
        return x0 <= x <= x1 and y0 <= y <= y1


def _snap(v: float) -> float:
    r = round(v)
    return float(r) if abs(v - r) < _SNAP else v


class _Raster:
    __slots__ = ("meta", "_a")

    def __init__(self, meta: GridMeta, array: np.ndarray):
        if array.shape != meta.shape:
            raise GridMismatch(f"array shape {array.shape} does not match grid {meta.shape}")
        array.flags.writeable = False
        self.meta = meta
        self._a = array

    def _check(self, other: _Raster):
        if self.meta != other.meta:
            raise GridMismatch(f"{self.meta} != {other.meta}")

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.meta == other.meta and np.array_equal(self._a, other._a)

    __hash__ = None


class BitMask(_Raster):
    """Boolean occupancy over a grid."""

    __slots__ = ()

    def __init__(self, meta: GridMeta, cells):
        super().__init__(meta, np.array(cells, dtype=bool, copy=True))

    @classmethod
    def empty(cls, meta: GridMeta) -> BitMask:
        return cls(meta, np.zeros(meta.shape, dtype=bool))

    @classmethod
    def full(cls, meta: GridMeta) -> BitMask:
        return cls(meta, np.ones(meta.shape, dtype=bool))

    @property
    def cells(self) -> np.ndarray:
        return self._a

    def area_pixels(self) -> int:
        return int(np.count_nonzero(self._a))

    def any(self) -> bool:
        return bool(self._a.any())

    def __and__(self, other: BitMask) -> BitMask:
        return intersect(self, other)

    def __or__(self, other: BitMask) -> BitMask:
        self._check(other)
        return BitMask(self.meta, self._a | other._a)

    def __sub__(self, other: BitMask) -> BitMask:
        self._check(other)
        return BitMask(self.meta, self._a & ~other._a)

    def issubset(self, other: BitMask) -> bool:
        self._check(other)
        return not np.any(self._a & ~other._a)

    def __repr__(self):
        return f"BitMask({self.meta.width}x{self.meta.height}, area={self.area_pixels()})"


class ScalarField(_Raster):
    """Real value per cell; heights are in meters."""

    __slots__ = ()

    def __init__(self, meta: GridMeta, values):
        values = np.array(values, dtype=float, copy=True)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        super().__init__(meta, values)

    @classmethod
    def zeros(cls, meta: GridMeta) -> ScalarField:
        return cls(meta, np.zeros(meta.shape))

    @property
    def values(self) -> np.ndarray:
        return self._a

    def max(self) -> float:
        return float(self._a.max())

    def __repr__(self):
        return f"ScalarField({self.meta.width}x{self.meta.height}, max={self.max():.4g})"


@dataclass(frozen=True)
class EllipseSpec:
    cx: float
    cy: float
    theta: float
    d1: float
    d2: float

    def __post_init__(self):
        if not (self.d1 >= self.d2 > 0):
            raise ValueError(f"need d1 >= d2 > 0, got d1={self.d1}, d2={self.d2}")
        if not (-math.pi / 2 - 1e-12 <= self.theta <= math.pi / 2 + 1e-12):
            raise ValueError(f"theta {self.theta} outside [-pi/2, pi/2]")

    @property
    def area(self) -> float:
        return math.pi * self.d1 * self.d2 / 4


@lru_cache(maxsize=256)
def _ellipse_offsets(theta: float, a: float, b: float, frac_r: float, frac_c: float):
    """Integer cell offsets inside an ellipse with semi-axes ``a``, ``b`` (cells).

    ``frac_r``/``frac_c`` are the sub-cell position of the center, in [0, 1).
    """
    ext = int(math.ceil(a)) + 1
    dr, dc = np.mgrid[-ext:ext + 1, -ext:ext + 1]
    y = dr - frac_r
    x = dc - frac_c
    c, s = math.cos(theta), math.sin(theta)
    u = x * c + y * s
    v = -x * s + y * c
    # boundary-inclusive, with slack so on-boundary centers survive rotation round-off
    inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0 + 1e-12
    out = (dr[inside].astype(np.intp), dc[inside].astype(np.intp))
    for arr in out:
        arr.flags.writeable = False
    return out


def ellipse_cells(spec: EllipseSpec, meta: GridMeta) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of on-grid cells whose centers lie inside the ellipse."""
    row, col = meta.fractional_cell(spec.cx, spec.cy)
    r0, c0 = math.floor(row), math.floor(col)
    fr, fc = _snap(row - r0), _snap(col - c0)
    if fr == 1.0:
        r0, fr = r0 + 1, 0.0
    if fc == 1.0:
        c0, fc = c0 + 1, 0.0
    a = spec.d1 / (2 * meta.cell_size)
    b = spec.d2 / (2 * meta.cell_size)
    dr, dc = _ellipse_offsets(float(spec.theta), a, b, fr, fc)
    rr = dr + r0
    cc = dc + c0
    keep = (rr >= 0) & (rr < meta.height) & (cc >= 0) & (cc < meta.width)
    return rr[keep], cc[keep]


def rasterize_ellipse(spec: EllipseSpec, meta: GridMeta) -> BitMask:
    cells = np.zeros(meta.shape, dtype=bool)
    rr, cc = ellipse_cells(spec, meta)
    cells[rr, cc] = True
    return BitMask(meta, cells)


def intersect(a: BitMask, b: BitMask) -> BitMask:
    a._check(b)
    return BitMask(a.meta, a.cells & b.cells)


def majority_threshold(kernel: int) -> int:
    # strict majority of an odd window, so filling and removal are symmetric:
    # fill_holes(~m) == ~fill_holes(m) away from the grid border
    return (kernel * kernel + 1) // 2


def fill_holes(mask: BitMask, kernel: int = 3) -> BitMask:
    """Two passes of all-ones box convolution with majority thresholding."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    if kernel == 1:
        return mask
    weights = np.ones((kernel, kernel), dtype=np.int32)
    need = majority_threshold(kernel)
    a = mask.cells.astype(np.int32)
    for _ in range(2):
        counts = ndimage.convolve(a, weights, mode="constant", cval=0)
        a = (counts >= need).astype(np.int32)
    return BitMask(mask.meta, a.astype(bool))


def _bbox(cells: np.ndarray):
    rows = np.flatnonzero(cells.any(axis=1))
    cols = np.flatnonzero(cells.any(axis=0))
    return rows[0], rows[-1] + 1, cols[0], cols[-1] + 1


def dilate_cells(cells: np.ndarray, radius_cells: float) -> np.ndarray:
    """Boolean array of cells within ``radius_cells`` (Euclidean) of a true cell."""
    if not cells.any():
        return np.zeros_like(cells, dtype=bool)
    if radius_cells <= 0:
        return cells.copy()
    pad = int(math.floor(radius_cells)) + 1
    r0, r1, c0, c1 = _bbox(cells)
    r0, c0 = max(r0 - pad, 0), max(c0 - pad, 0)
    r1, c1 = min(r1 + pad, cells.shape[0]), min(c1 + pad, cells.shape[1])
    window = cells[r0:r1, c0:c1]
    dist = ndimage.distance_transform_edt(~window)
    out = np.zeros(cells.shape, dtype=bool)
    out[r0:r1, c0:c1] = dist <= radius_cells + 1e-9
    return out


def dilate_within(mask: BitMask, r: float) -> BitMask:
    if r < 0:
        raise ValueError(f"radius must be >= 0, got {r}")
    return BitMask(mask.meta, dilate_cells(mask.cells, r / mask.meta.cell_size))


def disc_offsets(radius_cells: float) -> tuple[np.ndarray, np.ndarray]:
    ext = int(math.floor(radius_cells))
    dr, dc = np.mgrid[-ext:ext + 1, -ext:ext + 1]
    inside = dr * dr + dc * dc <= radius_cells * radius_cells + 1e-9
    return dr[inside], dc[inside]


def local_pca_angle(field: ScalarField, foreground: BitMask, center: tuple[float, float],
                    radius: float) -> tuple[float, bool]:
    """Orientation of the height-weighted principal axis around ``center``.

    Returns ``(angle, degenerate)``.  The angle is measured from world +x toward
    +y and lies in [-pi/2, pi/2].  A degenerate neighbourhood (fewer than two
    weighted cells, or a relative eigenvalue gap below 1e-9) yields ``(0.0, True)``.
    """
    field._check(foreground)
    meta = field.meta
    row, col = meta.fractional_cell(*center)
    dr, dc = disc_offsets(radius / meta.cell_size)
    r0, c0 = int(math.floor(row + 0.5)), int(math.floor(col + 0.5))
    rr, cc = dr + r0, dc + c0
    keep = (rr >= 0) & (rr < meta.height) & (cc >= 0) & (cc < meta.width)
    rr, cc = rr[keep], cc[keep]
    on = foreground.cells[rr, cc]
    rr, cc = rr[on], cc[on]
    w = field.values[rr, cc]
    if rr.size < 2 or not np.any(w > 0) or np.count_nonzero(w) < 2:
        return 0.0, True
    w = w / w.sum()
    xs = cc.astype(float)
    ys = rr.astype(float)
    mx, my = w @ xs, w @ ys
    dx, dy = xs - mx, ys - my
    cov = np.array([[w @ (dx * dx), w @ (dx * dy)],
                    [w @ (dx * dy), w @ (dy * dy)]])
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] - evals[0] <= 1e-9 * max(evals.sum(), 1e-300):
        return 0.0, True
    vx, vy = evecs[:, 1]
    angle = math.atan2(vy, vx)
    if angle > math.pi / 2:
        angle -= math.pi
    elif angle < -math.pi / 2:
        angle += math.pi
    return angle, False
