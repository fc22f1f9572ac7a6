"""Analytic grasp-success model: ``p = a / (a + b)`` for ellipse overlap ``a``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .raster import DEFAULT_CELL_SIZE, BitMask, EllipseSpec, GridMeta, ellipse_cells

Grasp = tuple[float, float, float]


@dataclass(frozen=True)
class GripperSpec:
    d1: float = 0.12
    d2: float = 0.04

    def __post_init__(self):
        if not (self.d1 >= self.d2 > 0):
            raise ValueError(f"gripper needs d1 >= d2 > 0, got {self.d1}, {self.d2}")

    def ellipse(self, grasp: Grasp) -> EllipseSpec:
        x, y, theta = grasp
        return EllipseSpec(x, y, theta, self.d1, self.d2)

    def area_pixels(self, meta: GridMeta) -> int:
        """Footprint of the gripper ellipse in cells, centered on a cell."""
        x, y = meta.cell_to_world(meta.height // 2, meta.width // 2)
        rr, _ = ellipse_cells(self.ellipse((x, y, 0.0)), meta)
        return int(rr.size)


@dataclass(frozen=True)
class PredictorConfig:
    b: float = 100.0
    #: resolution at which ``b`` is expressed; b scales with the squared cell ratio
    reference_cell_size: float = DEFAULT_CELL_SIZE

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError(f"b must be positive, got {self.b}")

    def b_pixels(self, meta: GridMeta) -> float:
        return self.b * (self.reference_cell_size / meta.cell_size) ** 2


@dataclass(frozen=True, eq=False)
class ProbMatrix:
    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float, copy=True)
        if p.ndim != 2:
            raise ValueError("probability matrix must be 2-D")
        if p.size and (p.min() < 0 or p.max() >= 1):
            raise ValueError("probabilities must lie in [0, 1)")
        p.flags.writeable = False
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def m(self) -> int:
        return self.p.shape[1]


def overlap_prob(area, b: float):
    area = np.asarray(area, dtype=float)
    return area / (area + b)


def grasp_prob(grasp: Grasp, segment: BitMask, gripper: GripperSpec,
               cfg: PredictorConfig) -> float:
    rr, cc = ellipse_cells(gripper.ellipse(grasp), segment.meta)
    a = np.count_nonzero(segment.cells[rr, cc])
    return float(overlap_prob(a, cfg.b_pixels(segment.meta)))


def overlap_areas(candidates: Sequence[Grasp], segments: Sequence[BitMask],
                  gripper: GripperSpec, meta: GridMeta) -> np.ndarray:
    """``n x m`` matrix of ``area(ellipse_i & segment_j)`` in pixels."""
    out = np.zeros((len(candidates), len(segments)), dtype=np.int64)
    if not len(candidates) or not len(segments):
        return out
    for s in segments:
        if s.meta != meta:
            raise ValueError("segment grid does not match")
    stack = np.stack([s.cells for s in segments])
    for i, g in enumerate(candidates):
        rr, cc = ellipse_cells(gripper.ellipse(g), meta)
        out[i] = np.count_nonzero(stack[:, rr, cc], axis=1)
    return out


def prob_matrix(candidates: Sequence[Grasp], segments: Sequence[BitMask],
                gripper: GripperSpec, cfg: PredictorConfig,
                meta: GridMeta | None = None) -> ProbMatrix:
    if meta is None:
        if not segments:
            return ProbMatrix(np.zeros((len(candidates), 0)))
        meta = segments[0].meta
    areas = overlap_areas(candidates, segments, gripper, meta)
    return ProbMatrix(overlap_prob(areas, cfg.b_pixels(meta)))


def expected_area(grasp: Grasp, segments: Sequence[BitMask], gripper: GripperSpec,
                  cfg: PredictorConfig) -> float:
    """Sum over segments of ``p_j * area(segment_j)``."""
    if not segments:
        return 0.0
    p = prob_matrix([grasp], segments, gripper, cfg).p[0]
    return float(p @ np.array([s.area_pixels() for s in segments], dtype=float))
