"""Foreground partitioning by nearby segments, and grasp candidate sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .raster import BitMask, GridMeta, dilate_cells


@dataclass(frozen=True)
class CandidateConfig:
    #: nearby radius in meters; ``None`` means half the gripper width plus 1 cm
    r: float | None = None
    k: int = 5
    l: int = 6

    def __post_init__(self):
        if self.r is not None and not self.r > 0:
            raise ValueError(f"r must be positive, got {self.r}")
        if self.k < 1 or self.l < 1:
            raise ValueError("k and l must be >= 1")

    def radius(self, gripper) -> float:
        return self.r if self.r is not None else gripper.d2 / 2 + 0.01


@dataclass(frozen=True, eq=False)
class Partition:
    """Foreground cells sharing one nearby-segment set.

    ``flat`` holds row-major cell indices in increasing order.
    """

    id: int
    key: frozenset
    meta: GridMeta
    flat: np.ndarray

    @property
    def size(self) -> int:
        return int(self.flat.size)

    @property
    def cells(self) -> BitMask:
        a = np.zeros(self.meta.width * self.meta.height, dtype=bool)
        a[self.flat] = True
        return BitMask(self.meta, a.reshape(self.meta.shape))


@dataclass(frozen=True)
class GraspCandidate:
    x: float
    y: float
    theta: float
    partition_id: int

    @property
    def grasp(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


def partition_foreground(foreground: BitMask, segments: Sequence[BitMask],
                         r: float) -> list[Partition]:
    """Group foreground cells by the set of segment indices within distance ``r``."""
    meta = foreground.meta
    fg_flat = np.flatnonzero(foreground.cells)
    if fg_flat.size == 0:
        return []
    radius_cells = r / meta.cell_size
    m = len(segments)
    near = np.zeros((fg_flat.size, max(m, 1)), dtype=bool)
    for j, seg in enumerate(segments):
        if seg.meta != meta:
            raise ValueError("segment grid does not match foreground")
        near[:, j] = dilate_cells(seg.cells, radius_cells).ravel()[fg_flat]
    packed = np.packbits(near, axis=1)
    packed = np.ascontiguousarray(packed).view(np.dtype((np.void, packed.shape[1]))).ravel()
    _, first, inverse = np.unique(packed, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    keys = [frozenset(np.flatnonzero(near[i, :m]).tolist()) for i in first]
    order = sorted(range(len(keys)), key=lambda u: tuple(sorted(keys[u])))
    out = []
    for pid, u in enumerate(order):
        out.append(Partition(pid, keys[u], meta, fg_flat[inverse == u]))
    return out


def orientations(l: int) -> list[float]:
    return [-math.pi / 2 + t * math.pi / l for t in range(l)]


def sample_candidates(partitions: Sequence[Partition], cfg: CandidateConfig,
                      rng: np.random.Generator) -> list[GraspCandidate]:
    thetas = orientations(cfg.l)
    out = []
    for part in partitions:
        if not part.key or part.size == 0:
            continue
        picks = rng.choice(part.size, size=min(cfg.k, part.size), replace=False)
        rows, cols = np.divmod(part.flat[picks], part.meta.width)
        xs, ys = part.meta.cell_to_world(rows, cols)
        for x, y in zip(xs.tolist(), ys.tolist()):
            out.extend(GraspCandidate(x, y, th, part.id) for th in thetas)
    return out


def conflict(c1: GraspCandidate, c2: GraspCandidate) -> bool:
    return c1.partition_id == c2.partition_id


def conflict_pairs(cands: Sequence[GraspCandidate]) -> set[tuple[int, int]]:
    groups: dict[int, list[int]] = {}
    for i, c in enumerate(cands):
        groups.setdefault(c.partition_id, []).append(i)
    return {pair for idx in groups.values() for pair in combinations(idx, 2)}
