"""Ground-truth garment world: stacking, occlusion, observation and grasp physics.

Garments are rigid 2D blobs (a polygon unioned with a few discs) that only
translate and shrink.  The stack order defines occlusion, later garments lie
on top.  Every operation returns a new :class:`Scene`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from matplotlib.path import Path

from .predictor import Grasp, GripperSpec, PredictorConfig, overlap_prob
from .raster import BitMask, GridMeta, ScalarField, ellipse_cells

WORKSPACE = (1.0, 0.6)
DEFAULT_BASKET = (-0.25, 0.3)


@dataclass(frozen=True)
class GarmentShape:
    """Canonical outline in meters, centroid at the origin."""

    polygon: tuple[tuple[float, float], ...]
    discs: tuple[tuple[float, float, float], ...] = ()

    @property
    def radius(self) -> float:
        r = max(math.hypot(x, y) for x, y in self.polygon)
        for cx, cy, rad in self.discs:
            r = max(r, math.hypot(cx, cy) + rad)
        return r

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        pts = np.column_stack([np.ravel(x), np.ravel(y)])
        inside = _path(self.polygon).contains_points(pts)
        for cx, cy, rad in self.discs:
            inside |= (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2 <= rad * rad
        return inside.reshape(np.shape(x))


@lru_cache(maxsize=64)
def _path(polygon) -> Path:
    return Path(np.asarray(polygon + (polygon[0],)), closed=True)


@dataclass(frozen=True)
class Garment:
    id: int
    shape: GarmentShape
    x: float
    y: float
    rotation: float = 0.0
    thickness: float = 0.01
    scale: float = 1.0

    def __post_init__(self):
        if not self.thickness > 0:
            raise ValueError(f"garment {self.id}: thickness must be positive")

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.rotation)

    def patch(self, meta: GridMeta) -> tuple[int, int, np.ndarray]:
        """``(row0, col0, cells)``: the posed mask clipped to the grid."""
        return _posed_patch(self, meta)

    def mask(self, meta: GridMeta) -> BitMask:
        r0, c0, p = self.patch(meta)
        cells = np.zeros(meta.shape, dtype=bool)
        cells[r0:r0 + p.shape[0], c0:c0 + p.shape[1]] = p
        return BitMask(meta, cells)

    def canonical_mask(self, meta: GridMeta) -> BitMask:
        x, y = meta.cell_to_world(meta.height // 2, meta.width // 2)
        return replace(self, x=x, y=y, rotation=0.0, scale=1.0).mask(meta)

    def nominal_area(self, meta: GridMeta) -> int:
        return self.canonical_mask(meta).area_pixels()


@lru_cache(maxsize=8192)
def _posed_patch(g: Garment, meta: GridMeta):
    ext = g.shape.radius * g.scale
    r_lo, c_lo = meta.world_to_cell(g.x - ext, g.y - ext)
    r_hi, c_hi = meta.world_to_cell(g.x + ext, g.y + ext)
    r0, c0 = max(r_lo, 0), max(c_lo, 0)
    r1, c1 = min(r_hi + 1, meta.height), min(c_hi + 1, meta.width)
    if r1 <= r0 or c1 <= c0:
        p = np.zeros((0, 0), dtype=bool)
        p.flags.writeable = False
        return 0, 0, p
    rows, cols = np.mgrid[r0:r1, c0:c1]
    wx, wy = meta.cell_to_world(rows, cols)
    dx, dy = wx - g.x, wy - g.y
    c, s = math.cos(g.rotation), math.sin(g.rotation)
    u = (dx * c + dy * s) / g.scale
    v = (-dx * s + dy * c) / g.scale
    p = g.shape.contains(u, v)
    p.flags.writeable = False
    return r0, c0, p


@dataclass(frozen=True)
class Scene:
    meta: GridMeta
    stack: tuple[Garment, ...] = ()
    basket: tuple[float, float] = DEFAULT_BASKET
    rng_seed: int = 0

    def __post_init__(self):
        ids = [g.id for g in self.stack]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate garment ids in {ids}")
        object.__setattr__(self, "stack", tuple(self.stack))

    @property
    def ids(self) -> list[int]:
        return [g.id for g in self.stack]

    def __len__(self):
        return len(self.stack)


@dataclass(frozen=True, eq=False)
class ObservedScene:
    """What a planner may see: foreground, visible segments and heights."""

    foreground: BitMask
    segments: tuple[tuple[int, BitMask], ...]
    heights: ScalarField
    basket: tuple[float, float] = DEFAULT_BASKET
    truth_link: dict = field(default_factory=dict, repr=False)

    @property
    def meta(self) -> GridMeta:
        return self.foreground.meta

    @property
    def masks(self) -> list[BitMask]:
        return [m for _, m in self.segments]


@dataclass(frozen=True)
class SimConfig:
    """Physical parameters of the simulator (not visible to planners)."""

    compaction: float = 0.9
    min_scale: float = 0.6
    min_visible: int = 50
    shuffle_moves: int = 10

    def __post_init__(self):
        if not 0 < self.compaction <= 1:
            raise ValueError("compaction must lie in (0, 1]")


def _paste(dst: np.ndarray, g: Garment, meta: GridMeta, value=True):
    r0, c0, p = g.patch(meta)
    view = dst[r0:r0 + p.shape[0], c0:c0 + p.shape[1]]
    if dst.dtype == bool:
        view |= p
    else:
        view += p * value


def height_field(scene: Scene) -> ScalarField:
    h = np.zeros(scene.meta.shape)
    for g in scene.stack:
        _paste(h, g, scene.meta, g.thickness)
    return ScalarField(scene.meta, h)


def observe(scene: Scene, min_visible: int = 50) -> ObservedScene:
    meta = scene.meta
    covered = np.zeros(meta.shape, dtype=bool)
    heights = np.zeros(meta.shape)
    visible = []
    for g in reversed(scene.stack):
        r0, c0, p = g.patch(meta)
        sl = (slice(r0, r0 + p.shape[0]), slice(c0, c0 + p.shape[1]))
        vis_patch = p & ~covered[sl]
        heights[sl] += p * g.thickness
        covered[sl] |= p
        if np.count_nonzero(vis_patch) >= min_visible:
            vis = np.zeros(meta.shape, dtype=bool)
            vis[sl] = vis_patch
            visible.append((int(np.argmax(vis.ravel())), g.id, vis))
    # ids follow raster order of each segment's first cell, not stack order
    visible.sort(key=lambda t: t[0])
    segments = tuple((sid, BitMask(meta, v)) for sid, (_, _, v) in enumerate(visible))
    link = {sid: gid for sid, (_, gid, _) in enumerate(visible)}
    return ObservedScene(BitMask(meta, covered), segments, ScalarField(meta, heights),
                         scene.basket, link)


def foreground(scene: Scene) -> np.ndarray:
    cells = np.zeros(scene.meta.shape, dtype=bool)
    for g in scene.stack:
        _paste(cells, g, scene.meta)
    return cells


def garment_overlap(g: Garment, grasp: Grasp, gripper: GripperSpec, meta: GridMeta) -> int:
    """Cells of the garment's full (occluded included) mask under the gripper ellipse."""
    r0, c0, p = g.patch(meta)
    if p.size == 0:
        return 0
    rr, cc = ellipse_cells(gripper.ellipse(grasp), meta)
    rr = rr - r0
    cc = cc - c0
    keep = (rr >= 0) & (rr < p.shape[0]) & (cc >= 0) & (cc < p.shape[1])
    return int(np.count_nonzero(p[rr[keep], cc[keep]]))


def true_probs(scene: Scene, grasp: Grasp, gripper: GripperSpec,
               pred_cfg: PredictorConfig) -> np.ndarray:
    areas = [garment_overlap(g, grasp, gripper, scene.meta) for g in scene.stack]
    return overlap_prob(np.array(areas, dtype=float), pred_cfg.b_pixels(scene.meta))


def apply_grasp(scene: Scene, grasp: Grasp, gripper: GripperSpec,
                pred_cfg: PredictorConfig, rng: np.random.Generator):
    """Independent Bernoulli pick of every garment; returns ``(scene, held)``."""
    if not scene.stack:
        return scene, []
    p = true_probs(scene, grasp, gripper, pred_cfg)
    hit = rng.random(len(scene.stack)) < p
    held = [g for g, h in zip(scene.stack, hit) if h]
    rest = tuple(g for g, h in zip(scene.stack, hit) if not h)
    return replace(scene, stack=rest), held


def apply_place(scene: Scene, held: Sequence[Garment], place: tuple[float, float],
                compaction: float = 0.9, min_scale: float = 0.6) -> Scene:
    """Drop held garments centered on ``place``, shrunk by ``compaction``."""
    if not held:
        return scene
    x, y = place
    moved = tuple(replace(g, x=float(x), y=float(y),
                          scale=max(g.scale * compaction, min(min_scale, g.scale)))
                  for g in held)
    return replace(scene, stack=scene.stack + moved)


def transport(scene: Scene, held: Sequence[Garment]) -> Scene:
    """Held garments leave the world; the harness counts the trip."""
    return scene


def random_foreground_point(cells: np.ndarray, meta: GridMeta, rng: np.random.Generator):
    flat = np.flatnonzero(cells)
    u = int(flat[rng.integers(flat.size)])
    row, col = divmod(u, meta.width)
    return meta.cell_to_world(row, col)


def random_workspace_point(meta: GridMeta, rng: np.random.Generator) -> tuple[float, float]:
    x0, x1, y0, y1 = meta.extent
    return float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1))


def shuffle(scene: Scene, n_moves: int, rng: np.random.Generator,
            gripper: GripperSpec = GripperSpec(), pred_cfg: PredictorConfig = PredictorConfig(),
            sim: SimConfig = SimConfig()) -> Scene:
    for _ in range(n_moves):
        cells = foreground(scene)
        if not cells.any():
            break
        x, y = random_foreground_point(cells, scene.meta, rng)
        theta = float(rng.uniform(-math.pi / 2, math.pi / 2))
        scene, held = apply_grasp(scene, (x, y, theta), gripper, pred_cfg, rng)
        place = random_workspace_point(scene.meta, rng)
        scene = apply_place(scene, held, place, sim.compaction, sim.min_scale)
    return scene


def generate_scene(library: Sequence[Garment], n: int, rng: np.random.Generator,
                   meta: GridMeta | None = None, basket=DEFAULT_BASKET, seed: int = 0,
                   gripper: GripperSpec = GripperSpec(),
                   pred_cfg: PredictorConfig = PredictorConfig(),
                   sim: SimConfig = SimConfig()) -> Scene:
    """Random poses for ``n`` library garments, then a shuffle of ``sim.shuffle_moves``."""
    if n > len(library):
        raise ValueError(f"asked for {n} garments from a library of {len(library)}")
    meta = meta or GridMeta.for_workspace(*WORKSPACE)
    picks = rng.permutation(len(library))[:n]
    stack = []
    for u in picks.tolist():
        x, y = random_workspace_point(meta, rng)
        rot = float(rng.uniform(-math.pi, math.pi))
        stack.append(replace(library[u], x=x, y=y, rotation=rot, scale=1.0))
    scene = Scene(meta, tuple(stack), tuple(basket), seed)
    return shuffle(scene, sim.shuffle_moves, rng, gripper, pred_cfg, sim)


def generate_separated(library: Sequence[Garment], n: int, rng: np.random.Generator,
                       meta: GridMeta | None = None, basket=DEFAULT_BASKET, seed: int = 0,
                       attempts: int = 10_000) -> Scene:
    """Scene of ``n`` pairwise non-overlapping garments, fully on the grid.

    Garments are drawn cyclically from ``library`` with fresh ids.  Larger
    garments are placed first, which packs far more reliably; the stack is
    still ordered by id.
    """
    if n < 1:
        raise ValueError("need at least one garment")
    meta = meta or GridMeta.for_workspace(*WORKSPACE)
    occupied = np.zeros(meta.shape, dtype=bool)
    stack = []
    sizes = [library[k % len(library)].nominal_area(meta) for k in range(n)]
    for k in sorted(range(n), key=lambda k: -sizes[k]):
        base = library[k % len(library)]
        full = sizes[k]
        for _ in range(attempts):
            x, y = random_workspace_point(meta, rng)
            if occupied[meta.world_to_cell(x, y)]:
                continue
            g = replace(base, id=k, x=x, y=y, rotation=float(rng.uniform(-math.pi, math.pi)),
                        scale=1.0)
            r0, c0, p = g.patch(meta)
            if np.count_nonzero(p) != full:
                continue
            if np.any(occupied[r0:r0 + p.shape[0], c0:c0 + p.shape[1]] & p):
                continue
            occupied[r0:r0 + p.shape[0], c0:c0 + p.shape[1]] |= p
            stack.append(g)
            break
        else:
            raise RuntimeError(f"could not place {n} non-overlapping garments "
                               f"(failed at garment {k})")
    stack.sort(key=lambda g: g.id)
    return Scene(meta, tuple(stack), tuple(basket), seed)


# ---------------------------------------------------------------------------
# garment library


def _blob(rng: np.random.Generator, aspect: float) -> GarmentShape:
    k = int(rng.integers(6, 10))
    ang = np.sort(rng.uniform(0, 2 * math.pi, k))
    rad = rng.uniform(0.75, 1.0, k)
    poly = [(float(r * math.cos(a) * aspect), float(r * math.sin(a))) for a, r in zip(ang, rad)]
    discs = []
    for _ in range(int(rng.integers(1, 4))):
        v = poly[int(rng.integers(k))]
        discs.append((v[0] * 0.8, v[1] * 0.8, float(rng.uniform(0.25, 0.45))))
    return GarmentShape(tuple(poly), tuple(discs))


def _rescaled(shape: GarmentShape, target_area: float, samples: int = 600) -> GarmentShape:
    """Scale to ``target_area`` (m^2) and move the centroid to the origin."""
    for _ in range(3):
        ext = shape.radius
        res = 2 * ext / samples
        n = samples + 2
        xs = (np.arange(n) - n / 2 + 0.5) * res
        X, Y = np.meshgrid(xs, xs)
        inside = shape.contains(X, Y)
        area = inside.sum() * res * res
        cx, cy = X[inside].mean(), Y[inside].mean()
        f = math.sqrt(target_area / area)
        shape = GarmentShape(
            tuple((float((x - cx) * f), float((y - cy) * f)) for x, y in shape.polygon),
            tuple((float((x - cx) * f), float((y - cy) * f), float(r * f))
                  for x, y, r in shape.discs))
    return shape


def make_library(n: int = 10, seed: int = 2024, area_range=(0.01, 0.06),
                 thickness_range=(0.005, 0.015)) -> list[Garment]:
    """Deterministic set of procedurally generated garments placed at the origin."""
    rng = np.random.default_rng(seed)
    areas = np.linspace(*area_range, n) if n > 1 else np.array([area_range[0]])
    out = []
    for i, area in enumerate(areas.tolist()):
        aspect = float(rng.choice([1.0, 1.3, 1.8, 3.0]))
        shape = _rescaled(_blob(rng, aspect), area)
        thick = float(rng.uniform(*thickness_range))
        out.append(Garment(i, shape, 0.0, 0.0, 0.0, thick))
    return out
