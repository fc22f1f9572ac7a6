"""Decluttering policies.

The module-level functions are the single-decision planners.  The
``*Controller`` classes wrap them into the stateful action streams an episode
runner consumes: each call to ``next_action`` sees a fresh observation and the
number of garments currently in the gripper, and returns the next
:class:`Action` or ``None`` once the table is clear.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .candidates import conflict_pairs, partition_foreground, sample_candidates
from .config import Config
from .predictor import Grasp, ProbMatrix, prob_matrix
from .raster import ScalarField, disc_offsets, fill_holes, local_pca_angle
from .scene import ObservedScene
from .setcover import GraspPlan, SolveOutcome, build_milp, solve

PICK = "pick"
PLACE = "place"
TRANSPORT = "transport"


@dataclass(frozen=True)
class Action:
    kind: str
    grasp: Grasp | None = None
    place: tuple[float, float] | None = None

    @classmethod
    def pick(cls, grasp: Grasp) -> Action:
        return cls(PICK, grasp=tuple(float(v) for v in grasp))

    @classmethod
    def place_at(cls, xy) -> Action:
        return cls(PLACE, place=(float(xy[0]), float(xy[1])))

    @classmethod
    def transport(cls) -> Action:
        return cls(TRANSPORT)


@dataclass
class PlannedGrasp:
    grasp: Grasp
    snapshot: np.ndarray
    expected_area: float = 0.0
    index: int = -1

    @property
    def xy(self) -> tuple[float, float]:
        return self.grasp[0], self.grasp[1]


@dataclass
class CyclePlan:
    grasps: list[PlannedGrasp]
    outcome: SolveOutcome | None = None
    probs: ProbMatrix | None = None
    candidates: list = field(default_factory=list)
    partitions: list = field(default_factory=list)
    segments: list = field(default_factory=list)
    fallback: bool = False
    candidate_time: float = 0.0
    solve_time: float = 0.0

    def __len__(self):
        return len(self.grasps)


def _cell_of(field_: ScalarField, xy) -> tuple[int, int]:
    return field_.meta.world_to_cell(*xy)


def _window(values: np.ndarray, center: tuple[int, int], window: int) -> np.ndarray:
    half = window // 2
    r, c = center
    return values[max(r - half, 0):r + half + 1, max(c - half, 0):c + half + 1]


def snapshot(heights: ScalarField, xy, window: int) -> np.ndarray:
    return _window(heights.values, _cell_of(heights, xy[:2]), window).copy()


def staleness_check(current: ScalarField, planned: Grasp, snap: np.ndarray, window: int,
                    tol: float) -> bool:
    """True when the mean squared height change around the grasp exceeds ``tol``."""
    if window % 2 == 0:
        raise ValueError("window must be odd")
    now = _window(current.values, _cell_of(current, planned[:2]), window)
    return float(np.mean((now - snap) ** 2)) > tol


def basket_distance(xy, basket) -> float:
    return math.hypot(xy[0] - basket[0], xy[1] - basket[1])


# ---------------------------------------------------------------------------
# single-grasp policies


def random_policy(obs: ObservedScene, rng: np.random.Generator) -> Action | None:
    flat = np.flatnonzero(obs.foreground.cells)
    if flat.size == 0:
        return None
    row, col = divmod(int(flat[rng.integers(flat.size)]), obs.meta.width)
    x, y = obs.meta.cell_to_world(row, col)
    return Action.pick((x, y, float(rng.uniform(-math.pi / 2, math.pi / 2))))


def _pick_at_cell(obs: ObservedScene, flat_index: int, pca_radius: float) -> Action:
    row, col = divmod(flat_index, obs.meta.width)
    x, y = obs.meta.cell_to_world(row, col)
    theta, _ = local_pca_angle(obs.heights, obs.foreground, (x, y), pca_radius)
    return Action.pick((x, y, theta))


def max_height_policy(obs: ObservedScene, cfg: Config = Config()) -> Action | None:
    if not obs.foreground.any():
        return None
    # np.argmax returns the first maximum, i.e. the lowest row-major index
    return _pick_at_cell(obs, int(np.argmax(obs.heights.values)), cfg.pca_radius)


def disc_volume(heights: ScalarField, radius: float) -> np.ndarray:
    """Sum of heights within ``radius`` of every cell."""
    dr, dc = disc_offsets(radius / heights.meta.cell_size)
    ext = int(np.abs(dr).max()) if dr.size else 0
    if ext == 0:
        return heights.values.copy()
    kernel = np.zeros((2 * ext + 1, 2 * ext + 1))
    kernel[dr + ext, dc + ext] = 1.0
    vol = fftconvolve(heights.values, kernel, mode="same")
    # FFT noise would otherwise decide ties
    return np.round(vol, 10)


def max_volume_policy(obs: ObservedScene, R: float | None = None,
                      cfg: Config = Config()) -> Action | None:
    if not obs.foreground.any():
        return None
    R = cfg.volume_radius if R is None else R
    vol = disc_volume(obs.heights, R)
    vol[~obs.foreground.cells] = -np.inf
    return _pick_at_cell(obs, int(np.argmax(vol)), cfg.pca_radius)


def depth_policy(obs: ObservedScene, cfg: Config, variant: str | None = None) -> Action | None:
    variant = variant or cfg.policy.depth_variant
    if variant == "volume":
        return max_volume_policy(obs, cfg=cfg)
    return max_height_policy(obs, cfg)


# ---------------------------------------------------------------------------
# segment-based cycle


def clean_segments(obs: ObservedScene, kernel: int) -> list:
    out = []
    for _, m in obs.segments:
        c = fill_holes(m, kernel) & obs.foreground
        if c.any():
            out.append(c)
    return out


def segment_cycle(obs: ObservedScene, cfg: Config, rng: np.random.Generator,
                  descending: bool = False) -> CyclePlan:
    """Plan one cycle: clean, partition, sample, predict, solve, order.

    Grasps are ordered by increasing distance to the basket, or decreasing when
    ``descending`` is set.  Degenerate inputs fall back to one random grasp.
    """
    window = cfg.policy.staleness_window
    t0 = time.perf_counter()
    segments = clean_segments(obs, cfg.policy.fill_kernel)
    parts = partition_foreground(obs.foreground, segments, cfg.nearby_radius) if segments else []
    cands = sample_candidates(parts, cfg.candidates, rng)
    grasps = [c.grasp for c in cands]
    P = prob_matrix(grasps, segments, cfg.gripper, cfg.predictor, obs.meta)
    t1 = time.perf_counter()
    plan = CyclePlan([], probs=P, candidates=cands, partitions=parts, segments=segments,
                     candidate_time=t1 - t0)
    if not cands:
        return _fallback(obs, rng, plan, window)
    inst = build_milp(P, cfg.solver.q, conflict_pairs(cands))
    out = solve(inst, cfg.solver)
    plan.solve_time = time.perf_counter() - t1
    plan.outcome = out
    if not out.plan.selected:
        return _fallback(obs, rng, plan, window)
    areas = np.array([s.area_pixels() for s in segments], dtype=float)
    chosen = sorted(out.plan.selected,
                    key=lambda i: (basket_distance(grasps[i], obs.basket), i))
    if descending:
        chosen = sorted(out.plan.selected,
                        key=lambda i: (-basket_distance(grasps[i], obs.basket), i))
    for i in chosen:
        plan.grasps.append(PlannedGrasp(grasps[i], snapshot(obs.heights, grasps[i], window),
                                        float(P.p[i] @ areas), i))
    return plan


def _fallback(obs, rng, plan: CyclePlan, window: int) -> CyclePlan:
    act = random_policy(obs, rng)
    plan.fallback = True
    if act is not None:
        plan.grasps = [PlannedGrasp(act.grasp, snapshot(obs.heights, act.grasp, window))]
    return plan


def hybrid_policy(obs: ObservedScene, cfg: Config, rng: np.random.Generator):
    """Depth grasp when the tallest pile exceeds the threshold, else a segment cycle."""
    if obs.heights.max() > cfg.policy.height_threshold:
        return depth_policy(obs, cfg)
    return segment_cycle(obs, cfg, rng)


def consolidation_sequence(plan: CyclePlan, threshold: float) -> list[Action]:
    """Chain a descending-distance plan into picks, workspace places and transports.

    The chained primitive places the held garments at the next grasp point and
    picks there.  A grasp whose own expected area exceeds the threshold is still
    executed alone.
    """
    actions: list[Action] = []
    total = 0.0
    holding = False
    for g in plan.grasps:
        if holding and total + g.expected_area > threshold:
            actions.append(Action.transport())
            holding, total = False, 0.0
        if holding:
            actions.append(Action.place_at(g.xy))
        actions.append(Action.pick(g.grasp))
        holding = True
        total += g.expected_area
    if holding:
        actions.append(Action.transport())
    return actions


def consolidation_policy(obs: ObservedScene, cfg: Config, rng: np.random.Generator) -> list[Action]:
    plan = segment_cycle(obs, cfg, rng, descending=True)
    return consolidation_sequence(plan, cfg.area_threshold)


# ---------------------------------------------------------------------------
# controllers


class Controller:
    name = "base"

    def __init__(self, cfg: Config, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.stale_skips = 0
        self.cycles = []

    def next_action(self, obs: ObservedScene, held: int) -> Action | None:
        raise NotImplementedError


class _PickThenTransport(Controller):
    def __init__(self, cfg, rng):
        super().__init__(cfg, rng)
        self._after_pick = False

    def next_action(self, obs, held):
        if self._after_pick:
            self._after_pick = False
            return Action.transport()
        act = self.choose(obs)
        if act is not None:
            self._after_pick = True
        return act

    def choose(self, obs) -> Action | None:
        raise NotImplementedError


class RandomController(_PickThenTransport):
    name = "random"

    def choose(self, obs):
        return random_policy(obs, self.rng)


class DepthController(_PickThenTransport):
    def __init__(self, cfg, rng, variant: str):
        super().__init__(cfg, rng)
        self.variant = variant
        self.name = f"max-{variant}"

    def choose(self, obs):
        return depth_policy(obs, self.cfg, self.variant)


class SegmentController(_PickThenTransport):
    """Executes segment cycles, skipping grasps whose neighbourhood changed."""

    name = "segment"

    def __init__(self, cfg, rng):
        super().__init__(cfg, rng)
        self.queue: list[PlannedGrasp] = []

    def _next_fresh(self, obs) -> PlannedGrasp | None:
        pol = self.cfg.policy
        while self.queue:
            g = self.queue.pop(0)
            if staleness_check(obs.heights, g.grasp, g.snapshot, pol.staleness_window,
                               pol.staleness_tol):
                self.stale_skips += 1
                continue
            return g
        return None

    def start_cycle(self, obs) -> None:
        plan = segment_cycle(obs, self.cfg, self.rng)
        self.cycles.append(plan)
        self.queue = list(plan.grasps)

    def choose(self, obs):
        g = self._next_fresh(obs)
        if g is None:
            if not obs.foreground.any():
                return None
            self.start_cycle(obs)
            g = self._next_fresh(obs)
        return None if g is None else Action.pick(g.grasp)


class HybridController(SegmentController):
    def __init__(self, cfg, rng, variant: str):
        super().__init__(cfg, rng)
        self.variant = variant
        self.name = f"hybrid-{variant}"
        self.depth_grasps = 0

    def choose(self, obs):
        g = self._next_fresh(obs)
        if g is not None:
            return Action.pick(g.grasp)
        if not obs.foreground.any():
            return None
        if obs.heights.max() > self.cfg.policy.height_threshold:
            self.depth_grasps += 1
            return depth_policy(obs, self.cfg, self.variant)
        self.start_cycle(obs)
        g = self._next_fresh(obs)
        return None if g is None else Action.pick(g.grasp)


class ConsolidationController(Controller):
    """Walks a descending-distance plan, chaining picks until the area budget binds."""

    name = "consolidation"

    def __init__(self, cfg, rng):
        super().__init__(cfg, rng)
        self.queue: list[PlannedGrasp] = []
        self.total = 0.0
        self._pick_next: PlannedGrasp | None = None

    def _stale(self, obs, g) -> bool:
        pol = self.cfg.policy
        return staleness_check(obs.heights, g.grasp, g.snapshot, pol.staleness_window,
                               pol.staleness_tol)

    def next_action(self, obs, held):
        if self._pick_next is not None:
            g, self._pick_next = self._pick_next, None
            return Action.pick(g.grasp)
        threshold = self.cfg.area_threshold
        for _ in range(2):
            while self.queue:
                g = self.queue[0]
                if self._stale(obs, g):
                    self.queue.pop(0)
                    self.stale_skips += 1
                    continue
                if self.total > 0 and self.total + g.expected_area > threshold:
                    self.total = 0.0
                    if held:
                        return Action.transport()
                self.queue.pop(0)
                self.total += g.expected_area
                if held:
                    self._pick_next = g
                    return Action.place_at(g.xy)
                return Action.pick(g.grasp)
            if held:
                self.total = 0.0
                return Action.transport()
            if not obs.foreground.any():
                return None
            plan = segment_cycle(obs, self.cfg, self.rng, descending=True)
            self.cycles.append(plan)
            self.queue = list(plan.grasps)
            self.total = 0.0
        return None


def make_controller(name: str, cfg: Config, rng: np.random.Generator) -> Controller:
    if name == "random":
        return RandomController(cfg, rng)
    if name in ("max-height", "max-volume"):
        return DepthController(cfg, rng, name.split("-")[1])
    if name == "segment":
        return SegmentController(cfg, rng)
    if name in ("hybrid-height", "hybrid-volume"):
        return HybridController(cfg, rng, name.split("-")[1])
    if name == "consolidation":
        return ConsolidationController(cfg, rng)
    raise ValueError(f"unknown policy {name!r}")


def plan_is_valid(plan: CyclePlan) -> bool:
    """No two planned grasps from the same partition."""
    if plan.outcome is None:
        return True
    parts = [plan.candidates[i].partition_id for i in plan.outcome.plan.selected]
    return len(parts) == len(set(parts))


__all__ = [
    "Action", "CyclePlan", "PlannedGrasp", "GraspPlan", "random_policy", "max_height_policy",
    "max_volume_policy", "segment_cycle", "staleness_check", "hybrid_policy",
    "consolidation_policy", "consolidation_sequence", "make_controller",
]
