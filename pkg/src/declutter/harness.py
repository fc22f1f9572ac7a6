"""Episode runner, OpT statistics, paired benchmarks and the scaling sweep."""
from __future__ import annotations

import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import scene as sc
from .config import Config, from_dict
from .policies import PICK, PLACE, TRANSPORT, Action, make_controller, segment_cycle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Step:
    action: Action
    removed: tuple[int, ...] = ()
    held_after: int = 0
    stale_skips: int = 0


@dataclass
class EpisodeRecord:
    seed: int
    policy: str
    initial_garments: int
    steps: list[Step] = field(default_factory=list)
    transports: int = 0
    workspace_moves: int = 0
    objects_removed: int = 0
    completed: bool = False

    @property
    def opt(self) -> float:
        return self.objects_removed / self.transports if self.transports else 0.0

    @property
    def stale_skips(self) -> int:
        return sum(s.stale_skips for s in self.steps)

    def row(self) -> dict:
        return {"seed": self.seed, "policy": self.policy, "transports": self.transports,
                "moves": self.workspace_moves, "removed": self.objects_removed,
                "opt": f"{self.opt:.6f}", "completed": int(self.completed),
                "steps": len(self.steps)}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["opt"] = self.opt
        return d


def _rngs(seed: int):
    pol, sim = np.random.SeedSequence([seed, 1]).spawn(2)
    return np.random.default_rng(pol), np.random.default_rng(sim)


def run_episode(scene: sc.Scene, policy: str, cfg: Config, rng_policy: np.random.Generator,
                rng_sim: np.random.Generator, max_steps: int, seed: int = 0,
                echo=None) -> EpisodeRecord:
    """Query ``policy`` until the table is clear or ``max_steps`` actions were taken."""
    if not scene.stack:
        raise ValueError("episode needs a non-empty scene")
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    ctrl = make_controller(policy, cfg, rng_policy)
    rec = EpisodeRecord(seed, policy, len(scene.stack))
    held: list[sc.Garment] = []
    for _ in range(max_steps):
        obs = sc.observe(scene, cfg.sim.min_visible)
        if not held and not obs.foreground.any():
            break
        skips = ctrl.stale_skips
        act = ctrl.next_action(obs, len(held))
        if act is None:
            if not held:
                break
            act = Action.transport()
        removed: tuple[int, ...] = ()
        if act.kind == PICK:
            if held:
                raise RuntimeError(f"{policy}: pick issued while holding {len(held)} garments")
            scene, held = sc.apply_grasp(scene, act.grasp, cfg.gripper, cfg.predictor, rng_sim)
        elif act.kind == PLACE:
            scene = sc.apply_place(scene, held, act.place, cfg.sim.compaction, cfg.sim.min_scale)
            held = []
            rec.workspace_moves += 1
        elif act.kind == TRANSPORT:
            scene = sc.transport(scene, held)
            removed = tuple(g.id for g in held)
            held = []
            rec.transports += 1
            rec.objects_removed += len(removed)
        step = Step(act, removed, len(held), ctrl.stale_skips - skips)
        rec.steps.append(step)
        if echo is not None:
            echo(len(rec.steps), step)
    rec.completed = not held and not scene.stack
    return rec


def opt_metric(records: Sequence[EpisodeRecord]) -> tuple[float, float]:
    """Mean per-episode OpT and its 95% half-width (normal approximation)."""
    if len(records) < 2:
        raise ValueError("need at least two episodes for a confidence interval")
    for r in records:
        if r.transports == 0:
            log.warning("episode seed=%d policy=%s has no transports", r.seed, r.policy)
    return mean_ci([r.opt for r in records])


def mean_ci(values: Sequence[float]) -> tuple[float, float]:
    vals = list(values)
    mean = statistics.fmean(vals)
    return mean, 1.96 * statistics.stdev(vals) / math.sqrt(len(vals))


# ---------------------------------------------------------------------------
# benchmark


@lru_cache(maxsize=8)
def library(seed: int = 2024) -> tuple[sc.Garment, ...]:
    return tuple(sc.make_library(10, seed))


@lru_cache(maxsize=4)
def small_library(seed: int = 2024) -> tuple[sc.Garment, ...]:
    """Small garments (0.0015-0.008 m^2), so 35 fit side by side."""
    return tuple(sc.make_library(10, seed, area_range=(0.0015, 0.008)))


def episode_scene(cfg: Config, seed: int, n: int | None = None) -> sc.Scene:
    n = cfg.bench.garments if n is None else n
    lib = library(cfg.bench.library_seed)
    return sc.generate_scene(lib, n, np.random.default_rng(seed), cfg.grid(), cfg.basket,
                             seed, cfg.gripper, cfg.predictor, cfg.sim)


def seeded_episode(cfg: Config, policy: str, seed: int) -> EpisodeRecord:
    scene = episode_scene(cfg, seed)
    rp, rs = _rngs(seed)
    return run_episode(scene, policy, cfg, rp, rs, cfg.bench.step_factor * len(scene.stack), seed)


def _job(args):
    cfg_dict, policy, seed = args
    return seeded_episode(_cfg_from(cfg_dict), policy, seed)


@lru_cache(maxsize=4)
def _cfg_cached(key):
    import json
    return from_dict(json.loads(key))


def _cfg_from(cfg_dict):
    import json
    return _cfg_cached(json.dumps(cfg_dict, sort_keys=True))


@dataclass
class PolicySummary:
    policy: str
    mean_opt: float
    ci95: float
    episodes: int
    mean_transports: float
    mean_moves: float
    completion_rate: float


@dataclass
class BenchReport:
    config_hash: str
    seed_base: int
    summaries: list[PolicySummary]
    records: list[EpisodeRecord]

    def summary(self, policy: str) -> PolicySummary:
        return next(s for s in self.summaries if s.policy == policy)


def summarize(policy: str, recs: Sequence[EpisodeRecord]) -> PolicySummary:
    if len(recs) >= 2:
        mean, ci = opt_metric(recs)
    else:
        mean, ci = (recs[0].opt if recs else 0.0), float("nan")
    n = len(recs)
    return PolicySummary(policy, mean, ci, n,
                         sum(r.transports for r in recs) / max(n, 1),
                         sum(r.workspace_moves for r in recs) / max(n, 1),
                         sum(r.completed for r in recs) / max(n, 1))


def bench(cfg: Config, workers: int | None = None, out_dir=None) -> BenchReport:
    """Run every configured policy on the same scene seeds.

    With ``out_dir`` the report is written there; if an episode raises, the
    episodes finished so far are written before the error propagates.
    """
    b = cfg.bench
    workers = b.workers if workers is None else workers
    seeds = [b.seed + i for i in range(b.episodes)]
    jobs = [(cfg.to_dict(), p, s) for p in b.policies for s in seeds]
    records: list[EpisodeRecord] = []
    try:
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                for rec in pool.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))):
                    records.append(rec)
        else:
            for job in jobs:
                records.append(_job(job))
    finally:
        report = _report(cfg, records)
        if out_dir is not None:
            from .io import save_report
            save_report(report, out_dir)
    return report


def _report(cfg: Config, records: list[EpisodeRecord]) -> BenchReport:
    sums = []
    for p in cfg.bench.policies:
        recs = [r for r in records if r.policy == p]
        if recs:
            sums.append(summarize(p, recs))
    return BenchReport(cfg.digest(), cfg.bench.seed, sums, records)


# ---------------------------------------------------------------------------
# scaling sweep


@dataclass
class ScalingRow:
    n_garments: int
    n_segments_observed: int
    candidate_gen_time: float
    milp_solve_time: float
    plan_size: int
    n_candidates: int = 0
    status: str = ""


def scaling_bench(n_list: Sequence[int], rng: np.random.Generator, cfg: Config = Config(),
                  repeats: int = 5) -> tuple[list[ScalingRow], list[ScalingRow]]:
    """One planning pass per non-overlapping scene; returns ``(medians, raw)``."""
    if not n_list or any(n < 1 for n in n_list):
        raise ValueError("garment counts must be >= 1")
    if list(n_list) != sorted(n_list):
        raise ValueError("garment counts must be ascending")
    lib = small_library(cfg.bench.library_seed)
    meta = cfg.grid()
    raw, med = [], []
    for n in n_list:
        rows = []
        for _ in range(repeats):
            scene = sc.generate_separated(lib, n, rng, meta, cfg.basket)
            obs = sc.observe(scene, cfg.sim.min_visible)
            plan = segment_cycle(obs, cfg, rng)
            out = plan.outcome
            rows.append(ScalingRow(n, len(obs.segments), plan.candidate_time, plan.solve_time,
                                   len(plan.grasps), len(plan.candidates),
                                   out.status if out else "fallback"))
        raw.extend(rows)
        med.append(ScalingRow(
            n, int(statistics.median(r.n_segments_observed for r in rows)),
            statistics.median(r.candidate_gen_time for r in rows),
            statistics.median(r.milp_solve_time for r in rows),
            int(statistics.median(r.plan_size for r in rows)),
            int(statistics.median(r.n_candidates for r in rows)),
            ",".join(sorted({r.status for r in rows}))))
    return med, raw


# ---------------------------------------------------------------------------
# planner calibration


def cycle_coverage_trials(cfg: Config, n_plans: int, seed: int = 0) -> tuple[int, int, list]:
    """Execute fresh segment plans against the true scene they were planned on.

    Every planned grasp is attempted on the cycle-start scene with independent
    draws from the true overlap model.  Returns ``(covered, planned, plans)``
    where ``planned`` counts non-dropped segments over all plans and
    ``covered`` those whose garment was picked by at least one grasp.
    """
    covered = planned = 0
    plans = []
    k = 0
    while len(plans) < n_plans:
        scene = episode_scene(cfg, seed + k)
        rp, rs = _rngs(seed + k)
        k += 1
        obs = sc.observe(scene, cfg.sim.min_visible)
        plan = segment_cycle(obs, cfg, rp)
        if plan.fallback or plan.outcome is None:
            continue
        plans.append(plan)
        hit_ids: set[int] = set()
        for g in plan.grasps:
            p = sc.true_probs(scene, g.grasp, cfg.gripper, cfg.predictor)
            draws = rs.random(len(scene.stack)) < p
            hit_ids.update(gm.id for gm, d in zip(scene.stack, draws) if d)
        dropped = set(plan.outcome.dropped_garments)
        # cleaned segment j corresponds to the j-th surviving observed segment
        seg_ids = _cleaned_segment_garments(obs, cfg)
        for j, gid in enumerate(seg_ids):
            if j in dropped:
                continue
            planned += 1
            covered += gid in hit_ids
    return covered, planned, plans


def _cleaned_segment_garments(obs: sc.ObservedScene, cfg: Config) -> list[int]:
    from .raster import fill_holes
    out = []
    for sid, m in obs.segments:
        if (fill_holes(m, cfg.policy.fill_kernel) & obs.foreground).any():
            out.append(obs.truth_link[sid])
    return out
