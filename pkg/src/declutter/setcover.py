"""Probabilistic set cover as a binary covering program.

A plan ``x`` selects grasp candidates.  Garment ``j`` is covered when
``sum_i x_i * log(1 - p_ij) <= log(1 - q_j)``, and two conflicting candidates
may not both be selected.  We minimise the number of selected candidates.

Internally every solver works with the non-negative *coverage* ``-A`` and the
positive *need* ``-b``: a garment is satisfied once the coverage of the
selected candidates reaches its need (up to ``TOL``).
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .predictor import ProbMatrix

log = logging.getLogger(__name__)

TOL = 1e-9
BRUTE_FORCE_LIMIT = 20

OPTIMAL = "optimal"
INCUMBENT = "feasible-incumbent"
INFEASIBLE = "infeasible"
RELAXED = "relaxed"
UNKNOWN = "infeasible-unknown"


class ModelViolation(ValueError):
    """Raised when a probability of exactly 1 makes the log-model undefined."""


@dataclass(frozen=True, eq=False)
class MilpInstance:
    A: np.ndarray
    b: np.ndarray
    conflicts: frozenset = frozenset()

    def __post_init__(self):
        A = np.array(self.A, dtype=float, copy=True)
        b = np.array(self.b, dtype=float, copy=True).ravel()
        if A.ndim != 2:
            A = A.reshape(0, b.size) if A.size == 0 else A
        if A.shape[1] != b.size:
            raise ValueError(f"A has {A.shape[1]} columns but b has {b.size} entries")
        if not np.all(np.isfinite(A)) or np.any(A > 0):
            raise ValueError("A entries must be finite and <= 0")
        if not np.all(np.isfinite(b)) or np.any(b >= 0):
            raise ValueError("b entries must be finite and < 0")
        pairs = set()
        for i, k in self.conflicts:
            i, k = int(i), int(k)
            if i == k or not (0 <= i < A.shape[0] and 0 <= k < A.shape[0]):
                raise ValueError(f"bad conflict pair ({i}, {k})")
            pairs.add((min(i, k), max(i, k)))
        A.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "conflicts", frozenset(pairs))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    def neighbors(self) -> list[set[int]]:
        nb: list[set[int]] = [set() for _ in range(self.n)]
        for i, k in self.conflicts:
            nb[i].add(k)
            nb[k].add(i)
        return nb


@dataclass(frozen=True)
class GraspPlan:
    selected: tuple[int, ...] = ()

    @property
    def objective(self) -> int:
        return len(self.selected)

    def as_vector(self, n: int) -> np.ndarray:
        x = np.zeros(n, dtype=int)
        x[list(self.selected)] = 1
        return x


@dataclass(frozen=True)
class SolverConfig:
    q: float = 0.7
    time_budget: float | None = 60.0
    node_budget: int | None = 200_000
    strategy: str = "exact"

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ValueError(f"q must lie in (0, 1), got {self.q}")
        if self.strategy not in ("exact", "greedy"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass(frozen=True)
class SolveOutcome:
    plan: GraspPlan
    status: str
    dropped_garments: tuple[int, ...] = ()
    nodes_explored: int = 0
    wall_time: float = field(default=0.0, compare=False)


def build_milp(P: ProbMatrix | np.ndarray, q, conflicts: Iterable = ()) -> MilpInstance:
    p = P.p if isinstance(P, ProbMatrix) else np.asarray(P, dtype=float)
    if p.ndim != 2:
        raise ValueError("probability matrix must be 2-D")
    if np.any(p >= 1):
        raise ModelViolation("a grasp probability of 1 is not representable")
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    q = np.broadcast_to(np.asarray(q, dtype=float), (p.shape[1],))
    if np.any(q <= 0) or np.any(q >= 1):
        raise ValueError("target probabilities must lie in (0, 1)")
    with np.errstate(divide="ignore"):
        A = np.log1p(-p)
    return MilpInstance(A + 0.0, np.log1p(-q), frozenset(conflicts))


def plan_failure_prob(plan: GraspPlan, P: ProbMatrix | np.ndarray) -> np.ndarray:
    p = P.p if isinstance(P, ProbMatrix) else np.asarray(P, dtype=float)
    sel = list(plan.selected)
    return np.prod(1.0 - p[sel], axis=0) if sel else np.ones(p.shape[1])


def is_valid(plan: GraspPlan, inst: MilpInstance) -> bool:
    chosen = set(plan.selected)
    return not any(i in chosen and k in chosen for i, k in inst.conflicts)


def satisfied(plan: GraspPlan, inst: MilpInstance) -> np.ndarray:
    """Per-garment flag: does the plan meet that garment's target?"""
    sel = list(plan.selected)
    total = inst.A[sel].sum(axis=0) if sel else np.zeros(inst.m)
    return total <= inst.b + TOL


# ---------------------------------------------------------------------------
# greedy


def _greedy(cov: np.ndarray, need: np.ndarray, nbrs: Sequence[set[int]],
            allowed: np.ndarray | None = None) -> tuple[list[int], np.ndarray]:
    """Pick the candidate with the largest capped marginal coverage until done.

    Returns the picks and the remaining need.
    """
    n = cov.shape[0]
    avail = np.ones(n, dtype=bool) if allowed is None else allowed.copy()
    need = need.copy()
    picks: list[int] = []
    while np.any(need > TOL) and avail.any():
        gain = np.minimum(cov, np.maximum(need, 0.0)).sum(axis=1)
        gain[~avail] = -1.0
        i = int(np.argmax(gain))
        if gain[i] <= 0:
            break
        picks.append(i)
        need -= cov[i]
        avail[i] = False
        avail[list(nbrs[i])] = False
    return picks, need


def solve_greedy(inst: MilpInstance) -> SolveOutcome:
    t0 = time.perf_counter()
    picks, need = _greedy(-inst.A, -inst.b, inst.neighbors())
    dropped = tuple(int(j) for j in np.flatnonzero(need > TOL))
    status = RELAXED if dropped else INCUMBENT
    return SolveOutcome(GraspPlan(tuple(sorted(picks))), status, dropped, len(picks),
                        time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# exact branch and bound


class _BudgetExhausted(Exception):
    pass


def _max_independent_weight(w: np.ndarray, nbrs: Sequence[set[int]]) -> float:
    """Largest total weight of a conflict-free subset (exact)."""
    verts = [i for i in range(len(w)) if w[i] > 0]
    vset = set(verts)
    seen: set[int] = set()
    total = 0.0
    for s in verts:
        if s in seen:
            continue
        comp, stack = [], [s]
        seen.add(s)
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in nbrs[v]:
                if u in vset and u not in seen:
                    seen.add(u)
                    stack.append(u)
        if all(len(nbrs[v] & vset) >= len(comp) - 1 for v in comp):
            total += max(w[v] for v in comp)
        else:
            total += _mwis(sorted(comp, key=lambda v: (-w[v], v)), w, nbrs)
    return total


def _mwis(verts: list[int], w: np.ndarray, nbrs: Sequence[set[int]]) -> float:
    best = 0.0

    def rec(vs: list[int], acc: float):
        nonlocal best
        if acc + sum(w[v] for v in vs) <= best:
            return
        if not vs:
            best = acc
            return
        v, rest = vs[0], vs[1:]
        rec([u for u in rest if u not in nbrs[v]], acc + w[v])
        rec(rest, acc)

    rec(verts, 0.0)
    return best


def _disjoint_bound(helps: np.ndarray, per_garment: np.ndarray, open_: np.ndarray) -> int:
    """Sum of per-garment bounds over garments no single candidate helps jointly.

    Built greedily from the most demanding garment; any such set is valid.
    """
    shared = (helps.T.astype(np.int32) @ helps.astype(np.int32)) > 0
    total = 0
    blocked = np.zeros(len(per_garment), dtype=bool)
    for j in np.argsort(-per_garment, kind="stable"):
        if not open_[j] or blocked[j]:
            continue
        total += int(per_garment[j])
        blocked |= shared[j]
    return total


class _BranchAndBound:
    """Depth-first search over which candidate next helps the tightest garment."""

    def __init__(self, cov, need, nbrs, node_budget, deadline):
        self.cov = cov
        self.need0 = need
        self.n = cov.shape[0]
        self.nbr_mask = np.zeros((self.n, self.n), dtype=bool)
        for i, s in enumerate(nbrs):
            self.nbr_mask[i, list(s)] = True
            self.nbr_mask[i, i] = True
        self.node_budget = node_budget
        self.deadline = deadline
        self.nodes = 0
        self.best: list[int] | None = None
        self.best_size = math.inf
        self.stop_at_first = False

    def offer(self, plan: list[int]):
        if len(plan) < self.best_size:
            self.best = sorted(plan)
            self.best_size = len(plan)

    def run(self):
        self._node([], self.need0.copy(), np.ones(self.n, dtype=bool))

    def _tick(self):
        self.nodes += 1
        if self.node_budget is not None and self.nodes > self.node_budget:
            raise _BudgetExhausted
        if self.deadline is not None and self.nodes % 128 == 0 and time.perf_counter() > self.deadline:
            raise _BudgetExhausted

    def _node(self, sel: list[int], need: np.ndarray, avail: np.ndarray):
        self._tick()
        open_ = need > TOL
        if not open_.any():
            self.offer(sel)
            if self.stop_at_first:
                raise _BudgetExhausted
            return
        if len(sel) + 1 >= self.best_size:
            return
        idx = np.flatnonzero(avail)
        if idx.size == 0:
            return
        need_pos = np.where(open_, need, 0.0)
        cap = np.minimum(self.cov[idx], need_pos)
        col_max = cap.max(axis=0)
        if np.any(col_max[open_] <= 0):
            return
        if np.any(cap.sum(axis=0)[open_] < need[open_] - TOL):
            return
        remaining = np.where(open_, need - TOL, 0.0)
        per_garment = np.zeros_like(need)
        per_garment[open_] = np.ceil(remaining[open_] / col_max[open_] - 1e-12)
        gain = cap.sum(axis=1)
        lb = max(per_garment.max(), math.ceil(remaining.sum() / gain.max() - 1e-12), 1)
        if len(sel) + lb >= self.best_size:
            return
        helps = cap > 0
        lb = max(lb, _disjoint_bound(helps, per_garment, open_))
        if len(sel) + lb >= self.best_size:
            return
        # tightest garment first; fewer helpers breaks ties
        helpers = helps.sum(axis=0)
        j = min(np.flatnonzero(open_), key=lambda g: (-per_garment[g], helpers[g], g))
        branch = idx[cap[:, j] > 0]
        order = np.lexsort((branch, -gain[cap[:, j] > 0]))
        avail = avail.copy()
        for i in branch[order].tolist():
            child = avail & ~self.nbr_mask[i]
            self._node(sel + [i], need - self.cov[i], child)
            avail[i] = False
            if len(sel) + 1 >= self.best_size:
                return


def _reduce(cov: np.ndarray, nbrs: Sequence[set[int]]) -> list[int]:
    """Indices of candidates kept after removing useless and dominated ones.

    Candidate ``k`` is dropped when a conflicting candidate ``i`` covers at least
    as much of every garment and conflicts with nothing outside ``k``'s
    neighbourhood, so ``i`` can replace ``k`` in any plan.  Exact ties keep
    the lower index.
    """
    n = cov.shape[0]
    alive = cov.max(axis=1, initial=0.0) > 0
    for i in range(n):
        if not alive[i]:
            continue
        for k in nbrs[i]:
            if not alive[k] or not alive[i]:
                continue
            if np.all(cov[i] >= cov[k]) and (nbrs[i] - {k}) <= (nbrs[k] - {i}):
                if np.array_equal(cov[i], cov[k]) and (nbrs[i] - {k}) == (nbrs[k] - {i}):
                    alive[max(i, k)] = False
                else:
                    alive[k] = False
    return np.flatnonzero(alive).tolist()


def _unreachable(cov: np.ndarray, need: np.ndarray, nbrs) -> list[int]:
    return [j for j in range(cov.shape[1])
            if _max_independent_weight(cov[:, j], nbrs) < need[j] - TOL]


class _Search:
    """Exact search over a garment subset, with budgets shared across calls."""

    def __init__(self, inst: MilpInstance, cfg: SolverConfig, t0: float):
        self.cov_full = np.maximum(-inst.A, 0.0)
        self.need_full = -inst.b
        self.nbrs = inst.neighbors()
        self.cfg = cfg
        self.deadline = None if cfg.time_budget is None else t0 + cfg.time_budget
        self.nodes = 0

    def run(self, garments: list[int], stop_at_first: bool = False):
        """Return ``(plan or None, complete)`` for covering ``garments``.

        Independent components of the candidate/garment graph are searched
        separately and their plans concatenated.
        """
        need = self.need_full[garments]
        cov = np.minimum(self.cov_full[:, garments], need)
        keep = _reduce(cov, self.nbrs)
        pos = {c: u for u, c in enumerate(keep)}
        sub_nbrs = [{pos[k] for k in self.nbrs[c] if k in pos} for c in keep]
        sub_cov = cov[keep]
        plan: list[int] = []
        complete = True
        for cands, gs in _components(sub_cov, sub_nbrs):
            local = {c: u for u, c in enumerate(cands)}
            part_nbrs = [{local[k] for k in sub_nbrs[c] if k in local} for c in cands]
            part, done = self._search(sub_cov[np.ix_(cands, gs)], need[gs], part_nbrs,
                                      stop_at_first)
            complete &= done
            if part is None:
                return None, complete
            plan.extend(keep[cands[u]] for u in part)
        return sorted(plan), complete

    def _search(self, cov, need, nbrs, stop_at_first):
        budget = None
        if self.cfg.node_budget is not None:
            budget = max(self.cfg.node_budget - self.nodes, 0)
        bb = _BranchAndBound(cov, need, nbrs, budget, self.deadline)
        bb.stop_at_first = stop_at_first
        if not stop_at_first:
            picks, rest = _greedy(cov, need, nbrs)
            if not np.any(rest > TOL):
                bb.offer(picks)
        complete = True
        try:
            bb.run()
        except _BudgetExhausted:
            complete = stop_at_first and bb.best is not None
        self.nodes += bb.nodes
        return bb.best, complete


def _components(cov: np.ndarray, nbrs: Sequence[set[int]]) -> list[tuple[list[int], list[int]]]:
    """Connected ``(candidates, garments)`` groups; edges are help and conflict."""
    n, m = cov.shape
    rows, cols = np.nonzero(cov > 0)
    src = list(rows) + [i for i, s in enumerate(nbrs) for _ in s]
    dst = list(cols + n) + [k for s in nbrs for k in s]
    graph = coo_matrix((np.ones(len(src)), (src, dst)), shape=(n + m, n + m))
    _, label = connected_components(graph, directed=False)
    out = []
    for lab in dict.fromkeys(label[n:].tolist()):
        members = np.flatnonzero(label == lab)
        out.append((members[members < n].tolist(), (members[members >= n] - n).tolist()))
    return out


def solve_exact(inst: MilpInstance, cfg: SolverConfig = SolverConfig()) -> SolveOutcome:
    """Minimum-cardinality valid plan by branch and bound.

    Garments that no conflict-free plan can cover are dropped first; if the
    remaining garments are still jointly unreachable, garments are admitted in
    index order while a plan covering all admitted ones exists.  Dropped
    garments are reported and give status ``relaxed``.
    """
    t0 = time.perf_counter()
    if inst.m == 0:
        return SolveOutcome(GraspPlan(), OPTIMAL, (), 0, time.perf_counter() - t0)
    search = _Search(inst, cfg, t0)
    bad = set(_unreachable(search.cov_full, search.need_full, search.nbrs))
    kept = [j for j in range(inst.m) if j not in bad]

    def done(plan, status, kept):
        dropped = tuple(j for j in range(inst.m) if j not in kept)
        if status == OPTIMAL and dropped:
            status = RELAXED
        return SolveOutcome(GraspPlan(tuple(plan or ())), status, dropped, search.nodes,
                            time.perf_counter() - t0)

    plan, complete = search.run(kept)
    if plan is not None:
        return done(plan, OPTIMAL if complete else INCUMBENT, kept)
    if not complete:
        return done(None, UNKNOWN, kept)
    admitted: list[int] = []
    for j in kept:
        found, complete = search.run(admitted + [j], stop_at_first=True)
        if found is not None:
            admitted.append(j)
        elif not complete:
            return done(None, UNKNOWN, admitted)
    plan, complete = search.run(admitted)
    return done(plan, OPTIMAL if complete else INCUMBENT, admitted)


def solve(inst: MilpInstance, cfg: SolverConfig = SolverConfig()) -> SolveOutcome:
    """Dispatch on ``cfg.strategy``; exact falls back to greedy if it finds nothing."""
    if cfg.strategy == "greedy":
        return solve_greedy(inst)
    out = solve_exact(inst, cfg)
    if out.status == UNKNOWN:
        log.warning("exact search exhausted its budget after %d nodes; using greedy",
                    out.nodes_explored)
        g = solve_greedy(inst)
        return SolveOutcome(g.plan, g.status, g.dropped_garments,
                            out.nodes_explored + g.nodes_explored,
                            out.wall_time + g.wall_time)
    if out.status == INCUMBENT:
        log.info("exact search hit its budget; returning incumbent of size %d",
                 out.plan.objective)
    return out


# ---------------------------------------------------------------------------
# brute force oracle


def brute_force(inst: MilpInstance) -> SolveOutcome:
    """Enumerate every subset; minimum cardinality, lexicographically smallest.

    Uses the same garment-dropping rule as :func:`solve_exact`, evaluated by
    enumeration.
    """
    n, m = inst.n, inst.m
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force refuses n={n} > {BRUTE_FORCE_LIMIT}")
    t0 = time.perf_counter()
    masks = np.arange(1 << n, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
    valid = np.ones(masks.size, dtype=bool)
    for i, k in inst.conflicts:
        valid &= ~(bits[:, i] & bits[:, k])
    total = bits.astype(float) @ inst.A if n else np.zeros((1, m))
    meets = total <= inst.b + TOL
    reach = [j for j in range(m) if np.any(valid & meets[:, j])]

    def ok(garments):
        return valid & np.all(meets[:, garments], axis=1) if garments else valid

    kept = reach
    if not np.any(ok(kept)):
        kept = []
        for j in reach:
            if np.any(ok(kept + [j])):
                kept.append(j)
    good = np.flatnonzero(ok(kept))
    sizes = bits[good].sum(axis=1)
    best = good[sizes == sizes.min()]
    plans = [tuple(np.flatnonzero(bits[u]).tolist()) for u in best]
    dropped = tuple(j for j in range(m) if j not in kept)
    return SolveOutcome(GraspPlan(min(plans)), RELAXED if dropped else OPTIMAL, dropped,
                        int(masks.size), time.perf_counter() - t0)


def random_instance(rng: np.random.Generator, n: int, m: int, q: float = 0.7,
                    p_max: float = 0.95, density: float = 0.2) -> MilpInstance:
    p = rng.uniform(0.0, p_max, size=(n, m))
    pairs = [pr for pr in combinations(range(n), 2) if rng.random() < density]
    return build_milp(p, q, pairs)
