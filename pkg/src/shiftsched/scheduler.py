"""Earliness/tardiness start-time assignment with interval capacities.

Order ``i`` started at slot ``t`` (1-based) is predicted to finish
``yhat_i`` days later.  Finishing before the due date costs ``c_early``
per day, after it ``c_tardy`` per day.  While running, an order occupies
``max(1, ceil(yhat_i))`` consecutive slots and at most ``K_t`` orders may
occupy slot ``t``.  Each order receives exactly one start slot.
"""
from __future__ import annotations

import csv
import heapq
import itertools
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment


class InfeasibleScheduleError(RuntimeError):
    """No assignment satisfies the capacity constraints."""


class InstanceTooLargeError(ValueError):
    """Brute-force enumeration was requested on an instance above the size guard."""


@dataclass
class SchedulingInstance:
    due_dates: np.ndarray
    predicted: np.ndarray
    horizon: int
    capacity: np.ndarray
    c_early: float = 1.0
    c_tardy: float = 1.0
    realized: np.ndarray | None = None
    order_ids: list | None = None

    def __post_init__(self):
        self.due_dates = np.asarray(self.due_dates, dtype=int)
        self.predicted = np.asarray(self.predicted, dtype=float)
        self.capacity = np.asarray(self.capacity, dtype=int)
        if self.realized is not None:
            self.realized = np.asarray(self.realized, dtype=float)
        m = len(self.due_dates)
        if self.order_ids is None:
            self.order_ids = list(range(m))
        if len(self.predicted) != m or len(self.order_ids) != m:
            raise ValueError("due_dates, predicted and order_ids must have equal length")
        if self.realized is not None and len(self.realized) != m:
            raise ValueError("realized must have one entry per order")
        if m and self.due_dates.min() < 1:
            raise ValueError("due dates are slot indices >= 1")
        if np.any(self.predicted < 0):
            raise ValueError("predicted throughput times must be nonnegative")
        if len(self.capacity) != self.horizon:
            raise ValueError("capacity needs one entry per slot")
        if np.any(self.capacity < 0):
            raise ValueError("capacities must be nonnegative")
        if m and self.horizon < self.due_dates.max():
            raise ValueError("horizon must cover every due date")
        if self.c_early < 0 or self.c_tardy < 0:
            raise ValueError("cost rates must be nonnegative")

    @classmethod
    def build(cls, due_dates, predicted, capacity=70, c_early=1.0, c_tardy=1.0,
              realized=None, horizon=None, order_ids=None):
        """Convenience constructor with a scalar capacity and the default horizon."""
        due_dates = np.asarray(due_dates, dtype=int)
        predicted = np.asarray(predicted, dtype=float)
        if horizon is None:
            horizon = default_horizon(due_dates, predicted)
        cap = np.asarray(capacity, dtype=int)
        if cap.ndim == 0:
            cap = np.full(horizon, int(cap))
        return cls(due_dates, predicted, int(horizon), cap, float(c_early), float(c_tardy),
                   realized, order_ids)

    @property
    def m(self) -> int:
        return len(self.due_dates)

    def with_predictions(self, predicted) -> "SchedulingInstance":
        return SchedulingInstance(self.due_dates, predicted, self.horizon, self.capacity,
                                  self.c_early, self.c_tardy, self.realized, self.order_ids)

    def durations(self) -> np.ndarray:
        return footprint(self.predicted)

    def cost_matrix(self) -> np.ndarray:
        """``C[i, t-1]`` = cost of starting order ``i`` at slot ``t``."""
        t = np.arange(1, self.horizon + 1)
        return lateness_cost(self.due_dates[:, None] - t[None, :], self.predicted[:, None],
                             self.c_early, self.c_tardy)

    # -- text formats -------------------------------------------------------
    def to_dict(self) -> dict:
        orders = []
        for k in range(self.m):
            row = {"id": self.order_ids[k], "due_date": int(self.due_dates[k]),
                   "predicted": float(self.predicted[k])}
            if self.realized is not None:
                row["realized"] = float(self.realized[k])
            orders.append(row)
        return {"horizon": self.horizon, "capacity": self.capacity.tolist(),
                "c_early": self.c_early, "c_tardy": self.c_tardy, "orders": orders}

    @classmethod
    def from_dict(cls, payload: dict) -> "SchedulingInstance":
        orders = payload["orders"]
        realized = None
        if orders and all("realized" in o for o in orders):
            realized = [o["realized"] for o in orders]
        due = [o["due_date"] for o in orders]
        pred = [o["predicted"] for o in orders]
        ids = [o.get("id", k) for k, o in enumerate(orders)]
        cap = payload.get("capacity", 70)
        return cls.build(due, pred, cap, payload.get("c_early", 1.0), payload.get("c_tardy", 1.0),
                         realized, payload.get("horizon"), ids)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "SchedulingInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Schedule:
    start_slot: np.ndarray
    objective: float
    optimal: bool = True
    nodes: int = 0
    order_ids: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"objective": self.objective, "optimal": self.optimal, "nodes": self.nodes,
                "orders": [{"id": oid, "start_slot": int(s)}
                           for oid, s in zip(self.order_ids, self.start_slot)]}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "start_slot"])
            for oid, s in zip(self.order_ids, self.start_slot):
                w.writerow([oid, int(s)])


def default_horizon(due_dates, predicted, slack: int = 5) -> int:
    if len(due_dates) == 0:
        return 1
    return int(np.max(due_dates) + math.ceil(float(np.max(predicted))) + slack)


def footprint(durations) -> np.ndarray:
    """Slots occupied by an order: ``ceil(duration)`` with a floor of one."""
    return np.maximum(1, np.ceil(np.asarray(durations, dtype=float))).astype(int)


def lateness_cost(slack, duration, c_early, c_tardy):
    """Cost of a job with ``slack`` days between start and due date taking ``duration`` days."""
    gap = slack - duration
    return c_early * np.maximum(0.0, gap) + c_tardy * np.maximum(0.0, -gap)


def start_cost(i: int, t: int, inst: SchedulingInstance) -> float:
    if not 1 <= t <= inst.horizon:
        raise ValueError(f"slot {t} outside 1..{inst.horizon}")
    return float(lateness_cost(inst.due_dates[i] - t, inst.predicted[i], inst.c_early, inst.c_tardy))


def top_k_by_due_date(inst: SchedulingInstance, k: int = 100) -> SchedulingInstance:
    """Keep the ``k`` orders with the earliest due dates (ties: lower index first)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    keep = np.argsort(inst.due_dates, kind="stable")[:k]
    realized = None if inst.realized is None else inst.realized[keep]
    uniform = bool(np.all(inst.capacity == inst.capacity[0]))
    return SchedulingInstance.build(
        inst.due_dates[keep], inst.predicted[keep],
        int(inst.capacity[0]) if uniform else inst.capacity,
        inst.c_early, inst.c_tardy, realized, None if uniform else inst.horizon,
        [inst.order_ids[j] for j in keep],
    )


def occupancy(starts, durations, t: int) -> int:
    starts = np.asarray(starts, dtype=int)
    dur = footprint(durations) if len(starts) else np.zeros(0, dtype=int)
    return int(np.sum((starts <= t) & (t < starts + dur)))


def occupancy_profile(starts, durations, horizon: int) -> np.ndarray:
    """Occupancy of slots ``1..horizon`` as an array (index ``t-1``)."""
    occ = np.zeros(horizon + 1, dtype=int)
    for s, d in zip(np.asarray(starts, dtype=int), footprint(durations)):
        lo, hi = s - 1, min(s - 1 + d, horizon)
        if lo < horizon:
            occ[lo] += 1
            occ[hi] -= 1
    return np.cumsum(occ)[:horizon]


def is_feasible(inst: SchedulingInstance, starts) -> bool:
    starts = np.asarray(starts, dtype=int)
    if len(starts) != inst.m or np.any(starts < 1) or np.any(starts > inst.horizon):
        return False
    return bool(np.all(occupancy_profile(starts, inst.predicted, inst.horizon) <= inst.capacity))


def objective(inst: SchedulingInstance, starts) -> float:
    starts = np.asarray(starts, dtype=int)
    C = inst.cost_matrix()
    return float(sum(C[i, s - 1] for i, s in enumerate(starts)))


def realized_cost(starts, realized_y, due_dates, c_early=1.0, c_tardy=1.0) -> float:
    starts = np.asarray(starts, dtype=float)
    slack = np.asarray(due_dates, dtype=float) - starts
    return float(np.sum(lateness_cost(slack, np.asarray(realized_y, dtype=float), c_early, c_tardy)))


# -- exact solvers -------------------------------------------------------------

def solve_bruteforce(inst: SchedulingInstance, max_assignments: int = 10**7) -> Schedule:
    """Enumerate every start vector; smallest objective, ties broken lexicographically."""
    m, T = inst.m, inst.horizon
    if m == 0:
        return Schedule(np.zeros(0, dtype=int), 0.0, True, 1, [])
    total = T ** m
    if total > max_assignments:
        raise InstanceTooLargeError(f"{T}^{m} = {total} assignments exceeds {max_assignments}")
    C = inst.cost_matrix()
    dur = inst.durations()
    # footprints[i][s] is the 0/1 occupancy row of order i started at slot s+1
    slots = np.arange(T)
    fp = [((slots[None, :] >= slots[:, None]) & (slots[None, :] < slots[:, None] + d)).astype(np.int16)
          for d in dur]
    best_val, best_vec = np.inf, None
    chunk = max(1, min(total, 1 << 18))
    for lo in range(0, total, chunk):
        idx = np.arange(lo, min(lo + chunk, total))
        starts0 = np.stack(np.unravel_index(idx, (T,) * m), axis=1)
        occ = np.zeros((len(idx), T), dtype=np.int16)
        vals = np.zeros(len(idx))
        for i in range(m):
            occ += fp[i][starts0[:, i]]
            vals += C[i, starts0[:, i]]
        ok = np.all(occ <= inst.capacity[None, :], axis=1)
        if not ok.any():
            continue
        vals = np.where(ok, vals, np.inf)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best_vec = vals[j], starts0[j] + 1
    if best_vec is None:
        raise InfeasibleScheduleError("no feasible assignment exists")
    return Schedule(best_vec.astype(int), float(best_val), True, total, list(inst.order_ids))


class _Occupancy:
    """Mutable occupancy with window queries for one search."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.T = len(capacity)
        self.occ = np.zeros(self.T, dtype=int)

    def fits(self, s: int, d: int) -> bool:
        lo, hi = s - 1, min(s - 1 + d, self.T)
        return bool(np.all(self.occ[lo:hi] < self.capacity[lo:hi]))

    def feasible_starts(self, d: int) -> np.ndarray:
        """Boolean mask over slots 1..T of starts that keep every slot within capacity."""
        free = self.capacity - self.occ
        padded = np.concatenate([free, np.full(d - 1, 1 << 30)])
        window = np.lib.stride_tricks.sliding_window_view(padded, d).min(axis=1)
        return window >= 1

    def add(self, s: int, d: int, sign: int = 1):
        self.occ[s - 1:min(s - 1 + d, self.T)] += sign


def _greedy(C, dur, order, capacity):
    """Cheapest currently-feasible slot for each order in due-date order (ties: earliest)."""
    occ = _Occupancy(capacity)
    starts = np.zeros(len(dur), dtype=int)
    for i in order:
        mask = occ.feasible_starts(dur[i])
        if not mask.any():
            return None
        cand = np.where(mask, C[i], np.inf)
        s = int(np.argmin(cand)) + 1
        starts[i] = s
        occ.add(s, dur[i])
    return starts


def _improve(C, dur, starts, capacity, max_rounds: int = 50):
    """Local search: single-order relocation plus optimal reassignment of slots
    within groups of equal footprint (which leaves occupancy unchanged)."""
    occ = _Occupancy(capacity)
    for i, s in enumerate(starts):
        occ.add(s, dur[i])
    starts = starts.copy()
    groups = [np.flatnonzero(dur == d) for d in np.unique(dur)]
    groups = [g for g in groups if len(g) > 1]
    for _ in range(max_rounds):
        moved = False
        for i in range(len(starts)):
            occ.add(starts[i], dur[i], -1)
            mask = occ.feasible_starts(dur[i])
            cand = np.where(mask, C[i], np.inf)
            s = int(np.argmin(cand)) + 1
            if cand[s - 1] < C[i, starts[i] - 1] - 1e-12:
                starts[i] = s
                moved = True
            occ.add(starts[i], dur[i])
        for g in groups:
            slots = starts[g]
            cost = C[np.ix_(g, slots - 1)]
            rows, cols = linear_sum_assignment(cost)
            if cost[rows, cols].sum() < cost.trace() - 1e-9:
                starts[g[rows]] = slots[cols]
                moved = True
        if not moved:
            break
    return starts


def _heuristic(C, dur, due, capacity):
    order = np.lexsort((np.arange(len(due)), due))
    starts = _greedy(C, dur, order, capacity)
    if starts is None:
        return None
    return _improve(C, dur, starts, capacity)


def heuristic_schedule(inst: SchedulingInstance) -> np.ndarray | None:
    """Greedy earliest-feasible-cheapest assignment followed by local search."""
    return _heuristic(inst.cost_matrix(), inst.durations(), inst.due_dates, inst.capacity)


def solve_branch_and_bound(inst: SchedulingInstance, node_cap: int = 200_000,
                           time_cap: float = 30.0) -> Schedule:
    """Best-first branch and bound over orders taken in due-date order.

    A node fixes the start slots of the first ``k`` orders; its bound is the
    accumulated cost plus each unfixed order's cheapest start ignoring
    capacity.  Returns a proven optimum when the search finishes within the
    limits and otherwise the incumbent with ``optimal=False``.
    """
    return _branch_and_bound(inst.cost_matrix(), inst.durations(), inst.due_dates,
                             inst.capacity, list(inst.order_ids), node_cap, time_cap)


def lower_bound(inst: SchedulingInstance, fixed: dict) -> float:
    """Search bound for a node fixing ``{order: slot}``: cost of the fixed
    orders plus every other order's cheapest start with capacity ignored."""
    C = inst.cost_matrix()
    free = [i for i in range(inst.m) if i not in fixed]
    return float(sum(C[i, s - 1] for i, s in fixed.items()) + C[free].min(axis=1).sum())


def _branch_and_bound(C, dur, due, capacity, ids, node_cap, time_cap):
    m = len(dur)
    if m == 0:
        return Schedule(np.zeros(0, dtype=int), 0.0, True, 0, ids)
    order = [int(i) for i in np.lexsort((np.arange(m), due))]
    tol = 1e-9
    row_min = C.min(axis=1)
    rest = np.concatenate([np.cumsum(row_min[order][::-1])[::-1], [0.0]])

    incumbent = _heuristic(C, dur, due, capacity) if node_cap > 0 else None
    best_val = np.inf if incumbent is None else float(C[np.arange(m), incumbent - 1].sum())
    best = incumbent
    deadline = time.monotonic() + time_cap
    occ = _Occupancy(capacity)

    counter = itertools.count()
    heap = [(rest[0], 0, next(counter), 0.0, ())]
    nodes = 0
    exhausted = True
    while heap:
        lb, _, _, acc, assign = heapq.heappop(heap)
        if lb >= best_val - tol:
            break
        if nodes >= node_cap or time.monotonic() > deadline:
            exhausted = False
            break
        nodes += 1
        k = len(assign)
        occ.occ[:] = 0
        for j, s in zip(order, assign):
            occ.add(s, dur[j])
        i = order[k]
        for s in np.flatnonzero(occ.feasible_starts(int(dur[i]))) + 1:
            c = acc + C[i, s - 1]
            child_lb = c + rest[k + 1]
            if child_lb >= best_val - tol:
                continue
            child = assign + (int(s),)
            if k + 1 == m:
                best_val = c
                best = np.zeros(m, dtype=int)
                best[order] = child
            else:
                heapq.heappush(heap, (child_lb, -(k + 1), next(counter), c, child))
    if best is None:
        if exhausted:
            raise InfeasibleScheduleError("no feasible assignment exists")
        raise InfeasibleScheduleError("search limits reached before any feasible assignment was found")
    return Schedule(best.astype(int), float(best_val), exhausted, nodes, ids)


def oracle_schedule(inst: SchedulingInstance, feasible_under=None, **limits) -> Schedule:
    """Schedule that minimizes the realized cost.

    By default the realized throughput times replace the predictions in both
    the cost and the capacity footprint.  Passing ``feasible_under`` keeps
    the realized cost but checks capacity with those durations instead, so
    the oracle searches the same feasible set as a schedule built from them.
    """
    if inst.realized is None:
        raise ValueError("oracle schedule needs realized throughput times")
    if feasible_under is None:
        return solve_branch_and_bound(inst.with_predictions(inst.realized), **limits)
    dur = footprint(np.asarray(feasible_under, dtype=float))
    if dur.shape != (inst.m,):
        raise ValueError("feasible_under must have one duration per order")
    C = inst.with_predictions(inst.realized).cost_matrix()
    return _branch_and_bound(C, dur, inst.due_dates, inst.capacity, list(inst.order_ids),
                             limits.get("node_cap", 200_000), limits.get("time_cap", 30.0))
