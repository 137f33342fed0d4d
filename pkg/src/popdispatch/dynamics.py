"""Mean dynamics on the strategy simplex.

Replicator, local replicator, Smith, and distributed Smith right-hand
sides; forward Euler integration with clamp-and-renormalize; and the
windowed convergence test used by the dispatch loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .game import PopulationState


class DimensionMismatch(ValueError):
    pass


class DegenerateState(RuntimeError):
    """Every share clamped to zero in one Euler step."""


class CommGraph:
    """Undirected communication graph over strategy indices.

    Must be connected, symmetric, and free of self-loops; isolated
    strategies would never receive revision opportunities.
    """

    def __init__(self, adjacency: np.ndarray):
        a = np.asarray(adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValueError("self-loops are not allowed")
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        n = a.shape[0]
        if n > 1:
            # connectivity by BFS
            seen = {0}
            queue = [0]
            while queue:
                u = queue.pop()
                for v in np.nonzero(a[u])[0]:
                    if int(v) not in seen:
                        seen.add(int(v))
                        queue.append(int(v))
            if len(seen) < n:
                missing = sorted(set(range(n)) - seen)
                raise ValueError(f"graph is disconnected: strategy {missing[0]} unreachable")
        self.adjacency = a
        self.n = n

    @classmethod
    def complete(cls, n: int) -> CommGraph:
        a = np.ones((n, n)) - np.eye(n)
        return cls(a)

    @classmethod
    def path(cls, n: int) -> CommGraph:
        a = np.zeros((n, n))
        for i in range(n - 1):
            a[i, i + 1] = a[i + 1, i] = 1.0
        return cls(a)

    @classmethod
    def from_edges(cls, n: int, edges: Sequence[tuple[int, int]]) -> CommGraph:
        a = np.zeros((n, n))
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i},{j}) outside 0..{n-1}")
            a[i, j] = a[j, i] = 1.0
        return cls(a)


@dataclass(frozen=True)
class DynamicsKind:
    """Which mean dynamic drives the game; local variants carry a graph."""

    name: str
    graph: CommGraph | None = None

    _NAMES = ("replicator", "local-replicator", "smith", "distributed-smith")

    def __post_init__(self):
        if self.name not in self._NAMES:
            raise ValueError(f"unknown dynamics {self.name!r}; expected one of {self._NAMES}")
        needs_graph = self.name in ("local-replicator", "distributed-smith")
        if needs_graph and self.graph is None:
            raise ValueError(f"{self.name} requires a communication graph")
        if not needs_graph and self.graph is not None:
            raise ValueError(f"{self.name} does not take a graph")

    def rhs(self, x: np.ndarray, f: np.ndarray) -> np.ndarray:
        if self.name == "replicator":
            return replicator_rhs(x, f)
        if self.name == "local-replicator":
            return local_replicator_rhs(x, f, self.graph)
        if self.name == "smith":
            return smith_rhs(x, f)
        return distributed_smith_rhs(x, f, self.graph)


def _check_dims(x: np.ndarray, f: np.ndarray, g: CommGraph | None = None) -> None:
    if x.shape != f.shape or x.ndim != 1:
        raise DimensionMismatch(f"shares {x.shape} vs fitness {f.shape}")
    if g is not None and g.n != x.shape[0]:
        raise DimensionMismatch(f"graph over {g.n} strategies, state has {x.shape[0]}")


def replicator_rhs(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """x_i (f_i - fbar) with fbar the share-weighted mean fitness."""
    x = np.asarray(x, float)
    f = np.asarray(f, float)
    _check_dims(x, f)
    fbar = x @ f
    return x * (f - fbar)


def local_replicator_rhs(x: np.ndarray, f: np.ndarray, g: CommGraph) -> np.ndarray:
    """x_i (f_i sum_{j in N_i} x_j - sum_{j in N_i} f_j x_j)."""
    x = np.asarray(x, float)
    f = np.asarray(f, float)
    _check_dims(x, f, g)
    a = g.adjacency
    return x * (f * (a @ x) - a @ (f * x))


def smith_rhs(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Pairwise comparison: inflow from worse strategies, outflow to better."""
    x = np.asarray(x, float)
    f = np.asarray(f, float)
    _check_dims(x, f)
    diff = f[:, None] - f[None, :]
    gain = np.maximum(diff, 0.0)
    return gain @ x - x * np.maximum(-diff, 0.0).sum(axis=1)


def distributed_smith_rhs(x: np.ndarray, f: np.ndarray, g: CommGraph) -> np.ndarray:
    """Smith dynamics with comparisons restricted to graph neighbours."""
    x = np.asarray(x, float)
    f = np.asarray(f, float)
    _check_dims(x, f, g)
    a = g.adjacency
    diff = f[:, None] - f[None, :]
    gain = np.maximum(diff, 0.0) * a
    return gain @ x - x * (np.maximum(-diff, 0.0) * a).sum(axis=1)


def euler_step(x: np.ndarray, rate: np.ndarray, h: float) -> np.ndarray:
    """One explicit Euler step kept on the simplex.

    Negative components are clamped to zero and the vector renormalized;
    raises DegenerateState if everything clamps away.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    x = np.asarray(x, float)
    rate = np.asarray(rate, float)
    if x.shape != rate.shape:
        raise DimensionMismatch(f"shares {x.shape} vs rate {rate.shape}")
    out = np.maximum(x + h * rate, 0.0)
    total = out.sum()
    if total <= 0.0:
        raise DegenerateState("all shares clamped to zero")
    return out / total


def convergence_check(
    states: Sequence[PopulationState], tol_kw: float, congested: bool = False
) -> bool:
    """Windowed stability test in set-point units.

    True iff the largest per-iteration sup-norm set-point change over the
    window is at most tol_kw and the latest snapshot carries no congestion.
    """
    if len(states) < 2:
        raise ValueError("need at least 2 states")
    if congested:
        return False
    demand = states[-1].total_demand_kw
    xs = np.stack([s.x for s in states])
    dev = np.abs(np.diff(xs, axis=0)).max(axis=1) * demand
    return bool(dev.max() <= tol_kw)


@dataclass(frozen=True)
class OverflowEvent:
    iteration: int
    line: tuple[str, str]
    flow_kw: float
    overflow_kw: float


@dataclass
class Trajectory:
    """States, fitness, and flow snapshots recorded once per iteration."""

    h: float
    states: list[PopulationState]
    fitness: np.ndarray
    flows: np.ndarray | None = None
    overflow_events: list[OverflowEvent] = field(default_factory=list)
    converged_at: int | None = None

    @property
    def setpoints_kw(self) -> np.ndarray:
        return np.stack([s.setpoints_kw for s in self.states])

    @property
    def final(self) -> PopulationState:
        return self.states[-1]


def stable_substeps(h: float, slope_bound: float, gain: float = 1.0) -> int:
    """Internal Euler substeps needed to integrate one reported step of h.

    The barrier and congestion terms make the fitness field stiff; a raw
    Euler step of h overshoots across their kinks and rings around the
    rest point instead of settling. Splitting each step so that
    substep * slope_bound stays at or below `gain` keeps the update
    contractive near the kinks while the reported iteration grid (and
    hence iteration counts) is unchanged.
    """
    if slope_bound <= 0:
        return 1
    return max(1, math.ceil(h * slope_bound / gain))


def run_game(
    x0: PopulationState,
    kind: DynamicsKind,
    fitness_fn: Callable[[PopulationState], np.ndarray],
    h: float = 0.01,
    max_iter: int = 100_000,
    tol: float = 0.01,
    window: int = 20,
    *,
    substeps: int = 1,
    flow_fn: Callable[[PopulationState], tuple[np.ndarray, list]] | None = None,
    overflow_tol_kw: float = 0.1,
) -> Trajectory:
    """Integrate the selected dynamic until converged or max_iter.

    One reported iteration advances time by h using `substeps` internal
    Euler steps of h/substeps. States, fitness, and (when flow_fn is given)
    flow snapshots are recorded on the reported grid. flow_fn returns the
    line flow vector and the list of detected overloads for a state; those
    drive the overflow event log and gate convergence: a snapshot whose
    worst overflow exceeds overflow_tol_kw is not accepted as converged.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if window < 2:
        raise ValueError("window must be >= 2")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    demand = x0.total_demand_kw
    hs = h / substeps

    def record_flows(state, k, flows_hist, events, seen_lines):
        flows, overs = flow_fn(state)
        flows_hist.append(np.asarray(flows, float))
        congested = False
        for cg in overs:
            if cg.overflow_kw > overflow_tol_kw:
                congested = True
            if cg.line.key not in seen_lines:
                seen_lines.add(cg.line.key)
                sign = 1.0 if cg.direction == "parent->child" else -1.0
                events.append(
                    OverflowEvent(
                        iteration=k,
                        line=cg.line.key,
                        flow_kw=sign * (cg.line.limit_kw + cg.overflow_kw),
                        overflow_kw=cg.overflow_kw,
                    )
                )
        return congested

    states = [x0]
    fitness_hist = [np.asarray(fitness_fn(x0), float)]
    flows_hist: list[np.ndarray] = []
    events: list[OverflowEvent] = []
    seen_lines: set = set()
    congested = False
    if flow_fn is not None:
        congested = record_flows(x0, 0, flows_hist, events, seen_lines)

    x = x0.x.copy()
    converged_at = None
    for k in range(1, max_iter + 1):
        f = fitness_hist[-1]
        for s in range(substeps):
            if s > 0:
                f = np.asarray(fitness_fn(PopulationState(x, demand)), float)
            rate = kind.rhs(x, f)
            x = euler_step(x, rate, hs)
        state = PopulationState(x.copy(), demand)
        states.append(state)
        fitness_hist.append(np.asarray(fitness_fn(state), float))
        if flow_fn is not None:
            congested = record_flows(state, k, flows_hist, events, seen_lines)
        if len(states) >= window:
            if convergence_check(states[-window:], tol, congested=congested):
                converged_at = k
                break

    return Trajectory(
        h=h,
        states=states,
        fitness=np.stack(fitness_hist),
        flows=np.stack(flows_hist) if flows_hist else None,
        overflow_events=events,
        converged_at=converged_at,
    )
