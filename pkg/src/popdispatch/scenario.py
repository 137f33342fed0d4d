"""Online dispatch over a load profile.

Replays minute-resolution loads, re-running the population game each step
with optional warm starting, and collects per-step oracle comparisons. The
heavy loop dispatches to the compiled kernel when available; a pure-Python
reference path computes the same thing for arbitrary configurations.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import _kernel, dynamics, game, grid, oracle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoadProfile:
    """Per-bus load time series, one row per minute."""

    buses: tuple[str, ...]
    loads_kw: np.ndarray  # shape (steps, len(buses))
    resolution_min: int = 1

    def __post_init__(self):
        arr = np.asarray(self.loads_kw, dtype=float)
        object.__setattr__(self, "loads_kw", arr)
        if arr.ndim != 2 or arr.shape[1] != len(self.buses):
            raise ValueError("loads_kw must be (steps, buses)")
        if np.any(arr < 0):
            raise ValueError("loads must be non-negative")

    def __len__(self) -> int:
        return self.loads_kw.shape[0]

    def demand_at(self, t: int) -> dict[str, float]:
        row = self.loads_kw[t]
        return {b: float(row[i]) for i, b in enumerate(self.buses)}

    def total_at(self, t: int) -> float:
        return float(self.loads_kw[t].sum())


def synthetic_day_profile(
    peaks_kw: Mapping[str, float],
    minutes: int = 1440,
    peak_minute: int = 566,
) -> LoadProfile:
    """Smooth synthetic day: morning peak at peak_minute, evening shoulder.

    Every bus follows the same shape scaled to its peak; the shape equals
    exactly 1 at peak_minute. Values are rounded to 6 decimals so the
    profile round-trips through CSV unchanged.
    """
    t = np.arange(minutes, dtype=float)
    raw = (
        0.22
        + 0.62 * np.exp(-(((t - peak_minute) / 150.0) ** 2))
        + 0.38 * np.exp(-(((t - 1150.0) / 180.0) ** 2))
    )
    shape = raw / raw[peak_minute]
    buses = tuple(peaks_kw)
    loads = np.round(np.outer(shape, np.array([peaks_kw[b] for b in buses])), 6)
    return LoadProfile(buses=buses, loads_kw=loads)


@dataclass
class ScenarioConfig:
    """Everything one dispatch run needs, already loaded into objects."""

    net: grid.RadialNetwork
    fleet: game.Fleet
    profile: LoadProfile
    fitness: game.FitnessConfig = field(default_factory=game.FitnessConfig)
    dynamics_kind: dynamics.DynamicsKind = field(
        default_factory=lambda: dynamics.DynamicsKind("smith")
    )
    limit_overrides: dict[tuple[str, str], float] = field(default_factory=dict)
    t_start: int = 0
    t_end: int | None = None
    warm_start: bool = True
    h: float = 0.01
    tol_kw: float = 0.01
    window: int = 20
    max_iter: int = 100_000
    init: str = "uniform"
    engine: str = "auto"

    def validate(self) -> None:
        grid.validate_radial(self.net)
        for g in self.fleet:
            if g.bus not in self.net.buses:
                raise grid.InvalidNetwork(f"fleet bus {g.bus} not in network")
        for b in self.profile.buses:
            if b not in self.net.buses:
                raise grid.InvalidNetwork(f"profile bus {b} not in network")
        self.fitness.validate_for(self.fleet)
        end = self.t_end if self.t_end is not None else len(self.profile) - 1
        if not (0 <= self.t_start <= end < len(self.profile)):
            raise ValueError(
                f"time range [{self.t_start}, {end}] outside profile of {len(self.profile)} steps"
            )
        if self.init not in ("uniform", "nearest"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.engine not in ("auto", "reference"):
            raise ValueError(f"unknown engine {self.engine!r}")

    @property
    def steps(self) -> range:
        end = self.t_end if self.t_end is not None else len(self.profile) - 1
        return range(self.t_start, end + 1)


@dataclass
class StepRecord:
    """Outcome of one time step."""

    t: int
    demand_kw: float
    setpoints_kw: np.ndarray
    flows_kw: np.ndarray
    iterations: int
    converged_at: int | None
    cost: float
    oracle_setpoints_kw: np.ndarray
    oracle_cost: float
    abs_error_kw: np.ndarray
    overflow_events: list[dynamics.OverflowEvent]
    # per-iteration detail, kept only on request (single-step runs)
    trajectory_kw: np.ndarray | None = None
    trajectory_flows: np.ndarray | None = None


@dataclass
class DispatchResult:
    """Per-step records plus the labels needed to interpret them."""

    steps: list[StepRecord]
    line_keys: list[tuple[str, str]]
    gen_buses: list[str]
    limits_kw: np.ndarray = field(default_factory=lambda: np.array([]))
    wall_s: float = 0.0

    @property
    def all_converged(self) -> bool:
        return all(s.converged_at is not None for s in self.steps)


class _Prepared:
    # Array views of the scenario, shared by both engines.

    def __init__(self, cfg: ScenarioConfig):
        cfg.validate()
        net = cfg.net.with_limits(cfg.limit_overrides) if cfg.limit_overrides else cfg.net
        self.net = net
        topo = net.topology()
        self.topo = topo
        self.line_keys = [ln.key for ln in topo.lines]
        self.limits = topo.limits
        self.gen_rows = np.array([topo.bus_index[g.bus] for g in cfg.fleet], dtype=np.int64)
        self.profile_cols = np.array([topo.bus_index[b] for b in cfg.profile.buses])
        kind = cfg.dynamics_kind
        n = len(cfg.fleet)
        if kind.graph is not None:
            self.adj = kind.graph.adjacency
        else:
            self.adj = np.ones((n, n)) - np.eye(n)
        self.kind_code = _kernel.KIND_CODES[kind.name]
        self.congestion_possible = bool(np.isfinite(self.limits).any())

    def loads_vector(self, cfg: ScenarioConfig, t: int) -> np.ndarray:
        loads = np.zeros(len(self.topo.order))
        loads[self.profile_cols] = cfg.profile.loads_kw[t]
        return loads


def initial_state(cfg: ScenarioConfig, t: int) -> game.PopulationState:
    demand = cfg.profile.total_at(t)
    if cfg.init == "nearest":
        return nearest_generator_init(cfg.net, cfg.fleet, cfg.profile.demand_at(t))
    return game.PopulationState.uniform(len(cfg.fleet), demand)


def nearest_generator_init(
    net: grid.RadialNetwork, fleet: game.Fleet, loads: Mapping[str, float]
) -> game.PopulationState:
    """Assign each bus load to its electrically nearest generator.

    Distance is the summed line resistance along the tree path; ties go to
    the earlier generator in fleet order. Generators that are nearest to no
    load start with zero share, which is what makes this initializer
    reproduce the extinction pathology under replicator dynamics.
    """
    topo = net.topology()
    # path resistance from every bus to the root, then tree distances
    r_up = {net.root: 0.0}
    for ln in topo.lines:
        r_up[ln.to_bus] = r_up[ln.from_bus] + ln.resistance_ohm

    def dist(a: str, b: str) -> float:
        # climb to the common ancestor
        ra, rb = a, b
        seen = set()
        while ra is not None:
            seen.add(ra)
            ra = topo.parent[ra]
        anc = b
        while anc not in seen:
            anc = topo.parent[anc]
        return r_up[a] + r_up[b] - 2.0 * r_up[anc]

    shares = np.zeros(len(fleet))
    total = float(sum(loads.values()))
    if total <= 0:
        raise ValueError("total load must be positive")
    for bid, load in loads.items():
        if load <= 0:
            continue
        best, best_d = 0, float("inf")
        for i, g in enumerate(fleet):
            d = dist(bid, g.bus)
            if d < best_d - 1e-15:
                best, best_d = i, d
        shares[best] += load
    return game.PopulationState(shares / total, total)


def _substeps(cfg: ScenarioConfig, prep: _Prepared, demand: float) -> int:
    bound = game.fitness_slope_bound(cfg.fleet, cfg.fitness, demand, prep.congestion_possible)
    return dynamics.stable_substeps(cfg.h, bound)


def _record_from_arrays(
    cfg, prep, t, demand, states, fitness, flows, k_done, conv, keep_trajectory=False
) -> StepRecord:
    final_p = states[k_done] * demand
    events = []
    over = np.abs(flows[: k_done + 1]) - prep.limits[None, :]
    for l, key in enumerate(prep.line_keys):
        hits = np.nonzero(over[:, l] > 0)[0]
        if hits.size:
            k = int(hits[0])
            events.append(
                dynamics.OverflowEvent(
                    iteration=k,
                    line=key,
                    flow_kw=float(flows[k, l]),
                    overflow_kw=float(over[k, l]),
                )
            )
    sol = oracle.lambda_dispatch(cfg.fleet, demand)
    return StepRecord(
        t=t,
        demand_kw=demand,
        setpoints_kw=final_p,
        flows_kw=flows[k_done].copy(),
        iterations=k_done,
        converged_at=None if conv < 0 else int(conv),
        cost=game.total_cost(cfg.fleet, final_p),
        oracle_setpoints_kw=sol.setpoints_kw,
        oracle_cost=sol.total_cost,
        abs_error_kw=np.abs(final_p - sol.setpoints_kw),
        overflow_events=events,
        trajectory_kw=(states[: k_done + 1] * demand) if keep_trajectory else None,
        trajectory_flows=flows[: k_done + 1].copy() if keep_trajectory else None,
    )


def run_timestep(
    cfg: ScenarioConfig,
    t: int,
    x_init: game.PopulationState,
    prep: _Prepared | None = None,
    keep_trajectory: bool = False,
) -> tuple[StepRecord, game.PopulationState]:
    """One minute of the online loop; returns the record and the final state."""
    if prep is None:
        prep = _Prepared(cfg)
    demand = cfg.profile.total_at(t)
    if demand <= 0:
        raise ValueError(f"step {t}: total demand must be positive")
    loads = prep.loads_vector(cfg, t)
    nsub = _substeps(cfg, prep, demand)
    fleet = cfg.fleet

    if cfg.engine == "auto" and _kernel.HAVE_NUMBA:
        states, fitness, flows, k_done, conv = _kernel.simulate(
            x_init.x,
            demand,
            fleet.b,
            fleet.c,
            fleet.pmin_kw,
            fleet.pmax_kw,
            cfg.fitness.B,
            cfg.fitness.m,
            cfg.fitness.C,
            loads,
            prep.gen_rows,
            prep.topo.subtree,
            prep.limits,
            prep.adj,
            prep.kind_code,
            cfg.h,
            nsub,
            cfg.max_iter,
            cfg.tol_kw,
            cfg.window,
            0.1,
        )
        if conv == -2:
            raise dynamics.DegenerateState("all shares clamped to zero")
        rec = _record_from_arrays(
            cfg, prep, t, demand,
            states[: k_done + 1], fitness[: k_done + 1], flows[: k_done + 1],
            k_done, conv, keep_trajectory,
        )
        final = game.PopulationState(states[k_done].copy(), demand)
        return rec, final

    # reference path: generic integrator driven by the full fitness stack
    net_t = prep.net.with_loads(cfg.profile.demand_at(t))

    def fitness_fn(state):
        return game.fitness_vector(state, fleet, net_t, cfg.fitness)

    def flow_fn(state):
        inj = {bid: b.load_kw for bid, b in net_t.buses.items()}
        p = state.setpoints_kw
        for i, g in enumerate(fleet):
            inj[g.bus] -= p[i]
        fr = grid.compute_flows(net_t, inj)
        arr = np.array([fr.flow_kw[k] for k in prep.line_keys])
        return arr, grid.detect_overflows(net_t, fr)

    traj = dynamics.run_game(
        x_init,
        cfg.dynamics_kind,
        fitness_fn,
        h=cfg.h,
        max_iter=cfg.max_iter,
        tol=cfg.tol_kw,
        window=cfg.window,
        substeps=nsub,
        flow_fn=flow_fn,
    )
    k_done = len(traj.states) - 1
    conv = traj.converged_at if traj.converged_at is not None else -1
    states = np.stack([s.x for s in traj.states])
    rec = _record_from_arrays(
        cfg, prep, t, demand, states, traj.fitness, traj.flows, k_done, conv,
        keep_trajectory,
    )
    return rec, traj.final


def run_day(cfg: ScenarioConfig) -> DispatchResult:
    """Sweep the configured time range, warm starting when enabled."""
    t0 = time.perf_counter()
    prep = _Prepared(cfg)
    keep = len(cfg.steps) == 1
    records = []
    state = None
    for t in cfg.steps:
        if not cfg.warm_start or state is None:
            state = initial_state(cfg, t)
        else:
            # same shares, new demand
            state = game.PopulationState(state.x, cfg.profile.total_at(t))
        rec, state = run_timestep(cfg, t, state, prep, keep_trajectory=keep)
        records.append(rec)
    result = DispatchResult(
        steps=records,
        line_keys=list(prep.line_keys),
        gen_buses=list(cfg.fleet.buses),
        limits_kw=prep.limits.copy(),
        wall_s=time.perf_counter() - t0,
    )
    n_unconverged = sum(1 for r in records if r.converged_at is None)
    if n_unconverged:
        logger.info("%d of %d steps did not converge", n_unconverged, len(records))
    return result


def compare_to_oracle(result: DispatchResult) -> dict:
    """Error metrics against the per-step oracle dispatch."""
    if not result.steps:
        return {}
    errs = np.stack([r.abs_error_kw for r in result.steps])
    cost = sum(r.cost for r in result.steps)
    ocost = sum(r.oracle_cost for r in result.steps)
    residual = sum(
        int(np.any(np.abs(r.flows_kw) > result.limits_kw + 0.1)) for r in result.steps
    )
    return {
        "max_abs_error_kw": float(errs.max()),
        "mean_abs_error_kw": float(errs.mean()),
        "relative_cost_gap": (cost - ocost) / ocost if ocost else 0.0,
        "steps_with_residual_overflow": residual,
        "unconverged_steps": sum(1 for r in result.steps if r.converged_at is None),
        "total_steps": len(result.steps),
        "overflow_events": sum(len(r.overflow_events) for r in result.steps),
        "wall_s": result.wall_s,
    }
