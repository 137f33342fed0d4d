"""Generator cost and fitness evaluation.

Maps population shares to set points, prices them with the quadratic cost
model, and assembles the per-generator fitness: bias minus marginal cost,
plus the limit barrier, plus any broadcast congestion signal.

Unit convention: powers travel in kW throughout; the cost coefficients b and
c are per MW and per MW^2 and are applied to p in MW. The barrier acts on p
in kW, which keeps limit violations dominant over the b spread.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import grid


@dataclass(frozen=True)
class GeneratorParams:
    """Cost coefficients, limits, and placement of one generator.

    a is in currency, b in currency/MW, c in currency/MW^2. Limits are kW.
    """

    bus: str
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    pmin_kw: float = 0.0
    pmax_kw: float = 0.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"generator at bus {self.bus}: c must be >= 0")
        if not self.pmax_kw > self.pmin_kw >= 0:
            raise ValueError(
                f"generator at bus {self.bus}: need pmax > pmin >= 0, "
                f"got [{self.pmin_kw}, {self.pmax_kw}]"
            )


class Fleet:
    """Ordered collection of generators; the order fixes strategy indexing."""

    def __init__(self, generators: list[GeneratorParams] | tuple[GeneratorParams, ...]):
        gens = tuple(generators)
        if not gens:
            raise ValueError("fleet must not be empty")
        buses = [g.bus for g in gens]
        if len(set(buses)) != len(buses):
            raise ValueError("fleet buses must be distinct")
        self.generators = gens
        self.buses = buses
        self.b = np.array([g.b for g in gens])
        self.c = np.array([g.c for g in gens])
        self.a = np.array([g.a for g in gens])
        self.pmin_kw = np.array([g.pmin_kw for g in gens])
        self.pmax_kw = np.array([g.pmax_kw for g in gens])

    def __len__(self) -> int:
        return len(self.generators)

    def __iter__(self) -> Iterator[GeneratorParams]:
        return iter(self.generators)

    def __getitem__(self, i: int) -> GeneratorParams:
        return self.generators[i]


@dataclass(frozen=True)
class FitnessConfig:
    """Fitness constants: bias B, barrier slope m, congestion constant C."""

    B: float = 1000.0
    m: float = 400.0
    C: float = 1000.0

    def __post_init__(self):
        if self.B <= 0 or self.m <= 0 or self.C <= 0:
            raise ValueError("B, m, C must all be > 0")

    def validate_for(self, fleet: Fleet) -> None:
        # B must exceed every marginal cost over the feasible boxes so the
        # in-range fitness stays positive
        worst = float(np.max(fleet.b + 2.0 * fleet.c * fleet.pmax_kw / 1000.0))
        if self.B <= worst:
            raise ValueError(f"B={self.B} too small: max marginal cost is {worst}")


@dataclass(frozen=True, eq=False)
class PopulationState:
    """Shares over the fleet plus the demand they are dispatching."""

    x: np.ndarray
    total_demand_kw: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("x must be a non-empty vector")
        if abs(x.sum() - 1.0) > 1e-9:
            raise ValueError(f"shares must sum to 1, got {x.sum()!r}")
        if np.any(x < 0):
            raise ValueError("shares must be non-negative")
        if not self.total_demand_kw > 0:
            raise ValueError("total_demand_kw must be > 0")

    @classmethod
    def uniform(cls, n: int, total_demand_kw: float) -> PopulationState:
        return cls(np.full(n, 1.0 / n), total_demand_kw)

    @property
    def setpoints_kw(self) -> np.ndarray:
        return self.x * self.total_demand_kw


def cost(gen: GeneratorParams, p_kw: float) -> float:
    """Generation cost a + b p + c p^2 with p in MW."""
    p = p_kw / 1000.0
    return gen.a + gen.b * p + gen.c * p * p


def base_fitness(gen: GeneratorParams, p_kw: float, B: float) -> float:
    """Bias minus marginal cost: B - (b + 2 c p), p in MW."""
    return B - (gen.b + 2.0 * gen.c * (p_kw / 1000.0))


def barrier(gen: GeneratorParams, p_kw: float, m: float) -> float:
    """Limit barrier, continuous hinge form.

    m * max(0, pmin - p) below the lower limit, -m * max(0, p - pmax) above
    the upper one, zero inside; p in kW.
    """
    if m <= 0:
        raise ValueError("m must be > 0")
    return m * max(0.0, gen.pmin_kw - p_kw) - m * max(0.0, p_kw - gen.pmax_kw)


def fitness(gen: GeneratorParams, p_kw: float, cfg: FitnessConfig, delta: float = 0.0) -> float:
    """Full fitness: base + barrier + broadcast signal."""
    return base_fitness(gen, p_kw, cfg.B) + barrier(gen, p_kw, cfg.m) + delta


def fitness_vector(
    state: PopulationState,
    fleet: Fleet,
    net: grid.RadialNetwork,
    cfg: FitnessConfig,
) -> np.ndarray:
    """Fitness of every strategy under the current grid state.

    Set points follow from the shares, injections from the bus loads minus
    generation, and the congestion signals are recomputed from the resulting
    flows on every call (online coupling).
    """
    if len(state.x) != len(fleet):
        raise ValueError(f"state has {len(state.x)} shares for {len(fleet)} generators")
    p = state.setpoints_kw
    injections = {bid: b.load_kw for bid, b in net.buses.items()}
    for i, gen in enumerate(fleet):
        if gen.bus not in net.buses:
            raise grid.InvalidNetwork(f"generator bus {gen.bus} not in network")
        injections[gen.bus] -= p[i]
    flows = grid.compute_flows(net, injections)
    congestions = grid.detect_overflows(net, flows)
    if congestions:
        delta = grid.congestion_signals(net, flows, congestions, cfg.C)
    else:
        delta = {}
    return np.array(
        [
            fitness(gen, p[i], cfg, delta.get(gen.bus, 0.0))
            for i, gen in enumerate(fleet)
        ]
    )


def total_cost(fleet: Fleet, setpoints_kw: np.ndarray) -> float:
    """Aggregate generation cost of a dispatch, in currency."""
    p = np.asarray(setpoints_kw, dtype=float) / 1000.0
    return float(np.sum(fleet.a + fleet.b * p + fleet.c * p * p))


def fitness_slope_bound(
    fleet: Fleet, cfg: FitnessConfig, demand_kw: float, congestion_possible: bool
) -> float:
    """Upper bound on |d fitness_i / d x_j| for the dispatch game.

    A share step dx moves that generator's set point by demand * dx kW.
    Through the barrier that changes fitness at up to m per kW, through a
    congested line at up to C per kW, and through the quadratic cost term
    at a negligible 2c/1e6 per kW.
    """
    slope = cfg.m + (cfg.C if congestion_possible else 0.0)
    slope += 2.0 * float(np.max(fleet.c)) * demand_kw / 1e6
    return slope * demand_kw
