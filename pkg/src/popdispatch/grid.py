"""Radial feeder model.

Validation, key-node reduction, lossless tree DC flow, overflow detection,
and the congestion penalty/incentive signals broadcast to each side of a
congested line.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)


class InvalidNetwork(ValueError):
    """The network violates the radial model."""


class CycleDetected(InvalidNetwork):
    pass


class Disconnected(InvalidNetwork):
    pass


class DuplicateLine(InvalidNetwork):
    pass


@dataclass(frozen=True)
class Bus:
    """A feeder bus.

    Parameters
    ----------
    id : str
        Opaque identifier, unique within a network.
    load_kw : float
        Non-negative demand at this bus.
    generator : str, optional
        Identifier of the generator connected here, if any. At most one
        generator per bus.
    """

    id: str
    load_kw: float = 0.0
    generator: str | None = None

    def __post_init__(self):
        if self.load_kw < 0:
            raise InvalidNetwork(f"bus {self.id}: load_kw must be >= 0, got {self.load_kw}")


@dataclass(frozen=True)
class Line:
    """A feeder line between two buses.

    limit_kw may be math.inf for an unbounded line. Impedances are stored
    and merged during reduction but do not enter the lossless flow model.
    """

    from_bus: str
    to_bus: str
    resistance_ohm: float = 0.0
    reactance_ohm: float = 0.0
    limit_kw: float = math.inf

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise CycleDetected(f"line {self.from_bus}-{self.to_bus} is a self-loop")
        if not self.limit_kw > 0:
            raise InvalidNetwork(f"line {self.from_bus}-{self.to_bus}: limit_kw must be > 0")
        if self.resistance_ohm < 0 or self.reactance_ohm < 0:
            raise InvalidNetwork(f"line {self.from_bus}-{self.to_bus}: negative impedance")

    @property
    def key(self) -> tuple[str, str]:
        return (self.from_bus, self.to_bus)


@dataclass(frozen=True)
class Congestion:
    """One overloaded line: overflow_kw = |flow| - limit > 0."""

    line: Line
    overflow_kw: float
    direction: str  # "parent->child" or "child->parent"


@dataclass(frozen=True)
class FlowResult:
    """Signed line flows in kW, keyed by (parent, child) bus ids.

    Positive flow runs parent to child in the tree rooted at the network
    root.
    """

    flow_kw: dict[tuple[str, str], float]


class _Topology:
    # Rooted orientation of a validated tree plus the subtree membership
    # matrix used by the flow computation. Built once per network.

    def __init__(self, net: RadialNetwork):
        adj: dict[str, list[tuple[str, Line]]] = {b: [] for b in net.buses}
        seen_pairs = set()
        for ln in net.lines:
            if ln.from_bus not in net.buses or ln.to_bus not in net.buses:
                raise InvalidNetwork(
                    f"line {ln.from_bus}-{ln.to_bus} references an unknown bus"
                )
            pair = frozenset(ln.key)
            if pair in seen_pairs:
                raise DuplicateLine(f"line {ln.from_bus}-{ln.to_bus} appears more than once")
            seen_pairs.add(pair)
            adj[ln.from_bus].append((ln.to_bus, ln))
            adj[ln.to_bus].append((ln.from_bus, ln))
        if net.root not in net.buses:
            raise InvalidNetwork(f"root bus {net.root} not present")

        self.parent: dict[str, str | None] = {net.root: None}
        self.children: dict[str, list[str]] = {b: [] for b in net.buses}
        self.order: list[str] = [net.root]
        line_of: dict[str, Line] = {}
        queue = [net.root]
        while queue:
            u = queue.pop(0)
            for v, ln in adj[u]:
                if v == self.parent[u]:
                    continue
                if v in self.parent:
                    raise CycleDetected(
                        f"cycle through line {ln.from_bus}-{ln.to_bus}"
                    )
                self.parent[v] = u
                self.children[u].append(v)
                line_of[v] = ln
                self.order.append(v)
                queue.append(v)
        if len(self.order) < len(net.buses):
            missing = sorted(set(net.buses) - set(self.order))
            raise Disconnected(f"bus {missing[0]} unreachable from root {net.root}")
        # len(order) == |buses| and no back edge implies |lines| == |buses|-1

        self.bus_index = {b: i for i, b in enumerate(self.order)}
        self.degree = {b: len(adj[b]) for b in net.buses}
        # lines reoriented parent->child, in BFS discovery order
        self.lines: list[Line] = []
        for v in self.order[1:]:
            ln = line_of[v]
            if ln.from_bus != self.parent[v]:
                ln = replace(ln, from_bus=self.parent[v], to_bus=v)
            self.lines.append(ln)

        nb, nl = len(self.order), len(self.lines)
        self.subtree = np.zeros((nl, nb))
        for li, ln in enumerate(self.lines):
            stack = [ln.to_bus]
            while stack:
                u = stack.pop()
                self.subtree[li, self.bus_index[u]] = 1.0
                stack.extend(self.children[u])
        self.limits = np.array([ln.limit_kw for ln in self.lines])


@dataclass
class RadialNetwork:
    """A rooted radial distribution network."""

    buses: dict[str, Bus]
    lines: tuple[Line, ...]
    root: str
    _topo: _Topology | None = field(default=None, init=False, repr=False, compare=False)

    @classmethod
    def build(cls, buses: Iterable[Bus], lines: Iterable[Line], root: str) -> RadialNetwork:
        bus_map = {}
        for b in buses:
            if b.id in bus_map:
                raise InvalidNetwork(f"duplicate bus id {b.id}")
            bus_map[b.id] = b
        return cls(buses=bus_map, lines=tuple(lines), root=root)

    def topology(self) -> _Topology:
        if self._topo is None:
            self._topo = _Topology(self)
        return self._topo

    def with_loads(self, loads: Mapping[str, float]) -> RadialNetwork:
        """Copy of the network with bus loads replaced (missing buses keep 0)."""
        for bid in loads:
            if bid not in self.buses:
                raise InvalidNetwork(f"load refers to unknown bus {bid}")
        buses = {
            bid: replace(b, load_kw=float(loads.get(bid, 0.0)))
            for bid, b in self.buses.items()
        }
        net = RadialNetwork(buses=buses, lines=self.lines, root=self.root)
        net._topo = self._topo  # ids and lines unchanged
        return net

    def with_limits(self, overrides: Mapping[tuple[str, str], float]) -> RadialNetwork:
        """Copy with line limits overridden; keys match either orientation."""
        norm = {frozenset(k): float(v) for k, v in overrides.items()}
        known = {frozenset(ln.key) for ln in self.lines}
        for k in norm:
            if k not in known:
                a, b = sorted(k)
                raise InvalidNetwork(f"limit override refers to unknown line {a}-{b}")
        lines = tuple(
            replace(ln, limit_kw=norm.get(frozenset(ln.key), ln.limit_kw))
            for ln in self.lines
        )
        return RadialNetwork(buses=dict(self.buses), lines=lines, root=self.root)

    def with_generators(self, marks: Mapping[str, str]) -> RadialNetwork:
        """Copy with generator markers attached to the given buses."""
        for bid in marks:
            if bid not in self.buses:
                raise InvalidNetwork(f"generator placed on unknown bus {bid}")
        buses = {
            bid: (replace(b, generator=marks[bid]) if bid in marks else b)
            for bid, b in self.buses.items()
        }
        net = RadialNetwork(buses=buses, lines=self.lines, root=self.root)
        net._topo = self._topo
        return net


def validate_radial(net: RadialNetwork) -> None:
    """Check that the network is a connected tree rooted at net.root.

    Raises CycleDetected, Disconnected, or DuplicateLine with a diagnostic
    naming the offending element. Returns None when valid.
    """
    net.topology()


def reduce_to_key_nodes(net: RadialNetwork) -> RadialNetwork:
    """Collapse series chains between key nodes.

    Key nodes are the root, generator buses, buses with nonzero load, and
    buses of degree >= 3. Each maximal chain of degree-2 non-key buses
    becomes a single line whose resistance and reactance are the sums over
    the chain and whose limit is the minimum over the chain.
    """
    topo = net.topology()
    key = {net.root}
    for b in net.buses.values():
        if b.generator is not None or b.load_kw > 0:
            key.add(b.id)
    for bid, deg in topo.degree.items():
        if deg >= 3:
            key.add(bid)

    line_into = {ln.to_bus: ln for ln in topo.lines}
    new_lines: list[Line] = []
    kept: set[str] = {net.root}
    # walk down from each key node, accumulating chain segments
    stack: list[tuple[str, str, float, float, float]] = [
        (net.root, c, 0.0, 0.0, math.inf) for c in topo.children[net.root]
    ]
    while stack:
        anchor, bus, r, x, lim = stack.pop()
        ln = line_into[bus]
        r += ln.resistance_ohm
        x += ln.reactance_ohm
        lim = min(lim, ln.limit_kw)
        if bus in key or not topo.children[bus]:
            kept.add(bus)
            new_lines.append(
                Line(anchor, bus, resistance_ohm=r, reactance_ohm=x, limit_kw=lim)
            )
            for c in topo.children[bus]:
                stack.append((bus, c, 0.0, 0.0, math.inf))
        else:
            # degree-2 interior bus, chain continues
            stack.append((anchor, topo.children[bus][0], r, x, lim))

    buses = {bid: net.buses[bid] for bid in kept}
    reduced = RadialNetwork(buses=buses, lines=tuple(new_lines), root=net.root)
    validate_radial(reduced)
    return reduced


def compute_flows(net: RadialNetwork, injections: Mapping[str, float]) -> FlowResult:
    """Lossless DC flow on the tree.

    injections maps bus id to signed kW (load minus generation). The flow on
    line (parent, child) is the sum of injections over the subtree under
    child; any nonzero residual is carried by the root (slack).
    """
    topo = net.topology()
    inj = np.zeros(len(topo.order))
    for bid, val in injections.items():
        if bid not in topo.bus_index:
            raise InvalidNetwork(f"injection refers to unknown bus {bid}")
        inj[topo.bus_index[bid]] = val
    residual = abs(inj.sum())
    scale = np.abs(inj).sum()
    if scale > 0 and residual > 1e-6 * scale:
        logger.warning("injections sum to %.6g kW; residual assigned to root", inj.sum())
    flows = topo.subtree @ inj
    return FlowResult(flow_kw={ln.key: flows[i] for i, ln in enumerate(topo.lines)})


def detect_overflows(net: RadialNetwork, flows: FlowResult) -> list[Congestion]:
    """Lines where |flow| strictly exceeds the limit. Boundary is feasible."""
    topo = net.topology()
    out = []
    for ln in topo.lines:
        f = flows.flow_kw[ln.key]
        over = abs(f) - ln.limit_kw
        if over > 0:
            direction = "parent->child" if f > 0 else "child->parent"
            out.append(Congestion(line=ln, overflow_kw=over, direction=direction))
    return out


def congestion_signals(
    net: RadialNetwork,
    flows: FlowResult,
    congestions: list[Congestion],
    C: float,
) -> dict[str, float]:
    """Per-bus penalty/incentive accumulated over all congested lines.

    Removing a congested line splits the tree in two. Every bus on the side
    the overflow leaves (the sending side) gets -overflow_kw * C; every bus
    on the receiving side gets +overflow_kw * C. Contributions from multiple
    congested lines add up.
    """
    if C <= 0:
        raise ValueError("C must be > 0")
    topo = net.topology()
    index_of = {ln.key: i for i, ln in enumerate(topo.lines)}
    delta = {bid: 0.0 for bid in net.buses}
    for cg in congestions:
        li = index_of[cg.line.key]
        f = flows.flow_kw[cg.line.key]
        inside = topo.subtree[li]  # child-side membership
        # positive flow enters the child subtree, so that side receives
        recv_inside = f > 0
        for bid in net.buses:
            member = inside[topo.bus_index[bid]] == 1.0
            receiving = member == recv_inside
            delta[bid] += (cg.overflow_kw * C) if receiving else -(cg.overflow_kw * C)
    return delta
