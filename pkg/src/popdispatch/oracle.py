"""Reference dispatch solvers.

lambda_dispatch solves the uncongested economic dispatch by equalizing
marginal cost subject to box limits; brute_force_opf exhaustively searches a
set-point grid with line limits enforced through the tree flow model. Both
exist to verify population-dynamics equilibria, not to be fast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import game, grid


class Infeasible(ValueError):
    pass


class TooManyGenerators(ValueError):
    pass


@dataclass(frozen=True)
class DispatchSolution:
    setpoints_kw: np.ndarray
    total_cost: float
    binding: tuple[str, ...]  # per generator: "lower" | "upper" | "interior"
    feasible: bool
    marginal_price: float | None = None


def _binding_flags(p, pmin, pmax, eps=1e-9):
    flags = []
    for pi, lo, hi in zip(p, pmin, pmax):
        if pi <= lo + eps:
            flags.append("lower")
        elif pi >= hi - eps:
            flags.append("upper")
        else:
            flags.append("interior")
    return tuple(flags)


def lambda_dispatch(fleet: game.Fleet, demand_kw: float) -> DispatchSolution:
    """Equal-marginal-cost dispatch with box limits.

    Bisects the shared marginal price; p_i(lambda) = clip(1000 (lambda -
    b_i) / (2 c_i), pmin, pmax) for c_i > 0. Generators with c = 0 have a
    flat marginal cost b_i and fill greedily in fleet order once lambda
    reaches b_i. After the bisection the price is polished exactly on the
    identified active set, so the balance closes well inside 1e-6 kW.
    """
    pmin, pmax = fleet.pmin_kw, fleet.pmax_kw
    b, c = fleet.b, fleet.c
    n = len(fleet)
    if not (pmin.sum() - 1e-9 <= demand_kw <= pmax.sum() + 1e-9):
        raise Infeasible(
            f"demand {demand_kw} kW outside [{pmin.sum()}, {pmax.sum()}] kW"
        )

    quad = c > 0
    kwscale = 1000.0  # b, c are per MW; set points are kW

    def supply(lam: float) -> np.ndarray:
        p = np.where(quad, 0.0, np.where(lam >= b, pmax, pmin))
        with np.errstate(divide="ignore", invalid="ignore"):
            pq = kwscale * (lam - b) / (2.0 * c)
        p = np.where(quad, np.clip(pq, pmin, pmax), p)
        return p

    mc_lo = np.where(quad, b + 2.0 * c * pmin / kwscale, b)
    mc_hi = np.where(quad, b + 2.0 * c * pmax / kwscale, b)
    lo, hi = float(mc_lo.min()) - 1.0, float(mc_hi.max()) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if supply(mid).sum() >= demand_kw:
            hi = mid
        else:
            lo = mid
    lam = hi
    p = supply(lam)

    # flat-cost generators sitting at their jump split the residual greedily
    marginal0 = (~quad) & (np.abs(b - lam) <= 1e-7 * max(1.0, abs(lam)))
    if marginal0.any():
        lam = float(b[np.nonzero(marginal0)[0][0]])
        p = supply(lam)
        p[marginal0] = pmin[marginal0]
        residual = demand_kw - p.sum()
        for i in np.nonzero(marginal0)[0]:
            take = min(max(residual, 0.0), pmax[i] - pmin[i])
            p[i] = pmin[i] + take
            residual -= take
    else:
        # exact price on the interior set closes the balance
        interior = quad & (p > pmin + 1e-9) & (p < pmax - 1e-9)
        if interior.any():
            w = kwscale / (2.0 * c[interior])
            fixed = p[~interior].sum()
            lam = (demand_kw - fixed + (w * b[interior]).sum()) / w.sum()
            p = supply(lam)

    if abs(p.sum() - demand_kw) > 1e-6:
        raise RuntimeError(
            f"dispatch balance failed: supply {p.sum()} vs demand {demand_kw}"
        )
    return DispatchSolution(
        setpoints_kw=p,
        total_cost=game.total_cost(fleet, p),
        binding=_binding_flags(p, pmin, pmax),
        feasible=True,
        marginal_price=lam,
    )


def brute_force_opf(
    net: grid.RadialNetwork,
    fleet: game.Fleet,
    demand: Mapping[str, float],
    step_kw: float,
    max_generators: int = 4,
) -> DispatchSolution:
    """Exhaustive grid search over set points with line limits enforced.

    All generators but the last enumerate {pmin, pmin+step, ..., pmax}; the
    last balances total demand. Combinations violating a generator box or a
    line limit (checked through the tree flow) are discarded; the first
    minimum-cost survivor in grid order wins. Returns feasible=False when
    nothing survives. The search is exponential in fleet size, hence the
    max_generators guard (raise it explicitly for small grids on more
    generators).
    """
    if step_kw <= 0:
        raise ValueError("step_kw must be > 0")
    n = len(fleet)
    if n > max_generators:
        raise TooManyGenerators(f"{n} generators exceeds limit {max_generators}")
    topo = net.topology()
    total = float(sum(demand.values()))
    loads = np.zeros(len(topo.order))
    for bid, val in demand.items():
        if bid not in topo.bus_index:
            raise grid.InvalidNetwork(f"demand refers to unknown bus {bid}")
        loads[topo.bus_index[bid]] = val
    gen_rows = np.array([topo.bus_index[g.bus] for g in fleet])

    pmin, pmax = fleet.pmin_kw, fleet.pmax_kw

    def axis(i: int) -> np.ndarray:
        g = np.arange(pmin[i], pmax[i] + step_kw / 2.0, step_kw)
        g = g[g <= pmax[i] + 1e-9]
        # keep the cap itself reachable when the box width is not step-aligned
        if g.size == 0 or abs(g[-1] - pmax[i]) > 1e-9:
            g = np.append(g, pmax[i])
        return g

    grids = [axis(i) for i in range(n - 1)]

    best_cost = math.inf
    best_p = None
    # chunk over the first axis to bound memory
    outer = grids[0] if n > 1 else np.array([0.0])
    inner = grids[1:]
    for p0 in outer:
        if inner:
            mesh = np.meshgrid(*inner, indexing="ij")
            block = np.stack([m.ravel() for m in mesh])
            block = np.vstack([np.full(block.shape[1], p0), block])
        elif n > 1:
            block = np.array([[p0]])
        else:
            block = np.zeros((0, 1))
        cols = block.shape[1]
        plast = total - (block.sum(axis=0) if n > 1 else np.zeros(cols))
        ok = (plast >= pmin[-1] - 1e-9) & (plast <= pmax[-1] + 1e-9)
        if not ok.any():
            continue
        P = np.vstack([block[:, ok], plast[ok]]) if n > 1 else plast[ok][None, :]
        inj = np.repeat(loads[:, None], P.shape[1], axis=1)
        np.subtract.at(inj, gen_rows, P)
        flows = topo.subtree @ inj
        feas = np.all(np.abs(flows) <= topo.limits[:, None] + 1e-9, axis=0)
        if not feas.any():
            continue
        Pf = P[:, feas]
        pm = Pf / 1000.0
        costs = (fleet.a[:, None] + fleet.b[:, None] * pm + fleet.c[:, None] * pm * pm).sum(axis=0)
        j = int(np.argmin(costs))
        if costs[j] < best_cost - 1e-15:
            best_cost = float(costs[j])
            best_p = Pf[:, j].copy()

    if best_p is None:
        return DispatchSolution(
            setpoints_kw=np.zeros(n),
            total_cost=math.inf,
            binding=tuple(["lower"] * n),
            feasible=False,
        )
    return DispatchSolution(
        setpoints_kw=best_p,
        total_cost=best_cost,
        binding=_binding_flags(best_p, pmin, pmax),
        feasible=True,
    )
