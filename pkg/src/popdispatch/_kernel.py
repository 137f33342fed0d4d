"""Compiled inner loop for the standard dispatch game.

Mirrors dynamics.run_game coupled to game.fitness_vector for the stock
fitness (bias, quadratic cost, hinge barrier, congestion signals) so day
runs stay fast. The pure-Python path in dynamics/game is the reference;
tests pin the two against each other.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


REPLICATOR, LOCAL_REPLICATOR, SMITH, DISTRIBUTED_SMITH = 0, 1, 2, 3

KIND_CODES = {
    "replicator": REPLICATOR,
    "local-replicator": LOCAL_REPLICATOR,
    "smith": SMITH,
    "distributed-smith": DISTRIBUTED_SMITH,
}


@njit(cache=True)
def _eval_game(x, demand, b, c, pmin, pmax, B, m, C, loads, gen_bus, subtree, limits, f, fl):
    # fitness vector and line flows for the current shares, written into f, fl
    n = x.shape[0]
    nl = subtree.shape[0]
    nb = subtree.shape[1]
    for l in range(nl):
        s = 0.0
        for bu in range(nb):
            s += subtree[l, bu] * loads[bu]
        fl[l] = s
    for i in range(n):
        gi = x[i] * demand
        for l in range(nl):
            fl[l] -= subtree[l, gen_bus[i]] * gi
    for i in range(n):
        p = x[i] * demand
        base = B - (b[i] + 2.0 * c[i] * (p / 1000.0))
        barr = 0.0
        if p < pmin[i]:
            barr = m * (pmin[i] - p)
        elif p > pmax[i]:
            barr = -m * (p - pmax[i])
        f[i] = base + barr
    for l in range(nl):
        over = abs(fl[l]) - limits[l]
        if over > 0.0:
            recv_sign = 1.0 if fl[l] > 0.0 else -1.0
            for i in range(n):
                if subtree[l, gen_bus[i]] == 1.0:
                    f[i] += recv_sign * over * C
                else:
                    f[i] -= recv_sign * over * C


@njit(cache=True)
def _rhs(kind, x, f, adj, rate):
    n = x.shape[0]
    if kind == REPLICATOR:
        fbar = 0.0
        for i in range(n):
            fbar += x[i] * f[i]
        for i in range(n):
            rate[i] = x[i] * (f[i] - fbar)
    elif kind == LOCAL_REPLICATOR:
        for i in range(n):
            sx = 0.0
            sfx = 0.0
            for j in range(n):
                if adj[i, j] == 1.0:
                    sx += x[j]
                    sfx += f[j] * x[j]
            rate[i] = x[i] * (f[i] * sx - sfx)
    else:
        restricted = kind == DISTRIBUTED_SMITH
        for i in range(n):
            inflow = 0.0
            outflow = 0.0
            for j in range(n):
                if restricted and adj[i, j] != 1.0:
                    continue
                d = f[i] - f[j]
                if d > 0.0:
                    inflow += x[j] * d
                elif d < 0.0:
                    outflow += -d
            rate[i] = inflow - x[i] * outflow


@njit(cache=True)
def simulate(
    x0,
    demand,
    b,
    c,
    pmin,
    pmax,
    B,
    m,
    C,
    loads,
    gen_bus,
    subtree,
    limits,
    adj,
    kind,
    h,
    substeps,
    max_iter,
    tol,
    window,
    overflow_tol,
):
    """Run one game to convergence or max_iter on the reported h grid.

    Returns (states, fitness, flows, k_done, converged_at); arrays are
    allocated to max_iter+1 rows and the caller trims to k_done+1.
    converged_at is -1 when not converged, -2 on a degenerate step.
    """
    n = x0.shape[0]
    nl = subtree.shape[0]
    states = np.empty((max_iter + 1, n))
    fitness = np.empty((max_iter + 1, n))
    flows = np.empty((max_iter + 1, nl))
    f = np.empty(n)
    fl = np.empty(nl)
    rate = np.empty(n)
    x = x0.copy()
    states[0] = x
    _eval_game(x, demand, b, c, pmin, pmax, B, m, C, loads, gen_bus, subtree, limits, f, fl)
    fitness[0] = f
    flows[0] = fl
    hs = h / substeps
    converged_at = -1
    k_done = 0
    for k in range(1, max_iter + 1):
        for s in range(substeps):
            if s > 0:
                _eval_game(
                    x, demand, b, c, pmin, pmax, B, m, C, loads, gen_bus, subtree, limits, f, fl
                )
            _rhs(kind, x, f, adj, rate)
            total = 0.0
            for i in range(n):
                v = x[i] + hs * rate[i]
                if v < 0.0:
                    v = 0.0
                x[i] = v
                total += v
            if total <= 0.0:
                return states, fitness, flows, k_done, -2
            for i in range(n):
                x[i] /= total
        states[k] = x
        k_done = k
        _eval_game(x, demand, b, c, pmin, pmax, B, m, C, loads, gen_bus, subtree, limits, f, fl)
        fitness[k] = f
        flows[k] = fl
        if k + 1 >= window:
            ok = True
            for w in range(k - window + 2, k + 1):
                dmax = 0.0
                for i in range(n):
                    d = abs(states[w, i] - states[w - 1, i])
                    if d > dmax:
                        dmax = d
                if dmax * demand > tol:
                    ok = False
                    break
            if ok:
                worst = 0.0
                for l in range(nl):
                    over = abs(fl[l]) - limits[l]
                    if over > worst:
                        worst = over
                if worst <= overflow_tol:
                    converged_at = k
                    break
    return states, fitness, flows, k_done, converged_at
