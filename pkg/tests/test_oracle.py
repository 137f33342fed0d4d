import numpy as np
import pytest

from popdispatch import game, grid, oracle


def two_gen_fleet(b=(1.0, 2.0), c=(0.5, 0.5), pmax=(10000.0, 10000.0)):
    return game.Fleet(
        [
            game.GeneratorParams("a", 0.0, b[0], c[0], 0.0, pmax[0]),
            game.GeneratorParams("b", 0.0, b[1], c[1], 0.0, pmax[1]),
        ]
    )


class TestLambdaDispatch:
    def test_first_order_condition(self):
        # both interior: equal marginal cost forces p1 - p2 = (b2-b1)/(2c) MW
        fleet = two_gen_fleet()
        sol = oracle.lambda_dispatch(fleet, 4000.0)
        p_mw = sol.setpoints_kw / 1000.0
        assert p_mw[0] - p_mw[1] == pytest.approx(1.0, abs=1e-9)
        assert sol.setpoints_kw.sum() == pytest.approx(4000.0, abs=1e-6)
        assert sol.binding == ("interior", "interior")

    def test_reference_fleet_57kw(self, fleet6):
        sol = oracle.lambda_dispatch(fleet6, 57.0)
        assert sol.setpoints_kw == pytest.approx([2.0, 10.0, 5.0, 10.0, 20.0, 10.0], abs=1e-6)
        assert sol.feasible

    def test_all_at_pmax(self, fleet6):
        total = float(fleet6.pmax_kw.sum())
        sol = oracle.lambda_dispatch(fleet6, total)
        assert sol.setpoints_kw == pytest.approx(fleet6.pmax_kw)
        assert all(flag == "upper" for flag in sol.binding)

    def test_all_at_pmin(self):
        fleet = game.Fleet(
            [
                game.GeneratorParams("a", 0.0, 1.0, 0.1, 2.0, 10.0),
                game.GeneratorParams("b", 0.0, 2.0, 0.1, 3.0, 10.0),
            ]
        )
        sol = oracle.lambda_dispatch(fleet, 5.0)
        assert sol.setpoints_kw == pytest.approx([2.0, 3.0], abs=1e-6)

    def test_infeasible_raises(self, fleet6):
        with pytest.raises(oracle.Infeasible):
            oracle.lambda_dispatch(fleet6, 100.0)
        with pytest.raises(oracle.Infeasible):
            oracle.lambda_dispatch(fleet6, -1.0)

    def test_flat_cost_greedy_fill_in_order(self):
        # identical b, zero c: the tie resolves greedily in fleet order
        fleet = game.Fleet(
            [
                game.GeneratorParams("a", 0.0, 2.0, 0.0, 0.0, 10.0),
                game.GeneratorParams("b", 0.0, 2.0, 0.0, 0.0, 10.0),
            ]
        )
        sol = oracle.lambda_dispatch(fleet, 12.0)
        assert sol.setpoints_kw == pytest.approx([10.0, 2.0], abs=1e-9)

    def test_flat_cost_merit_order(self):
        fleet = two_gen_fleet(b=(3.0, 1.0), c=(0.0, 0.0), pmax=(10.0, 10.0))
        sol = oracle.lambda_dispatch(fleet, 14.0)
        # cheap one fills first
        assert sol.setpoints_kw == pytest.approx([4.0, 10.0], abs=1e-9)

    def test_kkt_certificate(self, fleet6):
        rng = np.random.default_rng(9)
        for _ in range(40):
            demand = float(rng.uniform(1.0, fleet6.pmax_kw.sum() - 0.5))
            sol = oracle.lambda_dispatch(fleet6, demand)
            assert abs(sol.setpoints_kw.sum() - demand) <= 1e-6
            lam = sol.marginal_price
            mc = fleet6.b + 2.0 * fleet6.c * sol.setpoints_kw / 1000.0
            for i, flag in enumerate(sol.binding):
                if flag == "interior":
                    assert mc[i] == pytest.approx(lam, abs=1e-6)
                elif flag == "upper":
                    assert mc[i] <= lam + 1e-6
                else:
                    assert mc[i] >= lam - 1e-6

    def test_balance_always_closes(self, fleet6):
        rng = np.random.default_rng(13)
        for _ in range(200):
            demand = float(rng.uniform(0.1, float(fleet6.pmax_kw.sum())))
            sol = oracle.lambda_dispatch(fleet6, demand)
            assert abs(sol.setpoints_kw.sum() - demand) <= 1e-6
            assert np.all(sol.setpoints_kw >= fleet6.pmin_kw - 1e-9)
            assert np.all(sol.setpoints_kw <= fleet6.pmax_kw + 1e-9)


def single_bus_net(extra_gbus=()):
    buses = [grid.Bus("r", 0.0)] + [grid.Bus(b, 0.0) for b in extra_gbus]
    lines = [grid.Line("r", b) for b in extra_gbus]
    return grid.RadialNetwork.build(buses, lines, root="r")


class TestBruteForce:
    def test_agrees_with_lambda_unbounded_lines(self):
        fleet = two_gen_fleet(b=(1.0, 2.0), c=(0.05, 0.04), pmax=(30.0, 30.0))
        net = single_bus_net(("a", "b"))
        lam = oracle.lambda_dispatch(fleet, 41.0)
        bf = oracle.brute_force_opf(net, fleet, {"r": 41.0}, step_kw=0.01)
        assert np.abs(bf.setpoints_kw - lam.setpoints_kw).max() <= 0.01 + 1e-9

    def test_line_limit_caps_remote_generator(self):
        # all load local, cheap generator remote behind a 28 kW line
        buses = [grid.Bus("1", 35.0), grid.Bus("2", 0.0)]
        net = grid.RadialNetwork.build(
            buses, [grid.Line("1", "2", limit_kw=28.0)], root="1"
        )
        fleet = game.Fleet(
            [
                game.GeneratorParams("1", 0.0, 5.0, 0.0, 0.0, 40.0),
                game.GeneratorParams("2", 0.0, 1.0, 0.0, 0.0, 40.0),
            ]
        )
        sol = oracle.brute_force_opf(net, fleet, {"1": 35.0}, step_kw=0.5)
        assert sol.feasible
        # remote export sits exactly at the limit, remainder served locally
        assert sol.setpoints_kw == pytest.approx([7.0, 28.0])
        fr = grid.compute_flows(net, {"1": 35.0 - 7.0, "2": -28.0})
        assert abs(fr.flow_kw[("1", "2")]) <= 28.0 + 1e-9

    def test_demand_above_capacity_infeasible(self):
        fleet = two_gen_fleet(pmax=(10.0, 10.0))
        net = single_bus_net(("a", "b"))
        sol = oracle.brute_force_opf(net, fleet, {"r": 50.0}, step_kw=1.0)
        assert not sol.feasible
        assert sol.total_cost == float("inf")

    def test_too_many_generators_guard(self, fleet6, feeder_net):
        with pytest.raises(oracle.TooManyGenerators):
            oracle.brute_force_opf(feeder_net, fleet6, {"1": 10.0}, step_kw=1.0)

    def test_solutions_respect_all_limits(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            n = int(rng.integers(2, 4))
            gbuses = [f"g{i}" for i in range(n)]
            buses = [grid.Bus("r", float(rng.uniform(0, 10)))] + [
                grid.Bus(b, 0.0) for b in gbuses
            ]
            lines = [
                grid.Line("r", b, limit_kw=float(rng.uniform(3, 12))) for b in gbuses
            ]
            net = grid.RadialNetwork.build(buses, lines, root="r")
            fleet = game.Fleet(
                [
                    game.GeneratorParams(
                        b, 0.0, float(rng.uniform(1, 5)), float(rng.uniform(0, 0.05)),
                        0.0, float(rng.uniform(5, 15))
                    )
                    for b in gbuses
                ]
            )
            demand = {"r": float(rng.uniform(1.0, 0.8 * fleet.pmax_kw.sum()))}
            sol = oracle.brute_force_opf(net, fleet, demand, step_kw=0.25)
            if not sol.feasible:
                continue
            assert np.all(sol.setpoints_kw >= fleet.pmin_kw - 1e-9)
            assert np.all(sol.setpoints_kw <= fleet.pmax_kw + 1e-9)
            inj = {"r": demand["r"]}
            for i, b in enumerate(gbuses):
                inj[b] = -float(sol.setpoints_kw[i])
            fr = grid.compute_flows(net, inj)
            topo = net.topology()
            for ln in topo.lines:
                assert abs(fr.flow_kw[ln.key]) <= ln.limit_kw + 1e-9

    def test_cross_oracle_agreement_random(self):
        # uncongested: brute force within one grid step of the exact dispatch
        rng = np.random.default_rng(17)
        trials = 0
        while trials < 200:
            n = int(rng.integers(2, 5))
            bs = np.sort(rng.uniform(1.0, 6.0, size=n))
            if np.any(np.diff(bs) < 0.3):
                continue  # keep merit order unambiguous at the grid step
            trials += 1
            gbuses = [f"g{i}" for i in range(n)]
            fleet = game.Fleet(
                [
                    game.GeneratorParams(
                        gbuses[i], 0.0, float(bs[i]),
                        float(rng.uniform(0.0, 0.03)), 0.0,
                        float(rng.uniform(4.0, 20.0)),
                    )
                    for i in range(n)
                ]
            )
            net = single_bus_net(tuple(gbuses))
            demand = float(rng.uniform(0.5, 0.95) * fleet.pmax_kw.sum())
            lam = oracle.lambda_dispatch(fleet, demand)
            bf = oracle.brute_force_opf(net, fleet, {"r": demand}, step_kw=0.5)
            assert bf.feasible
            assert np.abs(bf.setpoints_kw - lam.setpoints_kw).max() <= 0.5 + 1e-9

    def test_step_must_be_positive(self):
        fleet = two_gen_fleet()
        net = single_bus_net(("a", "b"))
        with pytest.raises(ValueError):
            oracle.brute_force_opf(net, fleet, {"r": 1.0}, step_kw=0.0)
