import numpy as np
import pytest

from popdispatch import formats, game, grid, scenario

# pass/fail lines registered by test_acceptance.py, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fleet6() -> game.Fleet:
    """The six-generator reference fleet used across the suite."""
    return game.Fleet(
        [
            game.GeneratorParams("1", 0.0, 5.0, 0.020, 0.0, 10.0),
            game.GeneratorParams("114", 0.0, 1.0, 0.010, 0.0, 10.0),
            game.GeneratorParams("578", 0.0, 3.0, 0.025, 0.0, 5.0),
            game.GeneratorParams("739", 0.0, 4.0, 0.010, 0.0, 10.0),
            game.GeneratorParams("817", 0.0, 2.5, 0.015, 0.0, 20.0),
            game.GeneratorParams("835", 0.0, 2.0, 0.020, 0.0, 10.0),
        ]
    )


@pytest.fixture(scope="session")
def fitness_cfg() -> game.FitnessConfig:
    return game.FitnessConfig(B=1000.0, m=400.0, C=1000.0)


@pytest.fixture(scope="session")
def data_dir():
    from importlib import resources

    return resources.files("popdispatch") / "data"


@pytest.fixture(scope="session")
def feeder_net(data_dir) -> grid.RadialNetwork:
    lines = formats.load_feeder_csv(data_dir / "feeder.csv")
    buses = formats.load_bus_csv(data_dir / "buses.csv")
    return grid.RadialNetwork.build(buses, lines, root="1")


@pytest.fixture(scope="session")
def day_profile(data_dir) -> scenario.LoadProfile:
    return formats.load_profile_csv(data_dir / "profile.csv")


def fleet_fitness_fn(fleet: game.Fleet, cfg: game.FitnessConfig):
    """Fitness of the bare dispatch game, no network coupling (delta = 0)."""

    def fn(state: game.PopulationState) -> np.ndarray:
        p = state.setpoints_kw
        base = cfg.B - (fleet.b + 2.0 * fleet.c * p / 1000.0)
        hinge = cfg.m * np.maximum(0.0, fleet.pmin_kw - p) - cfg.m * np.maximum(
            0.0, p - fleet.pmax_kw
        )
        return base + hinge

    return fn
