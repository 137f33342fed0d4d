"""Online economic dispatch of distributed generators via population games.

Generators on a radial feeder split the instantaneous demand according to
evolutionary dynamics (replicator, Smith, and their neighborhood-restricted
variants) driven by marginal-cost fitness, capacity barriers, and congestion
signals derived from the tree power flow.
"""

__version__ = "0.1.0"

from .dynamics import (
    CommGraph,
    DynamicsKind,
    Trajectory,
    convergence_check,
    run_game,
)
from .game import Fleet, FitnessConfig, GeneratorParams, PopulationState
from .grid import (
    Bus,
    Congestion,
    InvalidNetwork,
    Line,
    RadialNetwork,
    compute_flows,
    congestion_signals,
    detect_overflows,
    reduce_to_key_nodes,
    validate_radial,
)
from .oracle import DispatchSolution, brute_force_opf, lambda_dispatch
from .scenario import (
    DispatchResult,
    LoadProfile,
    ScenarioConfig,
    compare_to_oracle,
    run_day,
    run_timestep,
    synthetic_day_profile,
)

__all__ = [
    "__version__",
    "Bus",
    "CommGraph",
    "Congestion",
    "DispatchResult",
    "DispatchSolution",
    "DynamicsKind",
    "Fleet",
    "FitnessConfig",
    "GeneratorParams",
    "InvalidNetwork",
    "Line",
    "LoadProfile",
    "PopulationState",
    "RadialNetwork",
    "ScenarioConfig",
    "Trajectory",
    "brute_force_opf",
    "compare_to_oracle",
    "compute_flows",
    "congestion_signals",
    "convergence_check",
    "detect_overflows",
    "lambda_dispatch",
    "reduce_to_key_nodes",
    "run_day",
    "run_game",
    "run_timestep",
    "synthetic_day_profile",
    "validate_radial",
]
