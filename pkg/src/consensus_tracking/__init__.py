"""Kalman-filter-based feedforward-feedback optimal consensus tracking.

Synthesis (Riccati and Sylvester solves), steady-state estimation over the
plant and exosystem states, and stochastic closed-loop simulation against an
unfiltered baseline.
"""

from .errors import *  # noqa: F401,F403
from .gain_synthesis import (
    GainSet,
    compute_gains,
    solve_care,
    solve_disturbance_equation,
    solve_reference_equation,
    sylvester_kron_oracle,
)
from .scenario import Scenario, builtin_scenario, load_scenario
from .simulation import SimConfig, Trace, costate_residual, monte_carlo, simulate
from .state_estimation import build_augmented, filter_step, solve_filter_gain
from .system_model import (
    AgentDynamics,
    ConsensusGraph,
    CostSpec,
    ExosystemModel,
    PlantModel,
    assemble_plant,
    check_observability,
    check_solvability,
    consensus_to_agents,
)

__version__ = "0.1.0"
