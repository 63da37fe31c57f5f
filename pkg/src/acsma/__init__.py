"""Rate control over adaptive-CSMA wireless networks.

Exact CSMA product-form schedules on conflict graphs, fluid models of TCP
over adaptive CSMA, entropy-regularised utility maximisation, and
discrete-event MAC simulation.
"""

from .csma import (
    LCSMA_RHO,
    ScheduleDistribution,
    entropy,
    lcsma_throughput,
    link_service_rates,
    log_partition,
    log_partition_gradient,
    log_partition_hessian,
    service_rates,
    stationary_distribution,
)
from .dynamics import (
    IntegrationDiverged,
    SystemState,
    Trajectory,
    acsma_derivative,
    connection_count,
    connection_count_general,
    droptail_price,
    end_to_end_price,
    equivalent_utility,
    integrate_system,
    multiconn_derivative,
    projection_plus,
    reno_derivative,
    wired_price,
)
from .graph import ConflictGraph, GraphTooLarge, IndependentSetFamily, enumerate_independent_sets
from .mac_sim import AqmTrace, CsmaSimResult, MacEvent, simulate_acsma_aqm, simulate_csma
from .optimizer import (
    CapacityVerdict,
    NumSolution,
    UtilityFunction,
    alpha2,
    alpha_fair,
    capacity_membership,
    custom_utility,
    dual_objective,
    solve_ep,
    solve_mp,
    utility_gap,
    wired_penalty,
)
from .scenario import (
    BUILTIN_NAMES,
    Flow,
    Parameters,
    Scenario,
    ScenarioError,
    builtin_topology,
    format_scenario,
    load_scenario,
    make_scenario,
    parse_scenario,
    save_scenario,
)

__version__ = "0.1.0"
