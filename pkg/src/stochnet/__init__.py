"""Monte-Carlo optimisation of two-stage resource allocation on unreliable networks."""

from .bounds import BoundQuery, theorem1_bound, theorem2_bound, theorem3_bound
from .lp import LinearProgram, LPBuilder, SolveReport, check_solution, solve_lp
from .network import (
    EdgeSpec,
    FailureScenario,
    GeneratorParams,
    NetworkSpec,
    NodeSpec,
    ScenarioSet,
    compress_sample,
    enumerate_scenarios,
    generate_random_network,
    load_network,
    sample_scenario,
    save_network,
    validate_network,
)
from .saa import (
    deterministic_baseline,
    mean_baseline,
    saa_optimize,
    subselect_optimize,
)
from .twostage import (
    Allocation,
    EvaluationResult,
    build_deterministic_equivalent,
    build_recourse_lp,
    exact_evaluate,
    exact_optimize,
    first_stage_value,
    mc_evaluate,
    recourse_value,
)

__version__ = "0.1.0"
