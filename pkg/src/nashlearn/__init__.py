"""Learning generalized Nash equilibria from pairwise preference queries.

The learner never sees objective values: each agent's unknown cost is
approximated by a quadratic surrogate fitted to "which of these two points
do you prefer?" answers, and the surrogate game's equilibrium is refined
over an active-learning loop with decaying exploration.
"""

from .exceptions import (
    ConfigError,
    DimensionMismatchError,
    EmptyDatasetError,
    EvaluationError,
    FeasibleSamplingError,
    InfeasibleProblemError,
    NashLearnError,
    RiccatiDivergenceError,
    SolverConvergenceError,
)
from .games import (
    AffineConstraints,
    AgentLayout,
    BoxSet,
    ConstrainedGame,
    PreferenceOracle,
    PreferenceSample,
    feasible,
    game_from_dict,
    game_from_json,
    game_to_dict,
    game_to_json,
    make_preference_oracle,
    sample_feasible,
)
from .solvers import (
    ADMMResult,
    GNESolution,
    QuadraticAgentObjective,
    admm_qp,
    best_response,
    game_operator,
    project,
    pseudo_gradient,
    solve_gne,
    solve_qp,
    spectral_norm,
)
from .preferences import (
    PreferenceModel,
    ThetaVector,
    TrainConfig,
    cross_entropy,
    dissimilarity,
    pinned_curvature_template,
    pref_probability,
    train,
    training_gradient,
    training_loss,
)
from .learner import (
    ALState,
    GNELearner,
    IterationRecord,
    ScheduleConfig,
    al_iteration,
    delta_schedule,
    initial_datasets,
    run,
    sigma_schedule,
)
from .lqr import (
    GainProfile,
    LQRCost,
    LinearSystem,
    ProfileEvaluation,
    benchmark_costs,
    best_response_gain,
    br_deviation,
    closed_loop,
    evaluate_profile,
    lqr_game,
    lqr_preference_oracle,
    nash_gains,
    random_system,
    simulate,
    spectral_radius,
)
from .bench import (
    ExperimentConfig,
    Problem,
    RunRecord,
    available_problems,
    build_problem,
    evaluate_run,
    export_csv,
    import_csv,
    load_config,
    parse_config,
    register_problem,
    run_experiment,
    run_repeats,
)

__version__ = "0.1.0"

__all__ = [
    "ADMMResult",
    "ALState",
    "AffineConstraints",
    "AgentLayout",
    "BoxSet",
    "ConfigError",
    "ConstrainedGame",
    "DimensionMismatchError",
    "EmptyDatasetError",
    "EvaluationError",
    "ExperimentConfig",
    "FeasibleSamplingError",
    "GNELearner",
    "GNESolution",
    "GainProfile",
    "InfeasibleProblemError",
    "IterationRecord",
    "LQRCost",
    "LinearSystem",
    "NashLearnError",
    "PreferenceModel",
    "PreferenceOracle",
    "PreferenceSample",
    "Problem",
    "ProfileEvaluation",
    "QuadraticAgentObjective",
    "RiccatiDivergenceError",
    "RunRecord",
    "ScheduleConfig",
    "SolverConvergenceError",
    "ThetaVector",
    "TrainConfig",
    "admm_qp",
    "al_iteration",
    "available_problems",
    "benchmark_costs",
    "best_response",
    "best_response_gain",
    "br_deviation",
    "build_problem",
    "closed_loop",
    "cross_entropy",
    "delta_schedule",
    "dissimilarity",
    "evaluate_profile",
    "evaluate_run",
    "export_csv",
    "feasible",
    "game_from_dict",
    "game_from_json",
    "game_operator",
    "game_to_dict",
    "game_to_json",
    "import_csv",
    "initial_datasets",
    "load_config",
    "lqr_game",
    "lqr_preference_oracle",
    "make_preference_oracle",
    "nash_gains",
    "parse_config",
    "pinned_curvature_template",
    "pref_probability",
    "project",
    "pseudo_gradient",
    "random_system",
    "register_problem",
    "run",
    "run_experiment",
    "run_repeats",
    "sample_feasible",
    "sigma_schedule",
    "simulate",
    "solve_gne",
    "solve_qp",
    "spectral_norm",
    "spectral_radius",
    "train",
    "training_gradient",
    "training_loss",
]
