"""Distributionally robust differential dynamic programming.

Trajectory optimization against the worst-case reweighting of a finite
disturbance sample, with standard box-constrained DDP and minimax DDP
baselines, plus out-of-sample Monte Carlo evaluation.
"""

__version__ = "0.1.0"

from .backward import (
    BackwardPassError,
    BackwardPassResult,
    ImprovementModel,
    PolicyStep,
    QExpansion,
    Regularization,
    ValueExpansion,
    backward_pass,
    compute_gains,
    compute_gains_boxed,
    project_newton_qp,
    q_expand,
    terminal_expansion,
    value_update,
)
from .baselines import pick_minimax_gamma, solve_box_ddp, solve_minimax_ddp
from .benchmarks import (
    BENCHMARKS,
    BenchmarkInstance,
    car_reduced_params,
    make_benchmark,
    make_car,
    make_kuramoto,
)
from .disturbance import (
    DisturbanceDataset,
    TrueDistribution,
    draw_dataset,
    empirical_moments,
    gaussian,
    load_dataset,
    save_dataset,
    uniform_box,
    zero_dataset,
)
from .evaluation import (
    ControllerSummary,
    EvalReport,
    EvalRow,
    TimingRow,
    compare_controllers,
    estimate_worst_case,
    loglog_slope,
    out_of_sample,
    policy_rollout,
    solve_controller,
    timing_sweep,
    worst_case_rollout,
)
from .forward import (
    DIVERGENCE_GUARD,
    LineSearchConfig,
    LineSearchResult,
    NominalTrajectories,
    RolloutResult,
    line_search,
    rollout,
)
from .problem import (
    CostDerivs,
    DerivativeCheck,
    DerivativeError,
    Dims,
    DynamicsDerivs,
    OcpModel,
    check_derivatives,
    eval_cost_derivs,
    eval_dynamics_derivs,
    eval_terminal_derivs,
)
from .rng import substream
from .solver import (
    GameCurvatureError,
    IterationRecord,
    Solution,
    SolverConfig,
    SolverNumericalError,
    TuneResult,
    TuneRow,
    estimate_sup_penalized,
    initial_nominal,
    solve,
    tune_lambda,
)
from .transport import (
    AmbiguityParams,
    DiscreteDistribution,
    guaranteed_bound,
    uniform_atoms,
    w2_distance,
)

__all__ = [
    "AmbiguityParams",
    "BENCHMARKS",
    "BackwardPassError",
    "BackwardPassResult",
    "BenchmarkInstance",
    "ControllerSummary",
    "CostDerivs",
    "DIVERGENCE_GUARD",
    "DerivativeCheck",
    "DerivativeError",
    "Dims",
    "DiscreteDistribution",
    "DisturbanceDataset",
    "DynamicsDerivs",
    "EvalReport",
    "EvalRow",
    "GameCurvatureError",
    "ImprovementModel",
    "IterationRecord",
    "LineSearchConfig",
    "LineSearchResult",
    "NominalTrajectories",
    "OcpModel",
    "PolicyStep",
    "QExpansion",
    "Regularization",
    "RolloutResult",
    "Solution",
    "SolverConfig",
    "SolverNumericalError",
    "TimingRow",
    "TrueDistribution",
    "TuneResult",
    "TuneRow",
    "ValueExpansion",
    "backward_pass",
    "car_reduced_params",
    "check_derivatives",
    "compute_gains",
    "compute_gains_boxed",
    "draw_dataset",
    "empirical_moments",
    "estimate_sup_penalized",
    "compare_controllers",
    "estimate_worst_case",
    "eval_cost_derivs",
    "eval_dynamics_derivs",
    "eval_terminal_derivs",
    "gaussian",
    "guaranteed_bound",
    "initial_nominal",
    "line_search",
    "load_dataset",
    "loglog_slope",
    "make_benchmark",
    "make_car",
    "make_kuramoto",
    "out_of_sample",
    "pick_minimax_gamma",
    "policy_rollout",
    "solve_controller",
    "project_newton_qp",
    "q_expand",
    "rollout",
    "save_dataset",
    "solve",
    "solve_box_ddp",
    "solve_minimax_ddp",
    "substream",
    "terminal_expansion",
    "timing_sweep",
    "tune_lambda",
    "uniform_atoms",
    "uniform_box",
    "value_update",
    "w2_distance",
    "worst_case_rollout",
    "zero_dataset",
]
