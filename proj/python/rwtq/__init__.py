from ._core import (
    BenchRow,
    CellResult,
    ConfigError,
    DataError,
    ExperimentResult,
    ThetaCoefficients,
    TwoStageParams,
    analytic_q,
    cumulative_regret,
    density_bench,
    evaluate_saved,
    expit,
    optimal_mean_value,
    run_experiment,
    stage2_max_q,
)

__all__ = [
    "BenchRow",
    "CellResult",
    "ConfigError",
    "DataError",
    "ExperimentResult",
    "ThetaCoefficients",
    "TwoStageParams",
    "analytic_q",
    "cumulative_regret",
    "density_bench",
    "evaluate_saved",
    "expit",
    "optimal_mean_value",
    "run_experiment",
    "stage2_max_q",
]

__version__ = "0.1.0"
