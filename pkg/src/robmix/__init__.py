"""Robust mixture-of-regressions fitting.

Classification EM over finite Gaussian regression mixtures, with a robust
variant that performs least-trimmed-squares estimation inside every
component, flagging outliers and estimating parameters at the same time.
Includes synthetic-data generators and a Monte Carlo benchmark harness.
"""

from .core import (
    Component,
    Dataset,
    MixtureModel,
    Partition,
    PosteriorMatrix,
    complete_log_likelihood,
    component_log_densities,
    default_trim_count,
    gaussian_log_density,
    observed_log_likelihood,
    sigma_floor,
    trimmed_complete_log_likelihood,
)
from .linreg import (
    DegenerateDesignError,
    RegressionFit,
    flag_outliers,
    lts_consistency_factor,
    lts_fit,
    ols_fit,
    reweighted_fit,
)
from .mixture import (
    ComponentSizeError,
    FitConfig,
    FitFailureError,
    FitResult,
    Solver,
    c_step,
    derive_seed,
    e_step,
    fit,
    m_step_lts,
    m_step_ols,
)
from .simulate import (
    BALANCED_PRIORS,
    MODEL_BETAS,
    UNBALANCED_PRIORS,
    ScenarioSpec,
    SimulatedData,
    generate,
    sample_student_t,
    scenario_true_model,
)
from .evaluate import (
    BenchmarkFailureError,
    BenchmarkReport,
    align_labels,
    bias_mse,
    parameter_names,
    parameter_vector,
    run_benchmark,
)

__version__ = "0.1.0"
