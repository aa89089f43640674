"""B-spline Kolmogorov-Arnold network regression trained by backfitting,
with tools for measuring convergence rates on Sobolev-smooth targets."""

from .backfit import FitTrace, TrainConfig, TrainingError, fit, inner_update, partial_residual, training_mse
from .experiment import (
    ConvergenceReport,
    ExperimentConfig,
    estimate_test_mse,
    fit_loglog_slope,
    load_config,
    run_cell,
    run_experiment,
    write_report,
)
from .model import (
    AggregationKind,
    KanModel,
    KanNode,
    Normalizer,
    deserialize_model,
    init_model,
    model_forward,
    node_forward,
    node_transform,
    serialize_model,
)
from .splines import (
    DesignMatrix,
    KnotVector,
    SplineFunction,
    build_clamped_knots,
    design_matrix,
    eval_basis,
    eval_spline,
    eval_spline_derivative,
    fit_spline_ls,
    knot_count_rule,
)
from .targets import (
    Dataset,
    GenConfig,
    TargetKind,
    TargetSpec,
    eval_psi_piecewise,
    eval_target_fourier,
    eval_target_poly,
    fourier_coefficient,
    generate,
    read_dataset,
    write_dataset,
)

__version__ = "0.1.0"
