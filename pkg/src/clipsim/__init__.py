"""clipsim: deterministic multi-worker simulation of clipped distributed
optimization with error feedback, double momentum, and local differential
privacy."""

from .algorithms import (
    ALGORITHMS,
    HyperParams,
    OptimizerState,
    RunResult,
    clip21_ideal_step,
    clip21_sgd2m_step,
    clip21_sgd_step,
    clip_sgd_step,
    init_state,
    run,
    run_ideal_quadratic_replicas,
    sgdm_step,
)
from .calibration import (
    CalibrationResult,
    PrivacySpend,
    TheoryConstants,
    account,
    advanced_composition,
    deterministic_params,
    dp_sigma,
    gradient_scale_bound,
    initial_potential,
    per_step_privacy,
    stochastic_params,
    theory_constants,
)
from .core import (
    RngStream,
    StreamFamily,
    TAU_UNBOUNDED,
    clip,
    clip_residual_norm,
    clip_rows,
    gaussian_vector,
    l2,
)
from .diagnostics import (
    RunRecord,
    central_difference_gradient,
    final_metric,
    final_metric_sq,
    lyapunov,
    nonconvergence_floor,
    smoothness_gradient_bound_check,
)
from .errors import (
    ClipSimError,
    ConfigurationError,
    DatasetParseError,
    DiagnosticUnavailableError,
    DivergenceError,
    InvalidParameterError,
    StateError,
    UnsupportedDatasetError,
)
from .harness import RunConfig, SweepSpec, emit_csv, load_config, run_config, sweep
from .oracles import (
    GradientOracle,
    clipped_three_point_mc_mean,
    three_point_atoms,
    three_point_clipped_mean,
)
from .problems import (
    Problem,
    SparseDataset,
    chen_example,
    load_libsvm,
    nonconvex_logreg,
    normalize_rows,
    partition,
    scaled_quadratic,
)

__version__ = "0.1.0"
