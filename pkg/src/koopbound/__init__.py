"""Koopman-operator generalization bounds for multi-task feedforward networks."""

__version__ = "0.1.0"

from .bounds import (
    BoundReport,
    LayerFactor,
    baseline_bounds,
    combined_minimum,
    corollary_bound,
    hashimoto_alt_bound,
    ratio_sup,
    ratio_sup_restricted,
    remark_brownian_bound,
    theorem_inj_bound,
    theorem_inv_bound,
)
from .exceptions import (
    ClassViolationError,
    ConvergenceError,
    DimensionError,
    InfeasibleClassError,
    KoopboundError,
    RankDeficientWarning,
    UnboundedRatioError,
)
from .kernels import (
    FinalMapSpec,
    FinalMapTerm,
    MultiTaskKernelConfig,
    ScalarKernelSpec,
    g_norm,
    gram_matrix,
    kappa_bound,
    kernel_eval,
    mvk_gram_trace,
    sobolev_norm_gaussian_bump,
    u0,
)
from .matana import (
    WeightClassSpec,
    class_membership,
    condition_number,
    conv_filter_to_matrix,
    det_abs,
    gram_det_quarter,
    operator_norm,
    project_to_class,
    svd,
)
from .network import (
    ActivationSpec,
    LayerSpec,
    NetworkSpec,
    activation_derivative_bounds,
    default_kernel_config,
    final_map_eval,
    forward,
    generate_network,
    koopman_activation_norm_bound,
)
from .rademacher import (
    EstimatorConfig,
    OracleResult,
    RademacherEstimate,
    brute_force_oracle,
    estimate_sup,
    fixed_function_rademacher,
    gradient_of_objective,
)
from .svgplot import emit_plot
