"""Over-the-air federated learning under imperfect CSI.

Simulates gradient aggregation over a fading multiple-access channel with
truncated channel inversion, implements the matching closed-form statistics
(aggregation-coefficient moments, weight-divergence and convergence bounds,
convex truncation-threshold optimization), and verifies every closed form
against independent Monte-Carlo oracles at desk scale.
"""

from .specfun import Accuracy, erf, erfc, exp_integral_ei, heaviside
from .channel import ChannelDraw, EstimationModel, RngStream, draw_channel, is_active, pathloss_amplitude
from .aircomp import (
    AggregationOutcome,
    PowerConfig,
    aggregate,
    compensation_lambda,
    dbm_to_watts,
    effective_xi,
    preprocessing_beta,
    scaling_zeta,
)
from .analysis import (
    ClosedFormReport,
    LearningConstants,
    conditional_second_moment,
    convergence_bound,
    divergence_bound,
    divergence_exact,
    joint_cdf_xy,
    joint_pdf_xy,
    xi_mean_offset,
    xi_variance,
)
from .optimizer import (
    ObjectiveCoefficients,
    ThresholdSolution,
    coefficients_from_system,
    derivative_h,
    objective_h,
    optimal_threshold,
    second_derivative_h,
)
from .config import SystemConfig, TrainConfig, load_config, resolve
from .fltrain import TrainingTrace, evaluate, train
from .harness import SweepResult, mc_joint_distribution_check, mc_weight_divergence, mc_xi_moments, sweep_threshold

__version__ = "0.1.0"

__all__ = [
    "Accuracy",
    "AggregationOutcome",
    "ChannelDraw",
    "ClosedFormReport",
    "EstimationModel",
    "LearningConstants",
    "ObjectiveCoefficients",
    "PowerConfig",
    "RngStream",
    "SweepResult",
    "SystemConfig",
    "ThresholdSolution",
    "TrainConfig",
    "TrainingTrace",
    "aggregate",
    "coefficients_from_system",
    "compensation_lambda",
    "conditional_second_moment",
    "convergence_bound",
    "dbm_to_watts",
    "derivative_h",
    "divergence_bound",
    "divergence_exact",
    "draw_channel",
    "effective_xi",
    "erf",
    "erfc",
    "evaluate",
    "exp_integral_ei",
    "heaviside",
    "is_active",
    "joint_cdf_xy",
    "joint_pdf_xy",
    "load_config",
    "mc_joint_distribution_check",
    "mc_weight_divergence",
    "mc_xi_moments",
    "objective_h",
    "optimal_threshold",
    "pathloss_amplitude",
    "preprocessing_beta",
    "resolve",
    "scaling_zeta",
    "second_derivative_h",
    "sweep_threshold",
    "train",
    "xi_mean_offset",
    "xi_variance",
]
