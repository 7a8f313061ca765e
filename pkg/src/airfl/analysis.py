"""Closed-form statistics of the effective aggregation coefficient and the
resulting weight-divergence and convergence bounds.

Conventions: gamma_th > 0 is the truncation threshold, rho in (0, 1] the
estimation correlation, Ei the exponential integral.  The auxiliary pair
behind the coefficient statistics is

    x = Re{conj(v) h_hat} / |h_hat|^2,   y = -|h_hat|^2,

whose joint law (CDF/PDF below) carries the conditional moments that
assemble into the coefficient variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .aircomp import PowerConfig, compensation_lambda, scaling_zeta
from .specfun import erf, erfc, exp_integral_ei


def _check_gamma(gamma_th: float) -> float:
    gamma_th = float(gamma_th)
    if not (gamma_th > 0.0 and math.isfinite(gamma_th)):
        raise ValueError(f"gamma_th must be positive and finite, got {gamma_th}")
    return gamma_th


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not (0.0 < rho <= 1.0):
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    return rho


@dataclass(frozen=True)
class LearningConstants:
    """Smoothness/step-size constants entering the convergence bound."""

    lipschitz_l: float   # gradient Lipschitz constant of the global loss
    eta: float           # learning rate, must satisfy eta < 2/L
    delta2: float        # local-gradient variance level (empirical estimate)
    g_bound2: float      # squared gradient-norm bound G^2
    rounds_m: int        # number of aggregation rounds M
    f0_minus_fstar: float  # initial optimality gap upper estimate

    def __post_init__(self) -> None:
        if not (self.lipschitz_l > 0.0 and math.isfinite(self.lipschitz_l)):
            raise ValueError(f"lipschitz_l must be positive, got {self.lipschitz_l}")
        if not (0.0 < self.eta < 2.0 / self.lipschitz_l):
            raise ValueError(
                f"eta must lie in (0, 2/L) = (0, {2.0 / self.lipschitz_l}), got {self.eta}"
            )
        if not (self.delta2 >= 0.0 and math.isfinite(self.delta2)):
            raise ValueError(f"delta2 must be nonnegative, got {self.delta2}")
        if not (self.g_bound2 > 0.0 and math.isfinite(self.g_bound2)):
            raise ValueError(f"g_bound2 must be positive, got {self.g_bound2}")
        if self.rounds_m < 1:
            raise ValueError(f"rounds_m must be >= 1, got {self.rounds_m}")
        if not (self.f0_minus_fstar >= 0.0 and math.isfinite(self.f0_minus_fstar)):
            raise ValueError(f"f0_minus_fstar must be nonnegative, got {self.f0_minus_fstar}")


@dataclass(frozen=True)
class ClosedFormReport:
    """Bundle of the closed-form values for one system configuration.

    exact_exceeds_bound flags configurations where the exact divergence is
    larger than the printed bound (the bound's variance term does not carry
    the 1/K averaging of the exact expression, so this can happen once the
    noise share is small).
    """

    lam: float
    xi_var: float
    divergence_bound: float
    divergence_exact: float
    divergence_exact_scalar_noise: float
    exact_exceeds_bound: bool
    convergence_bound: float | None = None


def xi_variance(gamma_th: float, rho: float) -> float:
    """Variance of the effective aggregation coefficient (unit mean),

        Var[xi] = e^g - (1 - rho^2)/(2 rho^2) * Ei(-g) * e^(2g) - 1,  g = gamma_th.

    Monotone increasing in gamma_th and decreasing in rho; vanishes in the
    joint limit gamma_th -> 0+, rho -> 1.  At rho = 1 the Ei coefficient is
    zero analytically and the value reduces to expm1(gamma_th).
    """
    gamma_th = _check_gamma(gamma_th)
    rho = _check_rho(rho)
    if rho == 1.0:
        return math.expm1(gamma_th)
    k1 = (1.0 - rho * rho) / (2.0 * rho * rho)
    return math.expm1(gamma_th) - k1 * exp_integral_ei(-gamma_th) * math.exp(2.0 * gamma_th)


def xi_mean_offset(gamma_th: float, rho: float) -> float:
    """Centering constant c = rho (1 - e^g) / (e^g sqrt(1 - rho^2)).

    Shifts the conditional second moment of x so that the variance assembly
    identity holds; undefined at rho = 1, where the machinery is bypassed.
    """
    gamma_th = _check_gamma(gamma_th)
    rho = _check_rho(rho)
    if rho == 1.0:
        raise ValueError("offset undefined at rho = 1 (no estimation-noise component)")
    eg = math.exp(gamma_th)
    return rho * (1.0 - eg) / (eg * math.sqrt(1.0 - rho * rho))


def conditional_second_moment(gamma_th: float, c: float) -> float:
    """E[(x - c)^2 | y <= -gamma_th] = c^2 - Ei(-gamma_th) e^(gamma_th) / 2.

    x is symmetric about zero conditionally on the truncation event, so the
    offset contributes additively in c^2.
    """
    gamma_th = _check_gamma(gamma_th)
    c = float(c)
    if not math.isfinite(c):
        raise ValueError(f"c must be finite, got {c}")
    return c * c - 0.5 * exp_integral_ei(-gamma_th) * math.exp(gamma_th)


def joint_cdf_xy(t: float, gamma: float) -> float:
    """Joint CDF F(t, gamma) = Pr{x < t, y < gamma}.

    For gamma >= 0 the event on y is almost sure (y = -|h_hat|^2 < 0), so
    the value is the x marginal 1/2 + t / (2 sqrt(1 + t^2)); the one-sided
    closed form below is continuous at gamma -> 0-.
    """
    t = float(t)
    gamma = float(gamma)
    if not (math.isfinite(t) and math.isfinite(gamma)):
        raise ValueError("t and gamma must be finite")
    base = t / (2.0 * math.sqrt(1.0 + t * t))
    if gamma >= 0.0:
        return 0.5 + base
    s = math.sqrt(-gamma)
    return base * (1.0 - erf(s * math.sqrt(1.0 + t * t))) + 0.5 * math.exp(gamma) * erfc(-s * t)


def joint_pdf_xy(t: float, gamma: float) -> float:
    """Joint density f(t, gamma) = sqrt(-gamma/pi) exp(gamma (1 + t^2)) for
    gamma < 0 and zero elsewhere (y has no mass on [0, inf))."""
    t = float(t)
    gamma = float(gamma)
    if not (math.isfinite(t) and math.isfinite(gamma)):
        raise ValueError("t and gamma must be finite")
    if gamma >= 0.0:
        return 0.0
    return math.sqrt(-gamma / math.pi) * math.exp(gamma * (1.0 + t * t))


def divergence_bound(k_devices: int, gamma_th: float, rho: float, cfg: PowerConfig) -> float:
    """Upper bound on the per-round weight divergence,

        (G^2/K^2) * (Var[xi] + sigma2 * d_max_alpha * e^(2g) / (2 P_max rho^2 g)).

    Scales exactly as 1/K^2 for fixed physical parameters and decreases
    monotonically in P_max toward the CSI-error floor (G^2/K^2) Var[xi].
    """
    if k_devices < 1:
        raise ValueError(f"k_devices must be >= 1, got {k_devices}")
    gamma_th = _check_gamma(gamma_th)
    rho = _check_rho(rho)
    noise_term = (
        cfg.sigma2
        * cfg.d_max_alpha
        * math.exp(2.0 * gamma_th)
        / (2.0 * cfg.p_max * rho * rho * gamma_th)
    )
    return (cfg.g_bound**2 / k_devices**2) * (xi_variance(gamma_th, rho) + noise_term)


def divergence_exact(
    per_device_grad_sq: list[float],
    k_devices: int,
    gamma_th: float,
    rho: float,
    cfg: PowerConfig,
    d_model: int,
) -> float:
    """Exact expected squared aggregation error for given gradient energies,

        (1/K^2) * Var[xi] * sum_k E||g_k||^2 + d_model * sigma2 / (2 zeta^2).

    The noise term is dimension-aware: the receiver adds an independent
    N(0, sigma2/(2 zeta^2)) entry per model coordinate.
    """
    if k_devices < 1:
        raise ValueError(f"k_devices must be >= 1, got {k_devices}")
    if len(per_device_grad_sq) != k_devices:
        raise ValueError(
            f"expected {k_devices} gradient energies, got {len(per_device_grad_sq)}"
        )
    if any(not (g >= 0.0 and math.isfinite(g)) for g in per_device_grad_sq):
        raise ValueError("gradient energies must be nonnegative and finite")
    if d_model < 1:
        raise ValueError(f"d_model must be >= 1, got {d_model}")
    var = xi_variance(gamma_th, rho)
    zeta = scaling_zeta(k_devices, rho, cfg, gamma_th)
    return var * math.fsum(per_device_grad_sq) / k_devices**2 + d_model * cfg.sigma2 / (
        2.0 * zeta * zeta
    )


def convergence_bound(lc: LearningConstants, delta2_total: float) -> float:
    """Mean squared-gradient-norm bound after M rounds of distorted updates,

        (1/M) * (f0 - f*) / (eta - L eta^2 / 2) + L eta (delta2_total) / (2 - L eta),

    where delta2_total aggregates the per-round distortion (weight
    divergence plus local-gradient variance).
    """
    if not (delta2_total >= 0.0 and math.isfinite(delta2_total)):
        raise ValueError(f"delta2_total must be nonnegative, got {delta2_total}")
    l, eta = lc.lipschitz_l, lc.eta
    denom = eta - 0.5 * l * eta * eta
    return lc.f0_minus_fstar / (lc.rounds_m * denom) + l * eta * delta2_total / (2.0 - l * eta)


def closed_form_report(
    k_devices: int,
    gamma_th: float,
    rho: float,
    cfg: PowerConfig,
    d_model: int,
    per_device_grad_sq: list[float] | None = None,
    lc: LearningConstants | None = None,
) -> ClosedFormReport:
    """Evaluate every closed form at one configuration.

    When per-device gradient energies are not supplied, each is taken at the
    bound level G^2.  The scalar-noise variant counts the receiver noise once
    instead of per coordinate, matching the bound's normalization.
    """
    if per_device_grad_sq is None:
        per_device_grad_sq = [cfg.g_bound**2] * k_devices
    lam = compensation_lambda(gamma_th, rho)
    var = xi_variance(gamma_th, rho)
    bound = divergence_bound(k_devices, gamma_th, rho, cfg)
    exact = divergence_exact(per_device_grad_sq, k_devices, gamma_th, rho, cfg, d_model)
    exact_scalar = divergence_exact(per_device_grad_sq, k_devices, gamma_th, rho, cfg, 1)
    conv = None
    if lc is not None:
        conv = convergence_bound(lc, exact + lc.delta2)
    return ClosedFormReport(
        lam=lam,
        xi_var=var,
        divergence_bound=bound,
        divergence_exact=exact,
        divergence_exact_scalar_noise=exact_scalar,
        exact_exceeds_bound=exact > bound,
        convergence_bound=conv,
    )
