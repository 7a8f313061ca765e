"""Convex optimization of the truncation threshold.

Dropping the constant terms, the threshold-dependent part of the divergence
bound is

    h(x) = e^x - k1 Ei(-x) e^(2x) + k2 e^(2x) / x,    x > 0,

with k1 = (1 - rho^2)/(2 rho^2) (CSI-error weight) and
k2 = sigma2 * d_max_alpha / (2 P_max rho^2) (noise weight).  h is strictly
convex on x > 0 and diverges at both ends, so the minimizer is the unique
root of h', found by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .aircomp import PowerConfig
from .specfun import exp_integral_ei

_BRACKET_LO = 1e-8
_WIDTH_TOL = 1e-12
_MODES = ("joint", "communication_oriented", "computation_oriented", "fixed")


@dataclass(frozen=True)
class ObjectiveCoefficients:
    """Weights of the threshold objective; k1 = 0 iff CSI is perfect."""

    k1: float
    k2: float

    def __post_init__(self) -> None:
        if not (self.k1 >= 0.0 and math.isfinite(self.k1)):
            raise ValueError(f"k1 must be nonnegative and finite, got {self.k1}")
        if not (self.k2 >= 0.0 and math.isfinite(self.k2)):
            raise ValueError(f"k2 must be nonnegative and finite, got {self.k2}")
        if self.k1 == 0.0 and self.k2 == 0.0:
            raise ValueError(
                "degenerate objective: k1 = k2 = 0 leaves only e^x, which has no interior minimum"
            )


@dataclass(frozen=True)
class ThresholdSolution:
    gamma_star: float
    h_value: float
    derivative_residual: float
    iterations: int
    mode: str


def coefficients_from_system(rho: float, cfg: PowerConfig) -> ObjectiveCoefficients:
    """Objective weights for a physical configuration."""
    if not (0.0 < rho <= 1.0):
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if cfg.sigma2 == 0.0:
        raise ValueError("degenerate config: sigma2 = 0 removes the noise term entirely")
    k1 = (1.0 - rho * rho) / (2.0 * rho * rho)
    k2 = cfg.sigma2 * cfg.d_max_alpha / (2.0 * cfg.p_max * rho * rho)
    return ObjectiveCoefficients(k1=k1, k2=k2)


def _check_x(x: float) -> float:
    x = float(x)
    if not (x > 0.0 and math.isfinite(x)):
        raise ValueError(f"threshold argument must be positive and finite, got {x}")
    return x


def objective_h(x: float, coef: ObjectiveCoefficients) -> float:
    """h(x) = e^x - k1 Ei(-x) e^(2x) + k2 e^(2x)/x."""
    x = _check_x(x)
    ex = math.exp(x)
    e2x = ex * ex
    ei_term = -coef.k1 * exp_integral_ei(-x) * e2x if coef.k1 != 0.0 else 0.0
    return ex + ei_term + coef.k2 * e2x / x


def derivative_h(x: float, coef: ObjectiveCoefficients) -> float:
    """h'(x) = e^x - k1 e^x/x - 2 k1 Ei(-x) e^(2x) + k2 e^(2x)(2x - 1)/x^2."""
    x = _check_x(x)
    ex = math.exp(x)
    e2x = ex * ex
    ei_part = 0.0
    if coef.k1 != 0.0:
        ei_part = -coef.k1 * ex / x - 2.0 * coef.k1 * exp_integral_ei(-x) * e2x
    return ex + ei_part + coef.k2 * e2x * (2.0 * x - 1.0) / (x * x)


def second_derivative_h(x: float, coef: ObjectiveCoefficients) -> float:
    """h''(x) = e^x + (k1 e^x/x^2)(-4 x^2 e^x Ei(-x) - 3x + 1)
              + 2 k2 e^(2x)(2x^2 - 2x + 1)/x^3.

    Strictly positive on x > 0: the k1 bracket exceeds (x - 1)^2/(x + 1) by
    the lower estimate -Ei(-x) > e^(-x)/(x + 1), and 2x^2 - 2x + 1 > 0.
    """
    x = _check_x(x)
    ex = math.exp(x)
    e2x = ex * ex
    k1_part = 0.0
    if coef.k1 != 0.0:
        bracket = -4.0 * x * x * ex * exp_integral_ei(-x) - 3.0 * x + 1.0
        k1_part = coef.k1 * ex / (x * x) * bracket
    return ex + k1_part + 2.0 * coef.k2 * e2x * (2.0 * x * x - 2.0 * x + 1.0) / (x * x * x)


def _bisect_root(
    fprime, tol: float, width_tol: float = _WIDTH_TOL
) -> tuple[float, float, int]:
    """Bisection root of an increasing-through-zero derivative.

    Brackets from [1e-8, hi], doubling hi from 1 until the derivative is
    positive; terminates on |f'| <= tol or interval width <= width_tol.
    """
    lo = _BRACKET_LO
    f_lo = fprime(lo)
    if f_lo >= 0.0:
        raise RuntimeError(f"derivative not negative at bracket start: f({lo}) = {f_lo}")
    hi = 1.0
    while fprime(hi) <= 0.0:
        hi *= 2.0
        if hi > 2.0**40:
            raise RuntimeError("failed to bracket the derivative sign change")
    iterations = 0
    mid, f_mid = 0.5 * (lo + hi), math.inf
    while True:
        mid = 0.5 * (lo + hi)
        f_mid = fprime(mid)
        iterations += 1
        if abs(f_mid) <= tol or (hi - lo) <= width_tol:
            return mid, f_mid, iterations
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid


def optimal_threshold(
    coef: ObjectiveCoefficients,
    tol: float = 1e-10,
    mode: str = "joint",
    fixed_value: float | None = None,
) -> ThresholdSolution:
    """Truncation threshold minimizing the selected objective term(s).

    Modes:

    * ``joint``: minimize the full h (bisection on h').
    * ``communication_oriented``: minimize the noise term k2 e^(2x)/x alone;
      its minimizer is x = 1/2 analytically, independent of the weights.
    * ``computation_oriented``: minimize the CSI term
      e^x - k1 Ei(-x) e^(2x) - 1; requires k1 > 0, otherwise the term is
      monotone with no interior minimum.
    * ``fixed``: echo fixed_value, reporting h and h' there.
    """
    if mode not in _MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {_MODES}")
    if not (tol > 0.0 and math.isfinite(tol)):
        raise ValueError(f"tol must be positive and finite, got {tol}")

    if mode == "fixed":
        if fixed_value is None:
            raise ValueError("fixed mode requires fixed_value")
        x = _check_x(fixed_value)
        return ThresholdSolution(
            gamma_star=x,
            h_value=objective_h(x, coef),
            derivative_residual=derivative_h(x, coef),
            iterations=0,
            mode=mode,
        )

    if mode == "communication_oriented":
        # d/dx [k2 e^(2x)/x] = k2 e^(2x)(2x - 1)/x^2 vanishes exactly at 1/2.
        return ThresholdSolution(
            gamma_star=0.5,
            h_value=objective_h(0.5, coef),
            derivative_residual=0.0,
            iterations=0,
            mode=mode,
        )

    if mode == "computation_oriented":
        if coef.k1 == 0.0:
            raise ValueError(
                "degenerate config: with perfect CSI the computation term is monotone"
            )
        csi_only = ObjectiveCoefficients(k1=coef.k1, k2=0.0)
        fprime = lambda x: derivative_h(x, csi_only)
    else:
        fprime = lambda x: derivative_h(x, coef)

    gamma_star, residual, iterations = _bisect_root(fprime, tol)
    return ThresholdSolution(
        gamma_star=gamma_star,
        h_value=objective_h(gamma_star, coef),
        derivative_residual=residual,
        iterations=iterations,
        mode=mode,
    )
