"""Over-the-air gradient aggregation with truncated channel inversion.

Active devices pre-scale their gradient by

    beta_k = zeta * lambda * d_k^(alpha/2) * conj(h_hat_k) / (K * |h_hat_k|^2)

so that the superposed receive signal, after taking the real part and
dividing by the scaling factor zeta, becomes

    g_hat = (1/K) * sum_k xi_k * g_k + z_bar,

where xi_k = lambda * Re{conj(h_k) h_hat_k} / |h_hat_k|^2 for active devices
and 0 for truncated ones, and z_bar has per-entry variance sigma2/(2 zeta^2).
The compensation constant lambda = exp(gamma_th)/rho makes E[xi] = 1, so the
aggregate is an unbiased estimate of the ideal gradient average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelDraw, RngStream, is_active

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class PowerConfig:
    """Transmit/receive power budget resolved to watts."""

    p_max: float        # per-device instantaneous power budget, W
    sigma2: float       # receiver noise power, W
    g_bound: float      # gradient-norm bound G used by power control
    d_max_alpha: float  # max_k d_k^alpha over the device fleet

    def __post_init__(self) -> None:
        if not (self.p_max > 0.0 and math.isfinite(self.p_max)):
            raise ValueError(f"p_max must be positive and finite, got {self.p_max}")
        if not (self.sigma2 >= 0.0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be nonnegative and finite, got {self.sigma2}")
        if not (self.g_bound > 0.0 and math.isfinite(self.g_bound)):
            raise ValueError(f"g_bound must be positive and finite, got {self.g_bound}")
        if not (self.d_max_alpha > 0.0 and math.isfinite(self.d_max_alpha)):
            raise ValueError(f"d_max_alpha must be positive and finite, got {self.d_max_alpha}")


@dataclass
class AggregationOutcome:
    """One over-the-air aggregation round, with enough state to replay it.

    Invariant (asserted in tests): g_hat equals
    (1/K) * sum_k xi[k] * gradients[k] + noise_realization to 1e-12.
    """

    g_hat: np.ndarray
    active_set: list[int]
    xi: np.ndarray
    noise_realization: np.ndarray
    zeta: float
    lam: float
    skipped: bool


def dbm_to_watts(dbm: float) -> float:
    """Power unit conversion, 10^((dBm - 30)/10)."""
    dbm = float(dbm)
    if not math.isfinite(dbm):
        raise ValueError(f"dbm must be finite, got {dbm}")
    return 10.0 ** ((dbm - 30.0) / 10.0)


def _check_gamma_rho(gamma_th: float, rho: float) -> None:
    if not (gamma_th > 0.0 and math.isfinite(gamma_th)):
        raise ValueError(f"gamma_th must be positive and finite, got {gamma_th}")
    if not (0.0 < rho <= 1.0):
        raise ValueError(f"rho must lie in (0, 1], got {rho}")


def compensation_lambda(gamma_th: float, rho: float) -> float:
    """Unbiasedness constant exp(gamma_th)/rho.

    Cancels both the truncation survival probability exp(-gamma_th) and the
    mean CSI misalignment rho, making the effective coefficient unit-mean.
    """
    _check_gamma_rho(gamma_th, rho)
    return math.exp(gamma_th) / rho


def scaling_zeta(k_devices: int, rho: float, cfg: PowerConfig, gamma_th: float) -> float:
    """Receive scaling factor making the worst-case device power-feasible.

        zeta = K * rho * sqrt(P_max * gamma_th) / (G * sqrt(d_max_alpha) * exp(gamma_th))

    With this choice an active device's instantaneous power never exceeds
    P_max whenever its gradient norm stays within G.
    """
    if k_devices < 1:
        raise ValueError(f"k_devices must be >= 1, got {k_devices}")
    _check_gamma_rho(gamma_th, rho)
    return (
        k_devices
        * rho
        * math.sqrt(cfg.p_max * gamma_th)
        / (cfg.g_bound * math.sqrt(cfg.d_max_alpha) * math.exp(gamma_th))
    )


def effective_xi(draw: ChannelDraw, gamma_th: float, lam: float) -> float:
    """Effective aggregation coefficient of one device.

    lambda * Re{conj(h) h_hat} / |h_hat|^2 when the estimate clears the
    truncation threshold, else 0.  Under perfect CSI (h = h_hat) the active
    value collapses to lambda itself.
    """
    if not (lam > 0.0 and math.isfinite(lam)):
        raise ValueError(f"lam must be positive and finite, got {lam}")
    if not is_active(draw.h_hat, gamma_th):
        return 0.0
    gain = draw.h_hat.real * draw.h_hat.real + draw.h_hat.imag * draw.h_hat.imag
    if gain == 0.0:
        raise RuntimeError("active device with zero channel estimate")
    aligned = draw.h.real * draw.h_hat.real + draw.h.imag * draw.h_hat.imag
    return lam * aligned / gain


def preprocessing_beta(draw: ChannelDraw, zeta: float, lam: float, k_devices: int) -> complex:
    """Transmit pre-scaling factor of an active device (truncated inversion).

    Inverts the estimated channel and the path loss:
    zeta * lambda * d^(alpha/2) * conj(h_hat) / (K * |h_hat|^2).
    """
    if k_devices < 1:
        raise ValueError(f"k_devices must be >= 1, got {k_devices}")
    if not (zeta > 0.0 and math.isfinite(zeta)):
        raise ValueError(f"zeta must be positive and finite, got {zeta}")
    if not (lam > 0.0 and math.isfinite(lam)):
        raise ValueError(f"lam must be positive and finite, got {lam}")
    gain = draw.h_hat.real * draw.h_hat.real + draw.h_hat.imag * draw.h_hat.imag
    if gain == 0.0:
        raise RuntimeError("pre-processing undefined for a zero channel estimate")
    return zeta * lam * draw.d ** (draw.alpha / 2.0) * draw.h_hat.conjugate() / (k_devices * gain)


def aggregate(
    gradients: list[np.ndarray],
    draws: list[ChannelDraw],
    gamma_th: float,
    rho: float,
    cfg: PowerConfig,
    rng: RngStream | np.random.Generator | None,
) -> AggregationOutcome:
    """One over-the-air aggregation of K device gradients.

    An empty active set (every estimate truncated) is flagged as skipped
    with a zero aggregate: with no transmitter there is nothing for the
    receive scaling to normalize, so the round produces no update.

    Parameters
    ----------
    gradients : length-K list of equal-length real vectors.
    draws : length-K channel draws, index-aligned with gradients.
    rng : source for the receiver noise; may be None when cfg.sigma2 == 0.
    """
    k_devices = len(gradients)
    if k_devices < 1:
        raise ValueError("need at least one device")
    if len(draws) != k_devices:
        raise ValueError(f"{k_devices} gradients but {len(draws)} channel draws")
    dim = gradients[0].shape
    if any(g.shape != dim for g in gradients):
        raise ValueError("gradient dimensions differ across devices")

    lam = compensation_lambda(gamma_th, rho)
    zeta = scaling_zeta(k_devices, rho, cfg, gamma_th)
    xi = np.array([effective_xi(dr, gamma_th, lam) for dr in draws])
    active_set = [k for k in range(k_devices) if is_active(draws[k].h_hat, gamma_th)]

    if not active_set:
        zeros = np.zeros(dim)
        return AggregationOutcome(
            g_hat=zeros,
            active_set=[],
            xi=xi,
            noise_realization=zeros.copy(),
            zeta=zeta,
            lam=lam,
            skipped=True,
        )

    g_sum = np.zeros(dim)
    for k in range(k_devices):
        g_sum += xi[k] * gradients[k]
    g_hat = g_sum / k_devices

    if cfg.sigma2 > 0.0:
        if rng is None:
            raise ValueError("rng required when sigma2 > 0")
        gen = rng.generator if isinstance(rng, RngStream) else rng
        noise = gen.standard_normal(dim) * (math.sqrt(cfg.sigma2) / (_SQRT2 * zeta))
        g_hat = g_hat + noise
    else:
        noise = np.zeros(dim)

    return AggregationOutcome(
        g_hat=g_hat,
        active_set=active_set,
        xi=xi,
        noise_realization=noise,
        zeta=zeta,
        lam=lam,
        skipped=False,
    )
