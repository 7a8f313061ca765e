"""Correlated Rayleigh fading with distance path loss and threshold truncation.

The physical channel between a device at distance d and the server is
d^(-alpha/2) * h with h ~ CN(0, 1).  The server only sees an estimate
h_hat; estimation quality is a correlation rho in (0, 1]:

    h = rho * h_hat + sqrt(1 - rho^2) * v,   h_hat, v ~ CN(0, 1) independent.

A device takes part in a round iff |h_hat|^2 >= gamma_th (the boundary
counts as active); |h_hat|^2 is unit-mean exponential, so the activation
probability is exp(-gamma_th).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class EstimationModel:
    """Channel estimation quality and large-scale propagation."""

    rho: float    # correlation between true channel and estimate, (0, 1]
    alpha: float  # path-loss exponent

    def __post_init__(self) -> None:
        if not (0.0 < self.rho <= 1.0):
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")


@dataclass(frozen=True)
class ChannelDraw:
    """One joint draw of (true channel, estimate, estimation noise).

    Records the distance and path-loss exponent it was drawn under so the
    pre-processing factor can reconstruct d^(alpha/2) without carrying the
    model around.
    """

    h: complex
    h_hat: complex
    v: complex
    d: float
    alpha: float


@dataclass
class RngStream:
    """Deterministic random stream keyed by (seed, stream_id).

    Identical keys reproduce bit-identical draw sequences.  Backed by
    numpy's PCG64 through SeedSequence(seed, spawn_key=(stream_id,)); the
    normal generator (ziggurat standard_normal) is fixed by numpy's stream
    compatibility policy, so seeds reproduce across runs.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._gen = substream(self.seed, self.stream_id)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normals(self, n: int) -> np.ndarray:
        return self._gen.standard_normal(n)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Child generator for a layered purpose key, independent per key."""
    if not key:
        raise ValueError("substream requires at least one key component")
    words: list[int] = []
    for part in key:
        part = int(part) & _MASK64
        words.extend((part & 0xFFFFFFFF, part >> 32))
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(words))
    return np.random.default_rng(ss)


def pathloss_amplitude(d: float, alpha: float) -> float:
    """Amplitude attenuation d^(-alpha/2) at distance d meters."""
    d = float(d)
    if not (d > 0.0 and math.isfinite(d)):
        raise ValueError(f"distance must be positive and finite, got {d}")
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be positive and finite, got {alpha}")
    return d ** (-alpha / 2.0)


def draw_channel(
    model: EstimationModel, d: float, rng: RngStream | np.random.Generator
) -> ChannelDraw:
    """Draw (h, h_hat, v) jointly for one device at distance d.

    Consumes exactly four standard normals in the fixed order
    (Re h_hat, Im h_hat, Re v, Im v); each complex variate is CN(0, 1).
    At rho = 1 the reconstruction collapses to h = h_hat exactly.
    """
    if not (d > 0.0 and math.isfinite(d)):
        raise ValueError(f"distance must be positive and finite, got {d}")
    gen = rng.generator if isinstance(rng, RngStream) else rng
    z = gen.standard_normal(4) * _INV_SQRT2
    h_hat = complex(z[0], z[1])
    v = complex(z[2], z[3])
    h = model.rho * h_hat + math.sqrt(1.0 - model.rho * model.rho) * v
    return ChannelDraw(h=h, h_hat=h_hat, v=v, d=d, alpha=model.alpha)


def draw_channel_block(model: EstimationModel, n: int, gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized sibling of draw_channel for Monte-Carlo sweeps.

    Returns (h, h_hat, v) as complex arrays of shape (n,).  Uses the same
    CN(0, 1) construction as the scalar draw; distances play no role in the
    coefficient statistics, so none are attached.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    z = gen.standard_normal((4, n)) * _INV_SQRT2
    h_hat = z[0] + 1j * z[1]
    v = z[2] + 1j * z[3]
    h = model.rho * h_hat + math.sqrt(1.0 - model.rho * model.rho) * v
    return h, h_hat, v


def is_active(h_hat: complex, gamma_th: float) -> bool:
    """Truncation test |h_hat|^2 >= gamma_th; the boundary is active."""
    if not (gamma_th > 0.0 and math.isfinite(gamma_th)):
        raise ValueError(f"gamma_th must be positive and finite, got {gamma_th}")
    gain = h_hat.real * h_hat.real + h_hat.imag * h_hat.imag
    return gain >= gamma_th
