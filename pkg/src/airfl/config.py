"""Experiment configuration: dataclasses, the key=value config file format,
and resolution of symbolic fields into concrete numbers.

Resolution happens exactly once per experiment: distances given as a range
expression are drawn from their own stream, the noise power is converted from dBm
to watts, and a symbolic truncation threshold ("optimize") is replaced by
the convex-objective minimizer.  A resolved experiment serializes back to
the same key=value format, which is what run manifests are made of; loading
a manifest therefore replays the run bit-identically.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .aircomp import PowerConfig, dbm_to_watts
from .channel import EstimationModel, substream

# Stream purposes.  Every random decision in an experiment hangs off
# (seed, purpose, ...indices) so that modes and replays stay aligned.
STREAM_DISTANCES = 1
STREAM_DATA = 2
STREAM_TEST = 3
STREAM_INIT = 4
STREAM_BATCH = 5
STREAM_CHANNEL = 6
STREAM_NOISE = 7
STREAM_MC_XI = 8
STREAM_MC_JOINT = 9
STREAM_MC_DIVERGENCE = 10

_TASKS = ("synthetic_logistic", "small_mlp")
_G_MODES = ("calibrated", "fixed", "genie")
_UNIFORM_RE = re.compile(r"^uniform\(\s*([0-9.eE+-]+)\s*,\s*([0-9.eE+-]+)\s*\]$")


@dataclass(frozen=True)
class TrainConfig:
    """Training-task knobs; eta and seed are synced from SystemConfig."""

    task: str = "synthetic_logistic"
    eta: float = 0.005        # learning rate
    batch_size: int = 32
    rounds_m: int = 200
    data_per_device: int = 200
    n_features: int = 10      # model dimension of the logistic task
    test_size: int = 1000
    blob_separation: float = 2.5   # class-mean distance of the synthetic task
    label_skew: float = 0.0        # 0 = IID shards, -> 1 = single-class devices
    hidden_units: int = 16         # small_mlp hidden width
    seed: int = 0

    def __post_init__(self) -> None:
        if self.task not in _TASKS:
            raise ValueError(f"task must be one of {_TASKS}, got {self.task!r}")
        if not (self.eta > 0.0 and math.isfinite(self.eta)):
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.rounds_m < 1:
            raise ValueError(f"rounds_m must be >= 1, got {self.rounds_m}")
        if self.data_per_device < self.batch_size:
            raise ValueError(
                f"data_per_device ({self.data_per_device}) must cover one batch ({self.batch_size})"
            )
        if self.n_features < 1:
            raise ValueError(f"n_features must be >= 1, got {self.n_features}")
        if self.test_size < 2 or self.test_size % 2 != 0:
            raise ValueError(f"test_size must be even and >= 2, got {self.test_size}")
        if not (self.blob_separation > 0.0 and math.isfinite(self.blob_separation)):
            raise ValueError(f"blob_separation must be positive, got {self.blob_separation}")
        if not (0.0 <= self.label_skew < 1.0):
            raise ValueError(f"label_skew must lie in [0, 1), got {self.label_skew}")
        if self.hidden_units < 1:
            raise ValueError(f"hidden_units must be >= 1, got {self.hidden_units}")


@dataclass(frozen=True)
class SystemConfig:
    """Full experiment description; defaults follow the reference setup
    (10 devices, path-loss exponent 2.2, 0.1 W budget, -40 dBm noise,
    learning rate 0.005, distances uniform over (0, 500] meters)."""

    k_devices: int = 10
    rho: float = 0.8
    gamma_th: float | str = 0.5        # positive threshold or "optimize"
    alpha: float = 2.2
    p_max: float = 0.1                 # W
    sigma2_dbm: float = -40.0          # receiver noise power in dBm
    eta: float = 0.005
    distances: str | tuple[float, ...] = "uniform(0,500]"
    g_bound: float | None = None       # None -> calibrate on a warm-up pass
    g_mode: str = "calibrated"         # calibrated | fixed | genie
    seed: int = 2026
    trials: int | None = None          # per-command default when None
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if self.k_devices < 1:
            raise ValueError(f"k_devices must be >= 1, got {self.k_devices}")
        if not (0.0 < self.rho <= 1.0):
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if isinstance(self.gamma_th, str):
            if self.gamma_th != "optimize":
                raise ValueError(f"symbolic gamma_th must be 'optimize', got {self.gamma_th!r}")
        elif not (self.gamma_th > 0.0 and math.isfinite(self.gamma_th)):
            raise ValueError(f"gamma_th must be positive and finite, got {self.gamma_th}")
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (self.p_max > 0.0 and math.isfinite(self.p_max)):
            raise ValueError(f"p_max must be positive, got {self.p_max}")
        if not math.isfinite(self.sigma2_dbm):
            raise ValueError(f"sigma2_dbm must be finite, got {self.sigma2_dbm}")
        if not (self.eta > 0.0 and math.isfinite(self.eta)):
            raise ValueError(f"eta must be positive, got {self.eta}")
        if isinstance(self.distances, str):
            if _UNIFORM_RE.match(self.distances) is None:
                raise ValueError(
                    f"symbolic distances must look like 'uniform(0,500]', got {self.distances!r}"
                )
        else:
            if len(self.distances) != self.k_devices:
                raise ValueError(
                    f"{self.k_devices} devices but {len(self.distances)} distances"
                )
            if any(not (d > 0.0 and math.isfinite(d)) for d in self.distances):
                raise ValueError("distances must be positive and finite")
        if self.g_bound is not None and not (self.g_bound > 0.0 and math.isfinite(self.g_bound)):
            raise ValueError(f"g_bound must be positive, got {self.g_bound}")
        if self.g_mode not in _G_MODES:
            raise ValueError(f"g_mode must be one of {_G_MODES}, got {self.g_mode!r}")
        if self.trials is not None and self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")


@dataclass(frozen=True)
class ResolvedExperiment:
    """SystemConfig with every symbolic field made concrete."""

    cfg: SystemConfig
    train: TrainConfig
    est: EstimationModel
    distances: tuple[float, ...]
    d_max_alpha: float
    sigma2: float            # watts
    gamma_th: float
    gamma_policy: str        # "fixed" or "optimize"
    seed: int

    @property
    def k_devices(self) -> int:
        return self.cfg.k_devices

    @property
    def rho(self) -> float:
        return self.cfg.rho

    def power_config(self, g_bound: float) -> PowerConfig:
        return PowerConfig(
            p_max=self.cfg.p_max,
            sigma2=self.sigma2,
            g_bound=g_bound,
            d_max_alpha=self.d_max_alpha,
        )


def resolve(cfg: SystemConfig) -> ResolvedExperiment:
    """Make distances, noise power, and the threshold concrete.

    Distance draws use their own stream, so experiments with different
    trial counts or modes share the same geometry under one seed.
    """
    if isinstance(cfg.distances, str):
        lo, hi = (float(g) for g in _UNIFORM_RE.match(cfg.distances).groups())
        if not (0.0 <= lo < hi):
            raise ValueError(f"bad distance range ({lo}, {hi}]")
        gen = substream(cfg.seed, STREAM_DISTANCES)
        # hi - u*(hi-lo) with u in [0,1) lands in (lo, hi]: the lower
        # endpoint (zero distance) is excluded, the upper included.
        dist = tuple(float(d) for d in hi - gen.random(cfg.k_devices) * (hi - lo))
    else:
        dist = tuple(float(d) for d in cfg.distances)

    d_max_alpha = max(dist) ** cfg.alpha
    sigma2 = dbm_to_watts(cfg.sigma2_dbm)

    if isinstance(cfg.gamma_th, str):
        from .optimizer import coefficients_from_system, optimal_threshold

        probe = PowerConfig(p_max=cfg.p_max, sigma2=sigma2, g_bound=1.0, d_max_alpha=d_max_alpha)
        coef = coefficients_from_system(cfg.rho, probe)
        gamma_th = optimal_threshold(coef).gamma_star
        gamma_policy = "optimize"
    else:
        gamma_th = float(cfg.gamma_th)
        gamma_policy = "fixed"

    train = replace(cfg.train, eta=cfg.eta, seed=cfg.seed)
    return ResolvedExperiment(
        cfg=cfg,
        train=train,
        est=EstimationModel(rho=cfg.rho, alpha=cfg.alpha),
        distances=dist,
        d_max_alpha=d_max_alpha,
        sigma2=sigma2,
        gamma_th=gamma_th,
        gamma_policy=gamma_policy,
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# key=value config files


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse 'key = value' lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: expected a number, got {value!r}") from exc


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: expected an integer, got {value!r}") from exc


_SYS_FLOATS = {"rho", "alpha", "p_max", "sigma2_dbm", "eta"}
_SYS_INTS = {"k_devices", "seed", "trials"}
_TRAIN_FLOATS = {"blob_separation", "label_skew"}
_TRAIN_INTS = {
    "batch_size",
    "rounds_m",
    "data_per_device",
    "n_features",
    "test_size",
    "hidden_units",
}


def config_from_kv(kv: dict[str, str]) -> tuple[SystemConfig, dict[str, str]]:
    """Build a SystemConfig from parsed keys.

    Unknown dotted keys (e.g. 'verify_xi.rho_grid') are returned as extras
    for command-specific parameters; unknown bare keys are rejected.
    'train.eta' and 'train.seed' are rejected: both are owned by the
    top-level keys and synced during resolution.
    """
    sys_kwargs: dict[str, object] = {}
    train_kwargs: dict[str, object] = {}
    extras: dict[str, str] = {}
    for key, value in kv.items():
        if key in _SYS_FLOATS:
            sys_kwargs[key] = _parse_float(key, value)
        elif key in _SYS_INTS:
            sys_kwargs[key] = _parse_int(key, value)
        elif key == "gamma_th":
            sys_kwargs[key] = value if value == "optimize" else _parse_float(key, value)
        elif key == "distances":
            if value.startswith("uniform"):
                sys_kwargs[key] = value
            else:
                sys_kwargs[key] = tuple(_parse_float(key, v) for v in value.split(","))
        elif key == "g_bound":
            sys_kwargs[key] = None if value == "calibrate" else _parse_float(key, value)
        elif key == "g_mode":
            sys_kwargs[key] = value
        elif key.startswith("train."):
            sub = key[len("train.") :]
            if sub in _TRAIN_FLOATS:
                train_kwargs[sub] = _parse_float(key, value)
            elif sub in _TRAIN_INTS:
                train_kwargs[sub] = _parse_int(key, value)
            elif sub == "task":
                train_kwargs[sub] = value
            elif sub in ("eta", "seed"):
                raise ValueError(f"set top-level {sub!r} instead of {key!r}")
            else:
                raise ValueError(f"unknown config key {key!r}")
        elif "." in key:
            extras[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    train = TrainConfig(**train_kwargs)
    cfg = SystemConfig(train=train, **sys_kwargs)
    return cfg, extras


def load_config(path: str) -> tuple[SystemConfig, dict[str, str]]:
    """Load a config or manifest file (same format) from disk."""
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_kv(parse_kv_text(fh.read()))


def _fmt(value: object) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_kv(cfg: SystemConfig, extras: dict[str, str] | None = None) -> list[tuple[str, str]]:
    """Serialize a config to ordered key/value pairs (field order, then
    train.* fields, then sorted extras).  Floats use repr so a round trip
    through text is bit-exact."""
    pairs: list[tuple[str, str]] = []
    for f in fields(SystemConfig):
        if f.name == "train":
            continue
        value = getattr(cfg, f.name)
        if f.name == "distances" and not isinstance(value, str):
            pairs.append((f.name, ",".join(repr(d) for d in value)))
        elif f.name == "g_bound":
            pairs.append((f.name, "calibrate" if value is None else repr(value)))
        elif f.name == "trials":
            if value is not None:
                pairs.append((f.name, str(value)))
        else:
            pairs.append((f.name, _fmt(value)))
    for f in fields(TrainConfig):
        if f.name in ("eta", "seed"):
            continue
        pairs.append((f"train.{f.name}", _fmt(getattr(cfg.train, f.name))))
    for key in sorted(extras or {}):
        pairs.append((key, extras[key]))
    return pairs


def resolved_to_config(exp: ResolvedExperiment, g_bound: float | None = None) -> SystemConfig:
    """Concrete SystemConfig that replays this experiment bit-identically."""
    return replace(
        exp.cfg,
        gamma_th=exp.gamma_th,
        distances=exp.distances,
        g_bound=exp.cfg.g_bound if g_bound is None else g_bound,
    )
