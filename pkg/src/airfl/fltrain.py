"""Federated training over the simulated multiple-access channel.

Each round: every device computes a mini-batch cross-entropy gradient at the
current global model, the gradients are aggregated either ideally (exact
mean) or over the air (truncated channel inversion plus receiver noise), and
the server applies one gradient step.  Rounds whose active set is empty are
skipped: the model is left untouched and the event is counted in the trace.

Two desk-scale tasks are built in: a two-class Gaussian-blob logistic
regression and a one-hidden-layer MLP on the same data.  An IDX loader is
provided for image/label files if real data is wanted instead.
"""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aircomp import PowerConfig, aggregate, preprocessing_beta, scaling_zeta
from .channel import draw_channel, substream
from .config import (
    STREAM_BATCH,
    STREAM_CHANNEL,
    STREAM_DATA,
    STREAM_INIT,
    STREAM_NOISE,
    STREAM_TEST,
    ResolvedExperiment,
    SystemConfig,
    resolve,
)

_MODES = ("aircomp", "ideal")
_WARMUP_ROUNDS = 10
_G_MARGIN = 1.1


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector of the global model."""

    w: np.ndarray

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.w)):
            raise ValueError("model parameters must be finite")


@dataclass
class DeviceDataset:
    features: np.ndarray  # (D, n_features)
    labels: np.ndarray    # (D,) in {0, 1}

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    loss: float            # global training loss after the update
    accuracy: float        # test accuracy after the update
    divergence_sq: float   # ||g_hat - ideal mean||^2 for this round
    grad_spread_sq: float  # mean_k ||g_k - ideal mean||^2 (local variance)
    active_count: int
    skipped: bool


@dataclass
class TrainingTrace:
    records: list[RoundRecord]
    final: ModelParams
    mode: str
    gamma_th: float | None
    g_bound: float | None

    @property
    def skipped_rounds(self) -> int:
        return sum(r.skipped for r in self.records)

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].accuracy

    @property
    def mean_divergence_sq(self) -> float:
        return float(np.mean([r.divergence_sq for r in self.records]))

    @property
    def delta2_hat(self) -> float:
        """Empirical local-gradient variance level (mean over rounds)."""
        return float(np.mean([r.grad_spread_sq for r in self.records]))


# ---------------------------------------------------------------------------
# tasks


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def _bce_loss(scores: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^s) - y s, evaluated stably via logaddexp
    return float(np.mean(np.logaddexp(0.0, scores) - y * scores))


class LogisticTask:
    """Binary logistic regression, w in R^n_features, no bias term."""

    def __init__(self, n_features: int):
        self.dim = n_features

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.dim)

    def scores(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        return x @ w

    def loss(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        return _bce_loss(self.scores(w, x), y)

    def gradient(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        residual = _sigmoid(self.scores(w, x)) - y
        return x.T @ residual / x.shape[0]


class MlpTask:
    """One hidden relu layer (hidden_units wide), sigmoid output, packed as
    [W1.ravel(), b1, w2, b2]."""

    def __init__(self, n_features: int, hidden_units: int):
        self.n_in = n_features
        self.n_hid = hidden_units
        self.dim = hidden_units * n_features + hidden_units + hidden_units + 1

    def _unpack(self, w: np.ndarray):
        h, d = self.n_hid, self.n_in
        w1 = w[: h * d].reshape(h, d)
        b1 = w[h * d : h * d + h]
        w2 = w[h * d + h : h * d + 2 * h]
        b2 = w[-1]
        return w1, b1, w2, b2

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        h, d = self.n_hid, self.n_in
        w1 = rng.standard_normal((h, d)) / math.sqrt(d)
        w2 = rng.standard_normal(h) / math.sqrt(h)
        return np.concatenate([w1.ravel(), np.zeros(h), w2, np.zeros(1)])

    def scores(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self._unpack(w)
        a1 = np.maximum(x @ w1.T + b1, 0.0)
        return a1 @ w2 + b2

    def loss(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        return _bce_loss(self.scores(w, x), y)

    def gradient(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self._unpack(w)
        z1 = x @ w1.T + b1
        a1 = np.maximum(z1, 0.0)
        scores = a1 @ w2 + b2
        dscore = (_sigmoid(scores) - y) / x.shape[0]
        d_w2 = a1.T @ dscore
        d_b2 = np.sum(dscore)
        dz1 = np.outer(dscore, w2) * (z1 > 0.0)
        d_w1 = dz1.T @ x
        d_b1 = dz1.sum(axis=0)
        return np.concatenate([d_w1.ravel(), d_b1, d_w2, [d_b2]])


def build_task(train_cfg) -> LogisticTask | MlpTask:
    if train_cfg.task == "synthetic_logistic":
        return LogisticTask(train_cfg.n_features)
    return MlpTask(train_cfg.n_features, train_cfg.hidden_units)


# ---------------------------------------------------------------------------
# data


def _blob_features(y: np.ndarray, n_features: int, separation: float, gen: np.random.Generator) -> np.ndarray:
    x = gen.standard_normal((y.shape[0], n_features))
    x[:, 0] += (2.0 * y - 1.0) * (separation / 2.0)
    return x


def build_devices(exp: ResolvedExperiment) -> list[DeviceDataset]:
    """Per-device shards of the two-blob mixture.

    label_skew tilts device k toward class k mod 2: the probability of the
    preferred class is 0.5 + skew/2, so 0 recovers IID shards and values
    near 1 give almost single-class devices.  Every device holds the same
    number of samples.
    """
    tc = exp.train
    devices = []
    for k in range(exp.k_devices):
        gen = substream(exp.seed, STREAM_DATA, k)
        p_pref = 0.5 + 0.5 * tc.label_skew
        preferred = k % 2
        take_pref = gen.random(tc.data_per_device) < p_pref
        y = np.where(take_pref, preferred, 1 - preferred).astype(np.float64)
        x = _blob_features(y, tc.n_features, tc.blob_separation, gen)
        devices.append(DeviceDataset(features=x, labels=y))
    return devices


def build_test_set(exp: ResolvedExperiment) -> DeviceDataset:
    """Exactly class-balanced held-out set (even size enforced by config)."""
    tc = exp.train
    gen = substream(exp.seed, STREAM_TEST)
    y = (np.arange(tc.test_size) % 2).astype(np.float64)
    x = _blob_features(y, tc.n_features, tc.blob_separation, gen)
    return DeviceDataset(features=x, labels=y)


# ---------------------------------------------------------------------------
# IDX loader (optional real data)


def load_idx(path: str | Path) -> np.ndarray:
    """Read one IDX image (magic 2051) or label (magic 2049) file.

    Both raw and gzip-compressed files are accepted; multi-byte fields are
    big-endian per the format.
    """
    data = Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    if len(data) < 8:
        raise ValueError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">i", data[:4])
    if magic == 2051:
        n, rows, cols = struct.unpack(">iii", data[4:16])
        expected = 16 + n * rows * cols
        if len(data) < expected:
            raise ValueError(f"{path}: expected {expected} bytes, got {len(data)}")
        return np.frombuffer(data, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(
            n, rows, cols
        )
    if magic == 2049:
        (n,) = struct.unpack(">i", data[4:8])
        if len(data) < 8 + n:
            raise ValueError(f"{path}: expected {8 + n} bytes, got {len(data)}")
        return np.frombuffer(data, dtype=np.uint8, count=n, offset=8)
    raise ValueError(f"{path}: unknown IDX magic {magic} (expected 2051 or 2049)")


def load_idx_pair(images_path: str | Path, labels_path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Flattened, unit-scaled image matrix and integer label vector."""
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3:
        raise ValueError(f"{images_path}: not an image file")
    if labels.ndim != 1:
        raise ValueError(f"{labels_path}: not a label file")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return x, labels.astype(np.int64)


def binary_subset(x: np.ndarray, y: np.ndarray, class_zero: int, class_one: int) -> tuple[np.ndarray, np.ndarray]:
    """Restrict a labeled set to two classes, relabeled to {0, 1}."""
    mask = (y == class_zero) | (y == class_one)
    return x[mask], (y[mask] == class_one).astype(np.float64)


# ---------------------------------------------------------------------------
# aggregation primitives


def local_gradient(task, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Mini-batch gradient of the mean cross-entropy loss at w."""
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"batch mismatch: {x.shape[0]} samples vs {y.shape[0]} labels")
    return task.gradient(w, x, y)


def ideal_aggregate(gradients: list[np.ndarray]) -> np.ndarray:
    """Exact gradient mean, accumulated in device order."""
    if not gradients:
        raise ValueError("no gradients to aggregate")
    total = np.zeros_like(gradients[0])
    for g in gradients:
        total += g
    return total / len(gradients)


def global_update(w: np.ndarray, g_hat: np.ndarray, eta: float) -> np.ndarray:
    if not (eta > 0.0 and math.isfinite(eta)):
        raise ValueError(f"eta must be positive, got {eta}")
    if w.shape != g_hat.shape:
        raise ValueError(f"shape mismatch: w {w.shape} vs g_hat {g_hat.shape}")
    return w - eta * g_hat


def evaluate(task, w: np.ndarray, data: DeviceDataset) -> tuple[float, float]:
    """(mean loss, accuracy); scores of exactly zero predict class 0."""
    scores = task.scores(w, data.features)
    loss = _bce_loss(scores, data.labels)
    accuracy = float(np.mean((scores > 0.0) == (data.labels > 0.5)))
    return loss, accuracy


def round_gradients(task, w, devices, exp, round_index):
    """All K mini-batch gradients of one round (batches drawn without
    replacement from per-(round, device) streams)."""
    grads = []
    for k, dev in enumerate(devices):
        gen = substream(exp.seed, STREAM_BATCH, round_index, k)
        idx = gen.choice(dev.size, size=exp.train.batch_size, replace=False)
        grads.append(local_gradient(task, w, dev.features[idx], dev.labels[idx]))
    return grads


def run_round(
    w: np.ndarray,
    round_index: int,
    exp: ResolvedExperiment,
    task,
    devices: list[DeviceDataset],
    test: DeviceDataset,
    all_train: DeviceDataset,
    power: PowerConfig | None,
    mode: str,
    xi_override: float | None = None,
) -> tuple[np.ndarray, RoundRecord]:
    """One aggregation round; returns the updated model and its record.

    xi_override is a test hook: it replaces every effective coefficient by
    a constant without drawing any channel realizations, so an override of
    1.0 with zero noise reproduces the ideal-mode update bit-identically.
    """
    grads = round_gradients(task, w, devices, exp, round_index)
    g_ideal = ideal_aggregate(grads)
    spread = float(np.mean([np.sum((g - g_ideal) ** 2) for g in grads]))

    skipped = False
    if mode == "ideal":
        g_hat = g_ideal
        active_count = len(devices)
    elif xi_override is not None:
        g_hat = ideal_aggregate([xi_override * g for g in grads])
        if power is not None and power.sigma2 > 0.0:
            outcome_gen = substream(exp.seed, STREAM_NOISE, round_index)
            zeta = scaling_zeta(exp.k_devices, exp.rho, power, exp.gamma_th)
            g_hat = g_hat + outcome_gen.standard_normal(w.shape) * (
                math.sqrt(power.sigma2) / (math.sqrt(2.0) * zeta)
            )
        active_count = len(devices)
    else:
        draws = [
            draw_channel(exp.est, exp.distances[k], substream(exp.seed, STREAM_CHANNEL, round_index, k))
            for k in range(exp.k_devices)
        ]
        round_power = power
        if exp.cfg.g_mode == "genie":
            g_now = max(float(np.linalg.norm(g)) for g in grads)
            if g_now == 0.0:
                raise RuntimeError("genie power control with all-zero gradients")
            round_power = PowerConfig(
                p_max=power.p_max,
                sigma2=power.sigma2,
                g_bound=g_now,
                d_max_alpha=power.d_max_alpha,
            )
        outcome = aggregate(
            grads,
            draws,
            exp.gamma_th,
            exp.rho,
            round_power,
            substream(exp.seed, STREAM_NOISE, round_index),
        )
        _assert_power_feasible(grads, draws, outcome, round_power, exp)
        skipped = outcome.skipped
        g_hat = outcome.g_hat
        active_count = len(outcome.active_set)

    if skipped:
        w_next = w
    else:
        w_next = global_update(w, g_hat, exp.train.eta)

    loss, _ = evaluate(task, w_next, all_train)
    _, accuracy = evaluate(task, w_next, test)
    diff = g_hat - g_ideal
    record = RoundRecord(
        round_index=round_index,
        loss=loss,
        accuracy=accuracy,
        divergence_sq=float(np.dot(diff, diff)),
        grad_spread_sq=spread,
        active_count=active_count,
        skipped=skipped,
    )
    return w_next, record


def _assert_power_feasible(grads, draws, outcome, power: PowerConfig, exp) -> None:
    # Instantaneous power check for every active device whose gradient obeys
    # the norm bound; a tiny slack absorbs rounding in the boundary case
    # |h_hat|^2 == gamma_th.
    for k in outcome.active_set:
        g_norm_sq = float(np.dot(grads[k], grads[k]))
        if g_norm_sq > power.g_bound**2:
            continue
        beta = preprocessing_beta(draws[k], outcome.zeta, outcome.lam, exp.k_devices)
        sent = (beta.real**2 + beta.imag**2) * g_norm_sq
        if sent > power.p_max * (1.0 + 1e-9):
            raise AssertionError(
                f"device {k} exceeded the power budget: {sent} > {power.p_max}"
            )


def calibrate_g_bound(
    exp: ResolvedExperiment, task, devices: list[DeviceDataset], rounds: int = _WARMUP_ROUNDS
) -> float:
    """Gradient-norm bound from an ideal-mode warm-up pass.

    Runs the first `rounds` rounds with exact aggregation under the same
    seed (hence the same batches the real run will draw) and returns 1.1x
    the largest per-device gradient norm observed.
    """
    w = task.init_params(substream(exp.seed, STREAM_INIT))
    g_max = 0.0
    for m in range(rounds):
        grads = round_gradients(task, w, devices, exp, m)
        g_max = max(g_max, max(float(np.linalg.norm(g)) for g in grads))
        w = global_update(w, ideal_aggregate(grads), exp.train.eta)
    if g_max == 0.0:
        raise RuntimeError("warm-up saw only zero gradients; cannot calibrate a norm bound")
    return _G_MARGIN * g_max


def train(
    cfg: SystemConfig | ResolvedExperiment,
    mode: str = "aircomp",
    xi_override: float | None = None,
) -> TrainingTrace:
    """Run a full federated experiment and return its trace.

    mode "ideal" aggregates exactly (no channel); "aircomp" sends gradients
    over the simulated channel with truncated inversion.  With the same
    seed, both modes draw identical data and batches.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    exp = cfg if isinstance(cfg, ResolvedExperiment) else resolve(cfg)
    task = build_task(exp.train)
    devices = build_devices(exp)
    test = build_test_set(exp)
    all_train = DeviceDataset(
        features=np.concatenate([d.features for d in devices]),
        labels=np.concatenate([d.labels for d in devices]),
    )

    power = None
    gamma_th: float | None = None
    g_bound: float | None = None
    if mode == "aircomp":
        gamma_th = exp.gamma_th
        if exp.cfg.g_mode == "fixed":
            if exp.cfg.g_bound is None:
                raise ValueError("g_mode 'fixed' requires g_bound")
            g_bound = exp.cfg.g_bound
        else:
            g_bound = exp.cfg.g_bound if exp.cfg.g_bound is not None else calibrate_g_bound(exp, task, devices)
        power = exp.power_config(g_bound)

    w = task.init_params(substream(exp.seed, STREAM_INIT))
    records = []
    for m in range(exp.train.rounds_m):
        w, record = run_round(
            w, m, exp, task, devices, test, all_train, power, mode, xi_override
        )
        records.append(record)

    return TrainingTrace(
        records=records,
        final=ModelParams(w=w),
        mode=mode,
        gamma_th=gamma_th,
        g_bound=g_bound,
    )
