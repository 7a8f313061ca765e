"""Monte-Carlo verification, threshold sweeps, and CSV/manifest reporting.

Every closed form in the package has a sampling counterpart here: coefficient
moments, the joint law behind the variance derivation, and the frozen-gradient
weight divergence.  Comparisons follow the 4-standard-error rule, so each
estimator also returns its standard error; results are tabulated as
SweepResult and written as CSV plus a replayable run manifest.

Trials are keyed by per-trial RNG streams, so a parallel run (jobs > 1)
merges to the exact same numbers as a serial one.
"""

from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.integrate import dblquad, quad

from .aircomp import PowerConfig, aggregate, compensation_lambda, dbm_to_watts, scaling_zeta
from .analysis import (
    LearningConstants,
    conditional_second_moment,
    convergence_bound,
    divergence_bound,
    divergence_exact,
    joint_cdf_xy,
    joint_pdf_xy,
    xi_variance,
)
from .channel import EstimationModel, draw_channel, draw_channel_block, substream
from .config import (
    STREAM_INIT,
    STREAM_MC_DIVERGENCE,
    STREAM_MC_JOINT,
    STREAM_MC_XI,
    SystemConfig,
    config_to_kv,
    resolve,
)
from .fltrain import (
    TrainingTrace,
    build_devices,
    build_task,
    calibrate_g_bound,
    ideal_aggregate,
    round_gradients,
    train,
)
from .optimizer import coefficients_from_system, optimal_threshold

_CHUNK = 1 << 20
_MIN_XI_SAMPLES = 10_000
_MIN_JOINT_SAMPLES = 1_000_000
_MIN_TRIALS = 1_000
_MASS_CONSISTENCY_TOL = 1e-9  # quadrature vs CDF-rectangle cross-check


# ---------------------------------------------------------------------------
# result containers


def _norm_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


@dataclass
class SweepResult:
    """Named columns, one row per grid point, scalar summaries in meta.

    Construction enforces the reporting rule that no Monte-Carlo estimate
    travels without its uncertainty: at least one column must be a
    standard-error column (suffix '_se'), and row shapes must match the
    header.  Cells are normalized to plain int/float/str so a CSV round
    trip reproduces the rows exactly.
    """

    columns: tuple[str, ...]
    rows: list[tuple]
    meta: dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.columns = tuple(self.columns)
        if not self.columns:
            raise ValueError("SweepResult needs at least one column")
        if not any(name.endswith("_se") for name in self.columns):
            raise ValueError("no standard-error column; estimates must carry one")
        normalized = []
        for i, row in enumerate(self.rows):
            if len(row) != len(self.columns):
                raise ValueError(
                    f"row {i} has {len(row)} cells for {len(self.columns)} columns"
                )
            normalized.append(tuple(_norm_cell(v) for v in row))
        self.rows = normalized

    def column(self, name: str) -> list:
        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]


@dataclass(frozen=True)
class XiMomentsResult:
    """Sample moments of the effective coefficient with standard errors."""

    rho: float
    gamma_th: float
    n_samples: int
    mean: float
    variance: float
    se_mean: float
    se_var: float
    variance_closed: float
    active_fraction: float
    se_active: float
    active_expected: float


@dataclass(frozen=True)
class CondMomentResult:
    """Conditional second moment E[(x - c)^2 | y <= -gamma_th], sampled."""

    gamma_th: float
    c: float
    n_samples: int
    n_kept: int
    estimate: float
    se: float
    expected: float


# ---------------------------------------------------------------------------
# coefficient moments


def mc_xi_moments(
    rho: float, gamma_th: float, n_samples: int, seed: int, chunk: int = _CHUNK
) -> XiMomentsResult:
    """Sample the effective aggregation coefficient and compare moments.

    Draws n_samples independent channel/estimate pairs, forms
    xi = lambda Re{h* h_hat}/|h_hat|^2 on the active event and 0 otherwise,
    and returns the sample mean and unbiased variance with standard errors
    (the variance SE uses the fourth-central-moment formula).  Sums are
    accumulated around the known unit mean to keep the moment arithmetic
    well conditioned.
    """
    if n_samples < _MIN_XI_SAMPLES:
        raise ValueError(f"need at least {_MIN_XI_SAMPLES} samples, got {n_samples}")
    # alpha plays no role in the coefficient; any valid value works here
    model = EstimationModel(rho=rho, alpha=2.0)
    lam = compensation_lambda(gamma_th, rho)
    gen = substream(seed, STREAM_MC_XI)

    parts: tuple[list[float], ...] = ([], [], [], [])
    n_active = 0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        h, h_hat, v = draw_channel_block(model, m, gen)
        gain = h_hat.real**2 + h_hat.imag**2
        active = gain >= gamma_th
        xi = np.zeros(m)
        xi[active] = (
            lam
            * (h.real[active] * h_hat.real[active] + h.imag[active] * h_hat.imag[active])
            / gain[active]
        )
        y = xi - 1.0
        y2 = y * y
        parts[0].append(float(np.sum(y)))
        parts[1].append(float(np.sum(y2)))
        parts[2].append(float(np.sum(y2 * y)))
        parts[3].append(float(np.sum(y2 * y2)))
        n_active += int(np.count_nonzero(active))
        done += m

    s1, s2, s3, s4 = (math.fsum(p) for p in parts)
    n = float(n_samples)
    a = s1 / n  # sample mean of xi - 1
    m2 = s2 / n - a * a
    m4 = s4 / n - 4.0 * a * s3 / n + 6.0 * a * a * s2 / n - 3.0 * a**4
    var = m2 * n / (n - 1.0)
    se_mean = math.sqrt(var / n)
    se_var = math.sqrt(max(m4 - m2 * m2 * (n - 3.0) / (n - 1.0), 0.0) / n)
    p_act = n_active / n
    return XiMomentsResult(
        rho=rho,
        gamma_th=gamma_th,
        n_samples=n_samples,
        mean=1.0 + a,
        variance=var,
        se_mean=se_mean,
        se_var=se_var,
        variance_closed=xi_variance(gamma_th, rho),
        active_fraction=p_act,
        se_active=math.sqrt(p_act * (1.0 - p_act) / n),
        active_expected=math.exp(-gamma_th),
    )


# ---------------------------------------------------------------------------
# joint law of (x, y) = (Re{v* h_hat}/|h_hat|^2, -|h_hat|^2)


def _bin_mass(t0: float, t1: float, g0: float, g1: float) -> float:
    """Mass of the analytic density over [t0,t1] x [g0,g1], g1 <= 0.

    The t-integral of the density is available in closed form (a Gaussian
    slice), leaving the smooth 1-D integrand e^g (erf(t1 s) - erf(t0 s))/2
    with s = sqrt(-g), which adaptive quadrature handles to ~1e-13.
    """

    def integrand(g: float) -> float:
        s = math.sqrt(-g)
        return 0.5 * math.exp(g) * (math.erf(t1 * s) - math.erf(t0 * s))

    val, _ = quad(integrand, g0, g1, epsabs=1e-13, epsrel=1e-12)
    return val


def _rect_mass(t0: float, t1: float, g0: float, g1: float) -> float:
    # same mass from CDF differences; used as an internal consistency guard
    return (
        joint_cdf_xy(t1, g1)
        - joint_cdf_xy(t0, g1)
        - joint_cdf_xy(t1, g0)
        + joint_cdf_xy(t0, g0)
    )


def mc_joint_distribution_check(
    gamma_range: tuple[float, float],
    t_range: tuple[float, float],
    n_samples: int,
    seed: int,
    bins: int = 40,
    tail_gamma: float = 1.0,
    chunk: int = _CHUNK,
) -> SweepResult:
    """Histogram the sampled (x, y) pair against the analytic density.

    Returns one row per bin with the empirical mass, its binomial standard
    error, and the analytic mass (density integrated over the bin).  meta
    carries the window summaries: total-variation distance between the
    binned laws (mass outside the window lumped into one cell), the tail
    probability Pr{y <= -tail_gamma} against exp(-tail_gamma), and the
    conditional second moment of x given that tail against the closed form.
    """
    if n_samples < _MIN_JOINT_SAMPLES:
        raise ValueError(f"need at least {_MIN_JOINT_SAMPLES} samples, got {n_samples}")
    g_lo, g_hi = (float(g) for g in gamma_range)
    t_lo, t_hi = (float(t) for t in t_range)
    if not (g_lo < g_hi <= 0.0):
        raise ValueError(f"gamma window must satisfy lo < hi <= 0, got ({g_lo}, {g_hi})")
    if not (t_lo < t_hi):
        raise ValueError(f"empty t window ({t_lo}, {t_hi})")
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    if not (tail_gamma > 0.0 and math.isfinite(tail_gamma)):
        raise ValueError(f"tail_gamma must be positive, got {tail_gamma}")

    t_edges = np.linspace(t_lo, t_hi, bins + 1)
    g_edges = np.linspace(g_lo, g_hi, bins + 1)
    # the pair (x, y) involves only the estimate and the estimation noise,
    # so rho does not enter; any valid model produces the same law
    model = EstimationModel(rho=1.0, alpha=2.0)
    gen = substream(seed, STREAM_MC_JOINT)

    hist = np.zeros((bins, bins))
    tail_count = 0
    q_sums: list[float] = []
    q2_sums: list[float] = []
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        _, h_hat, v = draw_channel_block(model, m, gen)
        gain = h_hat.real**2 + h_hat.imag**2
        re_vh = v.real * h_hat.real + v.imag * h_hat.imag
        pos = gain > 0.0  # zero gain has probability zero; guard the division
        x = re_vh[pos] / gain[pos]
        y = -gain[pos]
        hist += np.histogram2d(x, y, bins=(t_edges, g_edges))[0]
        kept = gain >= tail_gamma
        tail_count += int(np.count_nonzero(kept))
        q = (re_vh[kept] / gain[kept]) ** 2
        q_sums.append(float(np.sum(q)))
        q2_sums.append(float(np.sum(q * q)))
        done += m

    mass = np.empty((bins, bins))
    worst_gap = 0.0
    for i in range(bins):
        for j in range(bins):
            mass[i, j] = _bin_mass(t_edges[i], t_edges[i + 1], g_edges[j], g_edges[j + 1])
            gap = abs(mass[i, j] - _rect_mass(t_edges[i], t_edges[i + 1], g_edges[j], g_edges[j + 1]))
            worst_gap = max(worst_gap, gap)
    if worst_gap > _MASS_CONSISTENCY_TOL:
        raise RuntimeError(
            f"density and CDF disagree on a bin mass by {worst_gap}; internal inconsistency"
        )

    n = float(n_samples)
    p_emp = hist / n
    inside_emp = float(p_emp.sum())
    inside_ana = float(mass.sum())
    tv = 0.5 * (float(np.abs(p_emp - mass).sum()) + abs(inside_ana - inside_emp))

    rows = []
    for i in range(bins):
        for j in range(bins):
            p = p_emp[i, j]
            rows.append(
                (
                    float(t_edges[i]),
                    float(t_edges[i + 1]),
                    float(g_edges[j]),
                    float(g_edges[j + 1]),
                    float(p),
                    math.sqrt(p * (1.0 - p) / n),
                    float(mass[i, j]),
                )
            )

    p_tail = tail_count / n
    meta: dict[str, object] = {
        "n_samples": n_samples,
        "bins": bins,
        "tv_distance": tv,
        "outside_mass_mc": 1.0 - inside_emp,
        "outside_mass_analytic": 1.0 - inside_ana,
        "tail_gamma": tail_gamma,
        "tail_prob_mc": p_tail,
        "tail_prob_se": math.sqrt(p_tail * (1.0 - p_tail) / n),
        "tail_prob_expected": math.exp(-tail_gamma),
    }
    if tail_count > 1:
        s_q = math.fsum(q_sums)
        s_q2 = math.fsum(q2_sums)
        mean_q = s_q / tail_count
        var_q = max(s_q2 / tail_count - mean_q * mean_q, 0.0)
        meta["cond_m2_mc"] = mean_q
        meta["cond_m2_se"] = math.sqrt(var_q / tail_count)
        meta["cond_m2_expected"] = conditional_second_moment(tail_gamma, 0.0)
        meta["cond_count"] = tail_count
    return SweepResult(
        columns=(
            "t_lo",
            "t_hi",
            "gamma_lo",
            "gamma_hi",
            "mass_mc",
            "mass_mc_se",
            "mass_analytic",
        ),
        rows=rows,
        meta=meta,
    )


def mc_conditional_second_moment(
    gamma_th: float, c: float, n_samples: int, seed: int, chunk: int = _CHUNK
) -> CondMomentResult:
    """Sample E[(x - c)^2 | y <= -gamma_th] and its standard error."""
    if n_samples < _MIN_XI_SAMPLES:
        raise ValueError(f"need at least {_MIN_XI_SAMPLES} samples, got {n_samples}")
    if not (gamma_th > 0.0 and math.isfinite(gamma_th)):
        raise ValueError(f"gamma_th must be positive, got {gamma_th}")
    model = EstimationModel(rho=1.0, alpha=2.0)
    gen = substream(seed, STREAM_MC_JOINT)
    q_sums: list[float] = []
    q2_sums: list[float] = []
    kept_total = 0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        _, h_hat, v = draw_channel_block(model, m, gen)
        gain = h_hat.real**2 + h_hat.imag**2
        kept = gain >= gamma_th
        x = (v.real[kept] * h_hat.real[kept] + v.imag[kept] * h_hat.imag[kept]) / gain[kept]
        q = (x - c) ** 2
        q_sums.append(float(np.sum(q)))
        q2_sums.append(float(np.sum(q * q)))
        kept_total += int(np.count_nonzero(kept))
        done += m
    if kept_total < 2:
        raise RuntimeError(
            f"only {kept_total} samples cleared gamma_th={gamma_th}; cannot estimate"
        )
    mean_q = math.fsum(q_sums) / kept_total
    var_q = max(math.fsum(q2_sums) / kept_total - mean_q * mean_q, 0.0)
    return CondMomentResult(
        gamma_th=gamma_th,
        c=float(c),
        n_samples=n_samples,
        n_kept=kept_total,
        estimate=mean_q,
        se=math.sqrt(var_q / kept_total),
        expected=conditional_second_moment(gamma_th, c),
    )


def pdf_normalization(gamma_min: float = -40.0) -> float:
    """Quadrature of the joint density over t in R, gamma in [gamma_min, 0).

    Substituting gamma = -s^2 removes the square-root singularity at the
    origin; the remaining integrand is smooth and dblquad resolves it well
    below the 1e-6 acceptance tolerance.  The mass below gamma_min is
    e^{gamma_min}, negligible for the default window.
    """
    if not (gamma_min < 0.0 and math.isfinite(gamma_min)):
        raise ValueError(f"gamma_min must be negative, got {gamma_min}")
    s_max = math.sqrt(-gamma_min)
    val, _ = dblquad(
        lambda t, s: 2.0 * s * joint_pdf_xy(t, -s * s),
        0.0,
        s_max,
        -np.inf,
        np.inf,
        epsabs=1e-9,
        epsrel=1e-9,
    )
    return float(val)


def cdf_pdf_consistency(
    t_values, gamma_values, step: float = 1e-4
) -> float:
    """Worst |mixed central difference of the CDF - density| over a grid.

    The CDF is differenced with the standard four-point stencil at spacing
    `step` in both arguments; gamma points must stay below -step so the
    stencil never crosses the support boundary.
    """
    if not (0.0 < step < 1e-2):
        raise ValueError(f"step must lie in (0, 0.01), got {step}")
    worst = 0.0
    for g in gamma_values:
        if g + step >= 0.0:
            raise ValueError(f"gamma value {g} too close to 0 for step {step}")
        for t in t_values:
            fd = (
                joint_cdf_xy(t + step, g + step)
                - joint_cdf_xy(t - step, g + step)
                - joint_cdf_xy(t + step, g - step)
                + joint_cdf_xy(t - step, g - step)
            ) / (4.0 * step * step)
            worst = max(worst, abs(fd - joint_pdf_xy(t, g)))
    return worst


# ---------------------------------------------------------------------------
# frozen-gradient weight divergence


def _resolve_g_bound(exp, task, devices, grads) -> float:
    if exp.cfg.g_bound is not None:
        return exp.cfg.g_bound
    if exp.cfg.g_mode == "fixed":
        raise ValueError("g_mode 'fixed' requires g_bound")
    if exp.cfg.g_mode == "genie":
        return max(float(np.linalg.norm(g)) for g in grads)
    return calibrate_g_bound(exp, task, devices)


def _frozen_setup(cfg: SystemConfig):
    exp = resolve(cfg)
    task = build_task(exp.train)
    devices = build_devices(exp)
    w0 = task.init_params(substream(exp.seed, STREAM_INIT))
    grads = round_gradients(task, w0, devices, exp, 0)
    g_bound = _resolve_g_bound(exp, task, devices, grads)
    return exp, grads, exp.power_config(g_bound)


def _divergence_trials(args) -> tuple[np.ndarray, np.ndarray]:
    cfg, lo, hi = args
    exp, grads, power = _frozen_setup(cfg)
    g_ideal = ideal_aggregate(grads)
    div = np.empty(hi - lo)
    skips = np.zeros(hi - lo, dtype=bool)
    for t in range(lo, hi):
        gen = substream(exp.seed, STREAM_MC_DIVERGENCE, t)
        draws = [
            draw_channel(exp.est, exp.distances[k], gen) for k in range(exp.k_devices)
        ]
        out = aggregate(grads, draws, exp.gamma_th, exp.rho, power, gen)
        diff = out.g_hat - g_ideal
        div[t - lo] = float(diff @ diff)
        skips[t - lo] = out.skipped
    return div, skips


def _trial_chunks(n: int, jobs: int) -> list[tuple[int, int]]:
    size = -(-n // max(jobs, 1))
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def _pmap(fn, items, jobs: int) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def mc_weight_divergence(cfg: SystemConfig, n_trials: int, jobs: int = 1) -> SweepResult:
    """Monte-Carlo E||g_hat - g||^2 with one round's gradients held fixed.

    Freezes the K mini-batch gradients of round zero, then repeats the
    over-the-air aggregation n_trials times with independent channel and
    noise draws (per-trial streams, so any jobs split reproduces the serial
    numbers exactly).  The row reports the MC estimate with its SE next to
    the exact expectation for those gradients and the a-priori bound.

    Rounds whose active set is empty contribute ||g||^2 and no noise (the
    skipped-round convention); their analytic probability (1 - e^-g)^K is
    reported in meta so the induced bias can be judged against the SE.
    """
    if n_trials < _MIN_TRIALS:
        raise ValueError(f"need at least {_MIN_TRIALS} trials, got {n_trials}")
    exp, grads, power = _frozen_setup(cfg)
    chunks = [(cfg, lo, hi) for lo, hi in _trial_chunks(n_trials, max(jobs, 1))]
    results = _pmap(_divergence_trials, chunks, jobs)
    div = np.concatenate([r[0] for r in results])
    skips = np.concatenate([r[1] for r in results])

    mean = float(np.mean(div))
    se = float(np.std(div, ddof=1) / math.sqrt(n_trials))
    energies = [float(g @ g) for g in grads]
    d_model = grads[0].shape[0]
    exact = divergence_exact(energies, exp.k_devices, exp.gamma_th, exp.rho, power, d_model)
    bound = divergence_bound(exp.k_devices, exp.gamma_th, exp.rho, power)
    zeta = scaling_zeta(exp.k_devices, exp.rho, power, exp.gamma_th)
    row = (
        exp.k_devices,
        exp.rho,
        exp.gamma_th,
        n_trials,
        mean,
        se,
        exact,
        bound,
        float(np.mean(skips)),
    )
    meta: dict[str, object] = {
        "d_model": d_model,
        "g_bound": power.g_bound,
        "zeta": zeta,
        "lam": compensation_lambda(exp.gamma_th, exp.rho),
        "sum_grad_sq": math.fsum(energies),
        "noise_term_exact": d_model * power.sigma2 / (2.0 * zeta * zeta),
        "skip_prob_analytic": (1.0 - math.exp(-exp.gamma_th)) ** exp.k_devices,
    }
    return SweepResult(
        columns=(
            "k_devices",
            "rho",
            "gamma_th",
            "n_trials",
            "divergence_mc",
            "divergence_se",
            "divergence_exact",
            "divergence_bound",
            "skip_fraction",
        ),
        rows=[row],
        meta=meta,
    )


def _basis_gradients(k_devices: int, d_model: int) -> list[np.ndarray]:
    grads = []
    for i in range(k_devices):
        g = np.zeros(d_model)
        g[i % d_model] = 1.0
        grads.append(g)
    return grads


def _slope_trials(args) -> tuple[np.ndarray, np.ndarray]:
    cfg, k, d_model, distance, lo, hi = args
    est = EstimationModel(rho=cfg.rho, alpha=cfg.alpha)
    power = PowerConfig(
        p_max=cfg.p_max,
        sigma2=dbm_to_watts(cfg.sigma2_dbm),
        g_bound=1.0,
        d_max_alpha=distance**cfg.alpha,
    )
    gamma_th = float(cfg.gamma_th)
    grads = _basis_gradients(k, d_model)
    g_ideal = ideal_aggregate(grads)
    div = np.empty(hi - lo)
    skips = np.zeros(hi - lo, dtype=bool)
    for t in range(lo, hi):
        gen = substream(cfg.seed, STREAM_MC_DIVERGENCE, k, t)
        draws = [draw_channel(est, distance, gen) for _ in range(k)]
        out = aggregate(grads, draws, gamma_th, cfg.rho, power, gen)
        diff = out.g_hat - g_ideal
        div[t - lo] = float(diff @ diff)
        skips[t - lo] = out.skipped
    return div, skips


def k_slope_scan(
    cfg: SystemConfig,
    ks: tuple[int, ...] = (5, 10, 20, 40),
    n_trials: int = 4000,
    jobs: int = 1,
    d_model: int = 10,
    distance: float = 100.0,
) -> SweepResult:
    """Informational K-scaling of the divergence at unit gradient norms.

    Every device transmits a fixed unit-norm gradient from a common
    distance, so only the fleet size varies across rows; the fitted log-log
    slope is reported in meta next to the slopes of the exact expression
    and of the printed bound (-2).  The exact expression's variance term
    scales as 1/K, its noise term as 1/K^2, so the fit lands between -1
    and -2 depending on which share dominates.
    """
    if n_trials < _MIN_TRIALS:
        raise ValueError(f"need at least {_MIN_TRIALS} trials, got {n_trials}")
    if len(ks) < 2:
        raise ValueError("need at least two fleet sizes for a slope")
    gamma_th = resolve(cfg).gamma_th
    base = replace(cfg, gamma_th=gamma_th)
    rows = []
    means = []
    exacts = []
    for k in ks:
        chunks = [
            (base, k, d_model, distance, lo, hi)
            for lo, hi in _trial_chunks(n_trials, max(jobs, 1))
        ]
        results = _pmap(_slope_trials, chunks, jobs)
        div = np.concatenate([r[0] for r in results])
        mean = float(np.mean(div))
        se = float(np.std(div, ddof=1) / math.sqrt(n_trials))
        power = PowerConfig(
            p_max=cfg.p_max,
            sigma2=dbm_to_watts(cfg.sigma2_dbm),
            g_bound=1.0,
            d_max_alpha=distance**cfg.alpha,
        )
        exact = divergence_exact([1.0] * k, k, gamma_th, cfg.rho, power, d_model)
        bound = divergence_bound(k, gamma_th, cfg.rho, power)
        rows.append((k, mean, se, exact, bound))
        means.append(mean)
        exacts.append(exact)

    log_k = np.log(np.asarray(ks, dtype=float))
    slope_mc = float(np.polyfit(log_k, np.log(means), 1)[0])
    slope_exact = float(np.polyfit(log_k, np.log(exacts), 1)[0])
    return SweepResult(
        columns=("k_devices", "divergence_mc", "divergence_se", "divergence_exact", "divergence_bound"),
        rows=rows,
        meta={
            "n_trials": n_trials,
            "gamma_th": gamma_th,
            "fitted_slope": slope_mc,
            "exact_slope": slope_exact,
            "bound_slope": -2.0,
            "supported_scaling": "1/K" if slope_mc > -1.5 else "1/K^2",
        },
    )


# ---------------------------------------------------------------------------
# threshold sweep (training runs)


_SWEEP_MODES = ("joint", "communication_oriented", "computation_oriented", "fixed")


def _train_cell(cfg: SystemConfig) -> tuple[float, float, float, float, float]:
    trace = train(cfg, mode="aircomp")
    exp = resolve(cfg)
    power = exp.power_config(trace.g_bound)
    bound = divergence_bound(exp.k_devices, exp.gamma_th, exp.rho, power)
    return (
        trace.final_accuracy,
        trace.mean_divergence_sq,
        float(trace.gamma_th),
        bound,
        trace.skipped_rounds / len(trace.records),
    )


def _computation_gamma(cfg: SystemConfig) -> float:
    # k2 never enters the computation-oriented objective; the probe power
    # config only feeds the k1 = (1 - rho^2)/(2 rho^2) path
    probe = PowerConfig(
        p_max=cfg.p_max, sigma2=dbm_to_watts(cfg.sigma2_dbm), g_bound=1.0, d_max_alpha=1.0
    )
    coef = coefficients_from_system(cfg.rho, probe)
    return optimal_threshold(coef, mode="computation_oriented").gamma_star


def sweep_threshold(
    cfg: SystemConfig,
    gammas,
    modes=_SWEEP_MODES,
    n_seeds: int = 3,
    jobs: int = 1,
) -> SweepResult:
    """Train across a threshold grid and the optimizer's operating points.

    'fixed' trains once per grid threshold; 'joint' resolves gamma* per
    repetition seed (the optimum depends on the drawn distances);
    'communication_oriented' pins 0.5 and 'computation_oriented' minimizes
    the CSI-error term alone.  Each row aggregates n_seeds repetitions into
    mean and standard error of the final test accuracy and of the measured
    per-round divergence.
    """
    gammas = [float(g) for g in gammas]
    if len(gammas) < 8:
        raise ValueError(f"threshold grid needs >= 8 points, got {len(gammas)}")
    if any(not (g > 0.0 and math.isfinite(g)) for g in gammas):
        raise ValueError("thresholds must be positive and finite")
    if n_seeds < 3:
        raise ValueError(f"need >= 3 repetition seeds, got {n_seeds}")
    modes = tuple(modes)
    if not modes:
        raise ValueError("no modes selected")
    for mode in modes:
        if mode not in _SWEEP_MODES:
            raise ValueError(f"unknown mode {mode!r}; choose from {_SWEEP_MODES}")

    groups: list[tuple[str, list[SystemConfig]]] = []
    for mode in modes:
        if mode == "fixed":
            for g in gammas:
                groups.append(
                    (mode, [replace(cfg, gamma_th=g, seed=cfg.seed + i) for i in range(n_seeds)])
                )
        elif mode == "joint":
            groups.append(
                (mode, [replace(cfg, gamma_th="optimize", seed=cfg.seed + i) for i in range(n_seeds)])
            )
        elif mode == "communication_oriented":
            groups.append(
                (mode, [replace(cfg, gamma_th=0.5, seed=cfg.seed + i) for i in range(n_seeds)])
            )
        else:
            g_comp = _computation_gamma(cfg)
            groups.append(
                (mode, [replace(cfg, gamma_th=g_comp, seed=cfg.seed + i) for i in range(n_seeds)])
            )

    cells = [c for _, cfgs in groups for c in cfgs]
    results = _pmap(_train_cell, cells, jobs)

    rows = []
    idx = 0
    for mode, cfgs in groups:
        part = results[idx : idx + len(cfgs)]
        idx += len(cfgs)
        accs = np.array([r[0] for r in part])
        divs = np.array([r[1] for r in part])
        gams = np.array([r[2] for r in part])
        bounds = np.array([r[3] for r in part])
        skipped = np.array([r[4] for r in part])
        n = len(part)
        rows.append(
            (
                mode,
                float(np.mean(gams)),
                float(np.mean(accs)),
                float(np.std(accs, ddof=1) / math.sqrt(n)),
                float(np.mean(divs)),
                float(np.std(divs, ddof=1) / math.sqrt(n)),
                float(np.mean(bounds)),
                float(np.mean(skipped)),
            )
        )

    return SweepResult(
        columns=(
            "mode",
            "gamma_th",
            "accuracy_mean",
            "accuracy_se",
            "divergence_mean",
            "divergence_se",
            "divergence_bound_mean",
            "skipped_fraction_mean",
        ),
        rows=rows,
        meta={
            "n_seeds": n_seeds,
            "rounds_m": cfg.train.rounds_m,
            "task": cfg.train.task,
            "modes": ",".join(modes),
            "gamma_grid": ",".join(repr(g) for g in gammas),
        },
    )


# ---------------------------------------------------------------------------
# training summary (convergence-bound report with estimated constants)


def convergence_report(cfg: SystemConfig, trace: TrainingTrace) -> dict[str, float] | None:
    """Convergence-bound evaluation with empirically estimated constants.

    Only the logistic task admits an honest smoothness constant (a quarter
    of the mean squared feature norm bounds the Hessian); the optimality
    gap is taken from the zero-initialization loss log 2 down to the best
    observed loss, and the gradient-variance level from the measured
    per-round spread.  Every entry is an estimate, not a certificate.
    """
    exp = resolve(cfg)
    if exp.train.task != "synthetic_logistic":
        return None
    devices = build_devices(exp)
    feats = np.concatenate([d.features for d in devices])
    l_hat = float(np.mean(np.sum(feats * feats, axis=1))) / 4.0
    if not exp.train.eta < 2.0 / l_hat:
        return None
    gap = max(math.log(2.0) - min(r.loss for r in trace.records), 1e-12)
    g_bound = trace.g_bound
    if g_bound is None:
        task = build_task(exp.train)
        g_bound = calibrate_g_bound(exp, task, devices)
    lc = LearningConstants(
        lipschitz_l=l_hat,
        eta=exp.train.eta,
        delta2=trace.delta2_hat,
        g_bound2=g_bound * g_bound,
        rounds_m=len(trace.records),
        f0_minus_fstar=gap,
    )
    delta2_total = trace.mean_divergence_sq + trace.delta2_hat
    return {
        "lipschitz_estimate": l_hat,
        "f0_gap_estimate": gap,
        "delta2_estimate": trace.delta2_hat,
        "divergence_mean": trace.mean_divergence_sq,
        "convergence_bound_estimate": convergence_bound(lc, delta2_total),
    }


# ---------------------------------------------------------------------------
# CSV and manifest emission


def _cell_text(v) -> str:
    v = _norm_cell(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell_text(v) for v in row])


def _parse_cell(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_sweep_csv(path) -> tuple[tuple[str, ...], list[tuple]]:
    """Inverse of the CSV writer; floats round-trip bit-exactly via repr."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            columns = tuple(next(reader))
        except StopIteration:
            raise ValueError(f"{path}: empty CSV") from None
        rows = [tuple(_parse_cell(c) for c in row) for row in reader]
    return columns, rows


def _git_blob_sha1(data: bytes) -> str:
    h = hashlib.sha1(b"blob %d\x00" % len(data))
    h.update(data)
    return h.hexdigest()


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("airfl")
    except Exception:
        return "unknown"


def write_manifest(
    path: Path,
    cfg: SystemConfig,
    extras: dict[str, str],
    command: str,
    csv_paths: list[Path],
    meta: dict[str, object],
    notes=(),
) -> None:
    kv = config_to_kv(cfg, extras)
    body = "".join(f"{k} = {v}\n" for k, v in kv)
    lines = [
        "# run manifest: the key=value body below replays this run verbatim",
        f"# command: {command}",
        f"# package_version: {_package_version()}",
        f"# config_sha1: {_git_blob_sha1(body.encode('utf-8'))}",
    ]
    for p in csv_paths:
        data = p.read_bytes()
        lines.append(f"# output: {p.name} sha1={_git_blob_sha1(data)} bytes={len(data)}")
    for key in sorted(meta):
        lines.append(f"# meta {key} = {_cell_text(meta[key])}")
    for note in notes:
        lines.append(f"# {note}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n" + body)


def report(
    result: SweepResult,
    out_dir,
    name: str,
    cfg: SystemConfig,
    command: str,
    extras: dict[str, str] | None = None,
    notes=(),
) -> dict[str, Path]:
    """Write a SweepResult as <name>.csv plus <name>_manifest.txt.

    The manifest's key=value body is a loadable config that replays the run
    bit-identically; its comment lines record the command, a git-style blob
    hash of the config body and of each CSV, the meta summaries, and any
    caller notes (gate verdicts, for instance).
    """
    if not result.rows:
        raise ValueError("empty result; nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    write_csv(csv_path, result.columns, result.rows)
    manifest_path = out / f"{name}_manifest.txt"
    write_manifest(manifest_path, cfg, extras or {}, command, [csv_path], result.meta, notes)
    return {"csv": csv_path, "manifest": manifest_path}
