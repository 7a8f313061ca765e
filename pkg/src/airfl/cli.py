"""Command-line harness.

Subcommands mirror the verification workflow: `verify-xi`, `verify-pdf`,
and `verify-divergence` run the Monte-Carlo checks against the closed forms
and exit nonzero when any gate fails; `optimize-threshold` solves for the
truncation threshold; `sweep-threshold` trains across a threshold grid; and
`train` runs a single federated experiment.

Every command accepts `--config` (key=value file; a previously written
manifest is itself a valid config and replays the run bit-identically),
`--seed`, `--trials`, `--out`, `--format csv`, and `--jobs`.  Grid and mode
knobs that have no dedicated flag travel as dotted config keys, e.g.
`verify_xi.rhos = 0.5,0.8`, `sweep.gammas = 0.05,...`, `run.mode = ideal`.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import SystemConfig, load_config, resolve, resolved_to_config
from .fltrain import train
from .harness import (
    SweepResult,
    cdf_pdf_consistency,
    convergence_report,
    k_slope_scan,
    mc_joint_distribution_check,
    mc_weight_divergence,
    mc_xi_moments,
    pdf_normalization,
    report,
    sweep_threshold,
    write_csv,
    write_manifest,
)
from .optimizer import coefficients_from_system, optimal_threshold

_XI_RHOS = (0.5, 0.8, 0.95, 1.0)
_XI_GAMMAS = (0.1, 0.5, 1.0, 2.0)
_PDF_T_RANGE = (-3.0, 3.0)
_PDF_GAMMA_RANGE = (-4.0, -0.1)
_SWEEP_GAMMAS = (0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.5, 3.0)
_SCAN_KS = (5, 10, 20, 40)


def _load(args) -> tuple[SystemConfig, dict[str, str]]:
    if args.config:
        cfg, extras = load_config(args.config)
    else:
        cfg, extras = SystemConfig(), {}
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    return cfg, extras


def _float_list(text: str | None) -> list[float] | None:
    if text is None:
        return None
    return [float(p) for p in (s.strip() for s in text.split(",")) if p]


def _str_list(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [p for p in (s.strip() for s in text.split(",")) if p]


def _emit_checks(checks: list[tuple[str, bool, str]]) -> tuple[bool, list[str]]:
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in checks]
    for line in lines:
        print(line)
    return all(ok for _, ok, _ in checks), lines


# ---------------------------------------------------------------------------
# verify-xi


def _cmd_verify_xi(args) -> int:
    cfg, extras = _load(args)
    n = cfg.trials if cfg.trials is not None else 10**6
    rhos = _float_list(extras.get("verify_xi.rhos")) or list(_XI_RHOS)
    gammas = _float_list(extras.get("verify_xi.gammas")) or list(_XI_GAMMAS)

    rows = []
    checks = []
    for rho in rhos:
        for gamma in gammas:
            r = mc_xi_moments(rho, gamma, n, cfg.seed)
            mean_ok = abs(r.mean - 1.0) <= 4.0 * r.se_mean
            var_ok = abs(r.variance - r.variance_closed) <= 4.0 * r.se_var
            rel = abs(r.variance - r.variance_closed) / r.variance_closed
            rel_ok = r.variance_closed <= 0.1 or rel < 0.02
            cell = f"rho={rho:g} gamma={gamma:g}"
            checks.append(
                (
                    f"xi_mean[{cell}]",
                    mean_ok,
                    f"mean={r.mean:.6f} se={r.se_mean:.2e}",
                )
            )
            checks.append(
                (
                    f"xi_var[{cell}]",
                    var_ok and rel_ok,
                    f"mc={r.variance:.6f} closed={r.variance_closed:.6f} "
                    f"se={r.se_var:.2e} rel={rel:.4f}",
                )
            )
            rows.append(
                (
                    rho,
                    gamma,
                    n,
                    r.mean,
                    r.se_mean,
                    r.variance,
                    r.se_var,
                    r.variance_closed,
                    r.active_fraction,
                    r.active_expected,
                )
            )

    result = SweepResult(
        columns=(
            "rho",
            "gamma_th",
            "n_samples",
            "mean_mc",
            "mean_se",
            "var_mc",
            "var_se",
            "var_closed",
            "active_fraction",
            "active_expected",
        ),
        rows=rows,
        meta={"n_samples": n},
    )
    ok, lines = _emit_checks(checks)
    if args.out:
        extras_out = dict(extras)
        extras_out.setdefault("verify_xi.rhos", ",".join(repr(r) for r in rhos))
        extras_out.setdefault("verify_xi.gammas", ",".join(repr(g) for g in gammas))
        report(
            result,
            args.out,
            "verify_xi",
            replace(cfg, trials=n),
            command="verify-xi",
            extras=extras_out,
            notes=lines,
        )
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# verify-pdf


def _cmd_verify_pdf(args) -> int:
    cfg, extras = _load(args)
    n = cfg.trials if cfg.trials is not None else 10**7
    t_range = tuple(_float_list(extras.get("verify_pdf.t_range")) or _PDF_T_RANGE)
    g_range = tuple(_float_list(extras.get("verify_pdf.gamma_range")) or _PDF_GAMMA_RANGE)
    bins = int(extras.get("verify_pdf.bins", 40))
    tail_gamma = float(extras.get("verify_pdf.tail_gamma", 1.0))

    result = mc_joint_distribution_check(g_range, t_range, n, cfg.seed, bins=bins, tail_gamma=tail_gamma)
    tv = result.meta["tv_distance"]
    norm = pdf_normalization()
    t_centers = 0.5 * (np.linspace(*t_range, bins + 1)[:-1] + np.linspace(*t_range, bins + 1)[1:])
    g_centers = 0.5 * (np.linspace(*g_range, bins + 1)[:-1] + np.linspace(*g_range, bins + 1)[1:])
    fd_worst = cdf_pdf_consistency(t_centers, g_centers)
    result.meta["pdf_normalization"] = norm
    result.meta["cdf_pdf_fd_worst"] = fd_worst

    p_tail = result.meta["tail_prob_mc"]
    se_tail = result.meta["tail_prob_se"]
    p_exp = result.meta["tail_prob_expected"]
    m2 = result.meta["cond_m2_mc"]
    m2_se = result.meta["cond_m2_se"]
    m2_exp = result.meta["cond_m2_expected"]
    checks = [
        ("pdf_tv_distance", tv < 0.02, f"tv={tv:.5f} limit=0.02 n={n}"),
        ("pdf_normalization", abs(norm - 1.0) <= 1e-6, f"integral={norm!r}"),
        ("cdf_pdf_consistency", fd_worst <= 1e-4, f"worst_abs_err={fd_worst:.3e} limit=1e-4"),
        (
            "truncation_tail",
            abs(p_tail - p_exp) <= 4.0 * se_tail,
            f"mc={p_tail:.6f} expected={p_exp:.6f} se={se_tail:.2e}",
        ),
        (
            "conditional_second_moment",
            abs(m2 - m2_exp) <= 4.0 * m2_se,
            f"mc={m2:.6f} expected={m2_exp:.6f} se={m2_se:.2e}",
        ),
    ]
    ok, lines = _emit_checks(checks)
    if args.out:
        extras_out = dict(extras)
        extras_out.setdefault("verify_pdf.t_range", ",".join(repr(t) for t in t_range))
        extras_out.setdefault("verify_pdf.gamma_range", ",".join(repr(g) for g in g_range))
        extras_out.setdefault("verify_pdf.bins", str(bins))
        extras_out.setdefault("verify_pdf.tail_gamma", repr(tail_gamma))
        report(
            result,
            args.out,
            "verify_pdf",
            replace(cfg, trials=n),
            command="verify-pdf",
            extras=extras_out,
            notes=lines,
        )
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# verify-divergence


def _cmd_verify_divergence(args) -> int:
    cfg, extras = _load(args)
    n = cfg.trials if cfg.trials is not None else 10**5
    do_scan = extras.get("verify_divergence.k_scan", "1") not in ("0", "false", "no")
    scan_trials = int(extras.get("verify_divergence.scan_trials", 4000))
    scan_ks = [int(k) for k in (_str_list(extras.get("verify_divergence.scan_ks")) or _SCAN_KS)]

    result = mc_weight_divergence(cfg, n, jobs=args.jobs)
    mc = result.column("divergence_mc")[0]
    se = result.column("divergence_se")[0]
    exact = result.column("divergence_exact")[0]
    bound = result.column("divergence_bound")[0]
    checks = [
        (
            "divergence_exact_4se",
            abs(mc - exact) <= 4.0 * se,
            f"mc={mc:.6e} exact={exact:.6e} se={se:.2e} bound={bound:.6e}",
        )
    ]
    ok, lines = _emit_checks(checks)

    scan = None
    if do_scan:
        scan = k_slope_scan(cfg, ks=tuple(scan_ks), n_trials=scan_trials, jobs=args.jobs)
        info = (
            f"INFO k_scaling: fitted_slope={scan.meta['fitted_slope']:.3f} "
            f"exact_slope={scan.meta['exact_slope']:.3f} bound_slope=-2.0 "
            f"supported={scan.meta['supported_scaling']}"
        )
        print(info)
        lines = lines + [info]

    if args.out:
        exp = resolve(cfg)
        cfg_pinned = replace(resolved_to_config(exp), trials=n)
        extras_out = dict(extras)
        extras_out.setdefault("verify_divergence.k_scan", "1" if do_scan else "0")
        extras_out.setdefault("verify_divergence.scan_trials", str(scan_trials))
        extras_out.setdefault("verify_divergence.scan_ks", ",".join(str(k) for k in scan_ks))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        main_csv = out / "verify_divergence.csv"
        write_csv(main_csv, result.columns, result.rows)
        csv_paths = [main_csv]
        meta = dict(result.meta)
        if scan is not None:
            scan_csv = out / "verify_divergence_kscan.csv"
            write_csv(scan_csv, scan.columns, scan.rows)
            csv_paths.append(scan_csv)
            meta.update({f"kscan_{k}": v for k, v in scan.meta.items()})
        write_manifest(
            out / "verify_divergence_manifest.txt",
            cfg_pinned,
            extras_out,
            "verify-divergence",
            csv_paths,
            meta,
            notes=lines,
        )
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# optimize-threshold


def _cmd_optimize_threshold(args) -> int:
    cfg, extras = _load(args)
    exp = resolve(cfg)
    coef = coefficients_from_system(exp.rho, exp.power_config(1.0))
    solutions = [optimal_threshold(coef, mode="joint"), optimal_threshold(coef, mode="communication_oriented")]
    if coef.k1 > 0.0:
        solutions.append(optimal_threshold(coef, mode="computation_oriented"))

    print(f"k1 = {coef.k1!r}")
    print(f"k2 = {coef.k2!r}")
    rows = []
    for sol in solutions:
        print(
            f"{sol.mode}: gamma = {sol.gamma_star!r}  h = {sol.h_value!r}  "
            f"h' = {sol.derivative_residual:.3e}  iterations = {sol.iterations}"
        )
        rows.append(
            (sol.mode, sol.gamma_star, sol.h_value, sol.derivative_residual, sol.iterations, coef.k1, coef.k2)
        )

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "optimize_threshold.csv"
        write_csv(
            csv_path,
            ("mode", "gamma_th", "h_value", "derivative_residual", "iterations", "k1", "k2"),
            rows,
        )
        write_manifest(
            out / "optimize_threshold_manifest.txt",
            resolved_to_config(exp),
            extras,
            "optimize-threshold",
            [csv_path],
            {"k1": coef.k1, "k2": coef.k2},
        )
    return 0


# ---------------------------------------------------------------------------
# sweep-threshold


def _cmd_sweep_threshold(args) -> int:
    cfg, extras = _load(args)
    gammas = _float_list(extras.get("sweep.gammas")) or list(_SWEEP_GAMMAS)
    default_modes = ["joint", "communication_oriented", "computation_oriented", "fixed"]
    if cfg.rho == 1.0:
        default_modes.remove("computation_oriented")
    modes = _str_list(extras.get("sweep.modes")) or default_modes
    n_seeds = int(extras.get("sweep.seeds", 3))

    result = sweep_threshold(cfg, gammas, modes=tuple(modes), n_seeds=n_seeds, jobs=args.jobs)
    for row in result.rows:
        cells = ", ".join(f"{c}={_round_for_print(v)}" for c, v in zip(result.columns, row))
        print(cells)

    if args.out:
        extras_out = dict(extras)
        extras_out.setdefault("sweep.gammas", ",".join(repr(g) for g in gammas))
        extras_out.setdefault("sweep.modes", ",".join(modes))
        extras_out.setdefault("sweep.seeds", str(n_seeds))
        report(
            result,
            args.out,
            "sweep_threshold",
            cfg,
            command="sweep-threshold",
            extras=extras_out,
        )
    return 0


def _round_for_print(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# ---------------------------------------------------------------------------
# train


def _cmd_train(args) -> int:
    cfg, extras = _load(args)
    mode = extras.get("run.mode", "aircomp")
    trace = train(cfg, mode=mode)
    exp = resolve(cfg)

    last = trace.records[-1]
    print(f"mode = {mode}")
    if trace.gamma_th is not None:
        print(f"gamma_th = {trace.gamma_th!r}")
        print(f"g_bound = {trace.g_bound!r}")
    print(f"final_loss = {last.loss!r}")
    print(f"final_accuracy = {last.accuracy!r}")
    print(f"mean_divergence_sq = {trace.mean_divergence_sq!r}")
    print(f"skipped_rounds = {trace.skipped_rounds}")
    conv = convergence_report(cfg, trace)
    if conv is not None:
        print("convergence bound with estimated constants (not a certificate):")
        for key, value in conv.items():
            print(f"  {key} = {value!r}")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "train_trace.csv"
        rows = [
            (
                r.round_index,
                r.loss,
                r.accuracy,
                r.divergence_sq,
                r.grad_spread_sq,
                r.active_count,
                int(r.skipped),
            )
            for r in trace.records
        ]
        write_csv(
            csv_path,
            ("round", "loss", "accuracy", "divergence_sq", "grad_spread_sq", "active_count", "skipped"),
            rows,
        )
        extras_out = dict(extras)
        extras_out.setdefault("run.mode", mode)
        meta: dict[str, object] = {
            "final_loss": last.loss,
            "final_accuracy": last.accuracy,
            "mean_divergence_sq": trace.mean_divergence_sq,
            "skipped_rounds": trace.skipped_rounds,
        }
        if conv is not None:
            meta.update(conv)
        write_manifest(
            out / "train_manifest.txt",
            resolved_to_config(exp, g_bound=trace.g_bound),
            extras_out,
            "train",
            [csv_path],
            meta,
        )
    return 0


# ---------------------------------------------------------------------------
# entry point


_COMMANDS = (
    ("verify-xi", _cmd_verify_xi, "Monte-Carlo check of the aggregation-coefficient moments"),
    ("verify-pdf", _cmd_verify_pdf, "Monte-Carlo and quadrature check of the joint (x, y) law"),
    ("verify-divergence", _cmd_verify_divergence, "frozen-gradient weight-divergence check"),
    ("optimize-threshold", _cmd_optimize_threshold, "solve for the truncation threshold"),
    ("sweep-threshold", _cmd_sweep_threshold, "train across a threshold grid and optimizer modes"),
    ("train", _cmd_train, "run one federated training experiment"),
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file (a written manifest replays its run)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--trials", type=int, default=None, help="override the sample/trial count")
    p.add_argument("--out", default=None, help="directory for CSV and manifest output")
    p.add_argument("--format", choices=("csv",), default="csv", help="output format")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="airfl",
        description="over-the-air federated learning: closed forms vs Monte Carlo",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_text in _COMMANDS:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.set_defaults(func=fn)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
