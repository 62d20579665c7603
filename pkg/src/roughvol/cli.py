"""Batch command-line interface wiring the full pipeline.

Subcommands: ``synth-chain``, ``price``, ``calibrate``, ``bootstrap``,
``sensitivity``, ``significance``, ``report``. Every command reads its inputs from
flags and/or a ``--config`` JSON file (flags win), writes its declared artifacts into
the ``--out`` directory atomically (temp file + rename), and emits nothing
non-deterministic: no timestamps, no environment echoes, fixed float formatting. Two
runs with the same inputs are byte-identical, at any ``--threads`` value.

Failures print a machine-readable ``{"error": ..., "message": ...}`` JSON object to
stderr and exit with code 1 (argparse usage errors keep their conventional code 2).
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bootstrap import (BootstrapPlan, bootstrap_statistics, export_scatter_matrix,
                        run_bootcalibrations)
from .calibration import (CalibrationConfig, ParamBounds, calibrate, format_pct)
from .market import load_chain, write_chain
from .model import PARAM_NAMES, MarketEnv, ModelParams
from .pricing import ESTIMATORS, ChainPricingRequest, price_chain
from .stats import sensitivity_analysis, significance_test
from .synth import generate_chain

__all__ = ["main", "build_parser"]

log = logging.getLogger("roughvol")

_LOG_LEVELS = ("debug", "info", "warning", "error")


# ---------------------------------------------------------------------------
# plumbing


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    log.info("wrote %s", path)


def _atomic_json(path: Path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _read_json(path) -> dict:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return data


class _Settings:
    """Flag/config merge: a CLI flag that was actually given beats the config key."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config: dict = {}
        if getattr(args, "config", None):
            self.config = _read_json(args.config)

    def get(self, name: str, default=None):
        cli = getattr(self.args, name, None)
        if cli is not None:
            return cli
        return self.config.get(name, default)

    def require(self, name: str):
        value = self.get(name)
        if value is None:
            flag = "--" + name.replace("_", "-")
            raise ValueError(f"missing required input {name!r} (flag {flag} or config key)")
        return value

    @property
    def seed(self) -> int:
        return int(self.get("seed", 0))

    @property
    def threads(self) -> int:
        if self.args.threads is not None:
            return max(1, self.args.threads)
        env = os.environ.get("ROUGHVOL_THREADS")
        if env:
            return max(1, int(env))
        if "threads" in self.config:
            return max(1, int(self.config["threads"]))
        return max(1, os.cpu_count() or 1)

    @property
    def outdir(self) -> Path:
        out = Path(self.get("out", "."))
        out.mkdir(parents=True, exist_ok=True)
        return out


def _resolve_theta(settings: _Settings) -> ModelParams:
    """Model parameters from --params JSON, config 'theta' block, and/or flags."""
    values: dict = {}
    params_file = settings.get("params")
    if params_file:
        data = _read_json(params_file)
        theta = data.get("theta", data)
        values.update({k: float(theta[k]) for k in PARAM_NAMES if k in theta})
    cfg_theta = settings.config.get("theta", {})
    values.update({k: float(cfg_theta[k]) for k in PARAM_NAMES if k in cfg_theta})
    for name in PARAM_NAMES:
        cli = getattr(settings.args, name, None)
        if cli is not None:
            values[name] = float(cli)
    missing = [n for n in PARAM_NAMES if n not in values]
    if missing:
        raise ValueError(
            f"model parameters missing: {', '.join(missing)}; pass --sigma0/--rho/"
            "--hurst/--xi/--alpha, a config 'theta' block, or --params <file.json>")
    return ModelParams(**values)


def _resolve_bounds(settings: _Settings) -> ParamBounds:
    bounds = ParamBounds.default()
    overrides = settings.config.get("bounds")
    if not overrides:
        return bounds
    lower, upper = bounds.lower.copy(), bounds.upper.copy()
    for name, pair in overrides.items():
        if name not in PARAM_NAMES:
            raise ValueError(f"unknown parameter {name!r} in bounds config")
        i = PARAM_NAMES.index(name)
        lower[i], upper[i] = float(pair[0]), float(pair[1])
    return ParamBounds(lower=lower, upper=upper)


def _calibration_config(settings: _Settings) -> CalibrationConfig:
    variant = settings.get("variant", settings.config.get("model_variant", "alphaRFSV"))
    return CalibrationConfig(
        bounds=_resolve_bounds(settings),
        ga_population=int(settings.get("ga_population", 150)),
        ga_generations=int(settings.get("ga_generations", 5)),
        obj_tol=float(settings.get("obj_tol", 1e-6)),
        step_tol=float(settings.get("step_tol", 1e-7)),
        path_count=int(settings.get("path_count", 20_000)),
        steps_per_year=int(settings.get("steps_per_year", 1008)),
        seed=settings.seed,
        weight_rule=settings.get("weight_rule", "inv_spread_sq"),
        model_variant=variant,
        fd_rel_step=float(settings.get("fd_rel_step", 1e-4)),
        threads=settings.threads,
    )


def _theta_dict(theta: ModelParams) -> dict:
    return {name: getattr(theta, name) for name in PARAM_NAMES}


def _comma_floats(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if str(x).strip()]


def _comma_ints(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if str(x).strip()]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_chain(args: argparse.Namespace) -> int:
    settings = _Settings(args)
    theta = _resolve_theta(settings)
    env = MarketEnv(spot=float(settings.require("spot")),
                    rate=float(settings.get("rate", 0.0)))
    strikes = settings.require("strikes")
    days = settings.require("maturity_days")
    if isinstance(strikes, str):
        strikes = _comma_floats(strikes)
    if isinstance(days, str):
        days = _comma_ints(days)
    trade_date = settings.get("trade_date")
    kwargs = {}
    if trade_date:
        kwargs["trade_date"] = dt.date.fromisoformat(str(trade_date))
    structure = generate_chain(
        theta, env, strikes, days,
        steps_per_year=int(settings.get("steps_per_year", 252)),
        path_count=int(settings.get("path_count", 100_000)),
        seed=settings.seed,
        rel_spread=float(settings.get("rel_spread", 0.01)),
        threads=settings.threads,
        weight_rule=settings.get("weight_rule", "inv_spread_sq"),
        **kwargs,
    )
    outdir = settings.outdir
    name = str(settings.get("name", "chain"))
    csv_path, sidecar = outdir / f"{name}.csv", outdir / f"{name}.json"
    tmp_csv = csv_path.with_name(csv_path.name + ".tmp")
    tmp_sidecar = sidecar.with_name(sidecar.name + ".tmp")
    write_chain(structure, tmp_csv, sidecar=tmp_sidecar)
    os.replace(tmp_csv, csv_path)
    os.replace(tmp_sidecar, sidecar)
    log.info("wrote %s and %s", csv_path, sidecar)
    _atomic_json(outdir / f"{name}.truth.json", {
        "theta": _theta_dict(theta), "spot": env.spot, "rate": env.rate,
        "seed": settings.seed, "rel_spread": float(settings.get("rel_spread", 0.01)),
        "quote_count": structure.n,
    })
    return 0


def cmd_price(args: argparse.Namespace) -> int:
    settings = _Settings(args)
    structure = load_chain(settings.require("chain"),
                           weight_rule=settings.get("weight_rule", "inv_spread_sq"))
    theta = _resolve_theta(settings)
    request = ChainPricingRequest(
        options=structure.options, env=structure.env, params=theta,
        path_count=int(settings.get("path_count", 100_000)),
        steps_per_year=int(settings.get("steps_per_year", 252)),
        seed=settings.seed,
        estimator=settings.get("estimator", "conditional_mixed"),
    )
    estimates = price_chain(request, threads=settings.threads)
    rows = [[repr(k), repr(t), repr(e.price), repr(e.std_error), str(e.path_count),
             e.estimator]
            for (k, t), e in zip(request.options, estimates)]
    _atomic_write(settings.outdir / "prices.csv", _csv_text(
        ["strike", "maturity", "price", "std_error", "path_count", "estimator"], rows))
    return 0


_ROW_HEADER = ["day", "sigma0", "rho", "H", "xi", "alpha", "aare", "mare", "wrss", "arfv"]


def cmd_calibrate(args: argparse.Namespace) -> int:
    settings = _Settings(args)
    config = _calibration_config(settings)
    structure = load_chain(settings.require("chain"), weight_rule=config.weight_rule)
    result = calibrate(structure, config)
    outdir = settings.outdir

    payload = result.to_dict()
    payload["variant"] = config.model_variant
    payload["trade_date"] = structure.trade_date.isoformat()
    payload["settings"] = {
        "ga_population": config.ga_population, "ga_generations": config.ga_generations,
        "path_count": config.path_count, "steps_per_year": config.steps_per_year,
        "weight_rule": config.weight_rule, "seed": config.seed,
    }
    _atomic_json(outdir / "calibration.json", payload)

    m = result.metrics
    row = [structure.trade_date.isoformat()]
    row += [repr(getattr(result.theta, name)) for name in PARAM_NAMES]
    row += [format_pct(m.aare), format_pct(m.mare), repr(result.objective),
            format_pct(m.arfv)]
    _atomic_write(outdir / "calibration_row.csv", _csv_text(_ROW_HEADER, [row]))
    return 0


def cmd_bootstrap(args: argparse.Namespace) -> int:
    settings = _Settings(args)
    config = _calibration_config(settings)
    structure = load_chain(settings.require("chain"), weight_rule=config.weight_rule)

    calibration_file = settings.get("calibration")
    if calibration_file:
        overall = ModelParams(**_read_json(calibration_file)["theta"])
    else:
        log.info("no --calibration given; running a full calibration first")
        overall = calibrate(structure, config).theta

    plan = BootstrapPlan(config=config, sample_count=int(settings.get("samples", 200)),
                         base_seed=settings.seed)
    results, failures = run_bootcalibrations(structure, plan, overall,
                                             threads=settings.threads)
    report = bootstrap_statistics(results, structure)
    report.failure_count = len(failures)
    outdir = settings.outdir

    payload = report.to_dict()
    payload["overall_theta"] = _theta_dict(overall)
    payload["sample_count"] = plan.sample_count
    payload["base_seed"] = plan.base_seed
    payload["failures"] = [[j, msg] for j, msg in failures]
    _atomic_json(outdir / "bootstrap.json", payload)

    option_rows = [[repr(q.strike), repr(q.maturity), repr(float(b)), repr(float(v))]
                   for q, b, v in zip(structure.quotes, report.bre, report.v)]
    _atomic_write(outdir / "bootstrap_options.csv",
                  _csv_text(["strike", "maturity", "bre", "v"], option_rows))

    theta_rows = [[repr(float(x)) for x in row] for row in report.theta_samples]
    _atomic_write(outdir / "bootstrap_theta.csv",
                  _csv_text(list(PARAM_NAMES), theta_rows))

    scatter = outdir / "scatter_matrix.txt"
    tmp = scatter.with_name(scatter.name + ".tmp")
    export_scatter_matrix(report.theta_samples, report.theta_hat,
                          overall.as_array(), tmp)
    os.replace(tmp, scatter)
    log.info("wrote %s", scatter)
    return 0


def cmd_sensitivity(args: argparse.Namespace) -> int:
    settings = _Settings(args)
    data = _read_json(settings.require("bootstrap"))
    alpha = float(settings.get("alpha", 0.05))
    results = sensitivity_analysis(np.asarray(data["theta_samples"], dtype=float),
                                   np.asarray(data["arfv_samples"], dtype=float),
                                   alpha_level=alpha)
    outdir = settings.outdir
    _atomic_json(outdir / "sensitivity.json",
                 {"alpha_level": alpha, "results": [r.to_dict() for r in results]})
    rows = [[r.parameter, repr(r.ks.statistic), repr(r.ks.p_value), str(r.reject)]
            for r in results]
    _atomic_write(outdir / "sensitivity.csv",
                  _csv_text(["parameter", "statistic", "p_value", "reject"], rows))
    return 0


def cmd_significance(args: argparse.Namespace) -> int:
    settings = _Settings(args)
    structure = load_chain(settings.require("chain"),
                           weight_rule=settings.get("weight_rule", "inv_spread_sq"))
    theta_full = ModelParams(**_read_json(settings.require("full"))["theta"])
    theta_restricted = ModelParams(**_read_json(settings.require("restricted"))["theta"])
    result = significance_test(
        structure, theta_full, theta_restricted,
        repetitions=int(settings.get("repetitions", 100)),
        path_count=int(settings.get("path_count", 20_000)),
        steps_per_year=int(settings.get("steps_per_year", 252)),
        base_seed=settings.seed, threads=settings.threads,
    )
    payload = result.to_dict()
    payload["theta_full"] = _theta_dict(theta_full)
    payload["theta_restricted"] = _theta_dict(theta_restricted)
    _atomic_json(settings.outdir / "significance.json", payload)
    return 0


def _md_table(header: list[str], rows: list[list[str]]) -> list[str]:
    out = ["| " + " | ".join(header) + " |",
           "|" + "|".join(" --- " for _ in header) + "|"]
    out += ["| " + " | ".join(row) + " |" for row in rows]
    return out


def cmd_report(args: argparse.Namespace) -> int:
    settings = _Settings(args)
    boot = _read_json(settings.require("bootstrap"))
    lines = ["# Rough volatility calibration report", ""]

    calibration_file = settings.get("calibration")
    if calibration_file:
        calib = _read_json(calibration_file)
        lines += [f"## Calibration ({calib.get('trade_date', 'n/a')}, "
                  f"variant {calib.get('variant', 'n/a')})", ""]
        lines += _md_table(["parameter", "value"],
                           [[n, f"{calib['theta'][n]:.6g}"] for n in PARAM_NAMES])
        lines.append("")
        m = calib.get("metrics")
        if m:
            lines += _md_table(
                ["AARE", "MARE", "ARFV", "MRFV", "WRSS"],
                [[format_pct(m["aare"]), format_pct(m["mare"]), format_pct(m["arfv"]),
                  format_pct(m["mrfv"]), f"{calib['objective']:.6g}"]])
            lines.append("")

    m_count = len(boot["aare_samples"])
    failures = int(boot.get("failure_count", 0))
    lines += [f"## Bootstrap robustness ({m_count} samples"
              + (f", {failures} failed" if failures else "") + ")", ""]
    ba = boot["boot_are"]
    lines += _md_table(
        ["Range", "IQR", "Std", "Rel IQR Avg", "Rel IQR Max"],
        [[format_pct(ba["range"]), format_pct(ba["iqr"]), format_pct(ba["std"]),
          format_pct(boot["rel_iqr_avg"]), format_pct(boot["rel_iqr_max"])]])
    lines.append("")
    lines.append("Boot-ARE columns summarize the spread of the per-sample average "
                 "relative errors; Rel IQR columns summarize the coefficient "
                 "interquartile ranges normalized by their averages.")
    lines.append("")
    lines += _md_table(["parameter", "bootstrap mean", "Rel IQR"],
                       [[n, f"{boot['theta_hat'][n]:.6g}",
                         format_pct(boot["rel_iqr"][n])] for n in PARAM_NAMES])
    lines.append("")
    bre = np.asarray(boot["bre"], dtype=float)
    v = np.asarray(boot["v"], dtype=float)
    lines += _md_table(["mean BRE", "max BRE", "mean V", "max V"],
                       [[format_pct(bre.mean()), format_pct(bre.max()),
                         f"{v.mean():.3g}", f"{v.max():.3g}"]])
    lines.append("")

    sensitivity_file = settings.get("sensitivity")
    if sensitivity_file:
        sens = _read_json(sensitivity_file)
        lines += [f"## Parameter sensitivity (alpha = {sens['alpha_level']:g})", ""]
        lines += _md_table(
            ["parameter", "D", "p-value", "reject"],
            [[r["parameter"], f"{r['statistic']:.4f}", f"{r['p_value']:.4g}",
              "yes" if r["reject"] else "no"] for r in sens["results"]])
        lines.append("")

    significance_file = settings.get("significance")
    if significance_file:
        sig = _read_json(significance_file)
        lines += ["## Model significance", ""]
        lines += _md_table(
            ["t", "dof", "p-value", "mean ARFV (full)", "mean ARFV (restricted)"],
            [[f"{sig['statistic']:.4f}", f"{sig['dof']:.2f}", f"{sig['p_value']:.4g}",
              format_pct(sig["mean_arfv_full"]), format_pct(sig["mean_arfv_restricted"])]])
        lines.append("")

    _atomic_write(settings.outdir / "report.md", "\n".join(lines).rstrip() + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file supplying defaults for this command")
    parser.add_argument("--seed", type=int, default=None, help="base RNG seed (default 0)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker pool size (default: ROUGHVOL_THREADS, else all cores)")
    parser.add_argument("--out", default=None, help="output directory (default: .)")
    parser.add_argument("--log-level", default="warning", choices=_LOG_LEVELS)


def _add_theta_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sigma0", type=float, default=None, dest="sigma0")
    parser.add_argument("--rho", type=float, default=None, dest="rho")
    parser.add_argument("--hurst", type=float, default=None, dest="H")
    parser.add_argument("--xi", type=float, default=None, dest="xi")
    parser.add_argument("--alpha", type=float, default=None, dest="alpha")
    parser.add_argument("--params", default=None,
                        help="JSON file with a 'theta' block (e.g. a calibration output)")


def _add_calibration_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--variant", default=None,
                        choices=["alphaRFSV", "RFSV", "rBergomi", "fixed_H"])
    parser.add_argument("--ga-population", type=int, default=None, dest="ga_population")
    parser.add_argument("--ga-generations", type=int, default=None, dest="ga_generations")
    parser.add_argument("--path-count", type=int, default=None, dest="path_count")
    parser.add_argument("--steps-per-year", type=int, default=None, dest="steps_per_year")
    parser.add_argument("--weight-rule", default=None, dest="weight_rule")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roughvol",
        description="Rough Volterra volatility: simulation, pricing, calibration, "
                    "and robustness analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-chain", help="generate a synthetic option chain")
    _add_common(p)
    _add_theta_flags(p)
    p.add_argument("--spot", type=float, default=None)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--strikes", default=None, help="comma-separated strikes")
    p.add_argument("--maturity-days", default=None, dest="maturity_days",
                   help="comma-separated integer day offsets")
    p.add_argument("--rel-spread", type=float, default=None, dest="rel_spread")
    p.add_argument("--steps-per-year", type=int, default=None, dest="steps_per_year")
    p.add_argument("--path-count", type=int, default=None, dest="path_count")
    p.add_argument("--trade-date", default=None, dest="trade_date")
    p.add_argument("--name", default=None, help="output basename (default: chain)")
    p.set_defaults(handler=cmd_synth_chain)

    p = sub.add_parser("price", help="price every quote in a chain at fixed parameters")
    _add_common(p)
    _add_theta_flags(p)
    p.add_argument("--chain", default=None, help="chain CSV (sidecar JSON alongside)")
    p.add_argument("--estimator", default=None, choices=list(ESTIMATORS))
    p.add_argument("--path-count", type=int, default=None, dest="path_count")
    p.add_argument("--steps-per-year", type=int, default=None, dest="steps_per_year")
    p.set_defaults(handler=cmd_price)

    p = sub.add_parser("calibrate", help="fit model parameters to a chain")
    _add_common(p)
    _add_calibration_flags(p)
    p.add_argument("--chain", default=None)
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("bootstrap", help="bootstrap robustness analysis of a calibration")
    _add_common(p)
    _add_calibration_flags(p)
    p.add_argument("--chain", default=None)
    p.add_argument("--samples", type=int, default=None,
                   help="number of bootstrap resamples (default: 200)")
    p.add_argument("--calibration", default=None,
                   help="calibration.json with the overall fit (skips recalibrating)")
    p.set_defaults(handler=cmd_bootstrap)

    p = sub.add_parser("sensitivity", help="per-parameter fit-sensitivity tests")
    _add_common(p)
    p.add_argument("--bootstrap", default=None, help="bootstrap.json from `bootstrap`")
    p.add_argument("--alpha", type=float, default=None,
                   help="rejection level (default: 0.05)")
    p.set_defaults(handler=cmd_sensitivity)

    p = sub.add_parser("significance", help="Welch test between two calibrated models")
    _add_common(p)
    p.add_argument("--chain", default=None)
    p.add_argument("--full", default=None, help="calibration.json of the full model")
    p.add_argument("--restricted", default=None,
                   help="calibration.json of the restricted model")
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--path-count", type=int, default=None, dest="path_count")
    p.add_argument("--steps-per-year", type=int, default=None, dest="steps_per_year")
    p.add_argument("--weight-rule", default=None, dest="weight_rule")
    p.set_defaults(handler=cmd_significance)

    p = sub.add_parser("report", help="render a Markdown summary of prior artifacts")
    _add_common(p)
    p.add_argument("--bootstrap", default=None, help="bootstrap.json (required)")
    p.add_argument("--calibration", default=None)
    p.add_argument("--sensitivity", default=None)
    p.add_argument("--significance", default=None)
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()),
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not crashes
        log.debug("command failed", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)},
                         sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
