"""Command-line driver: ``ovrp {fit,sensitivity,simulate,check,bvn-selftest}``.

Exit codes: 0 success, 1 data or configuration error, 2 the optimizer did not
converge from any start.  Errors go to stderr as one JSON object per line.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bvn import bvn_cdf, rect_grid
from .estimator import FitConfig, fit
from .io import (
    SCHEMA_VERSION, DataError, RunConfig, distribution_rows, fit_to_json, load_respondents, load_run_config,
    load_sim_config, load_strata, sensitivity_to_json, write_distribution_csv, write_json,
    write_simulation,
)
from .likelihood import CellTable, NonresponseDesign
from .model import free_names, validate_dataset
from .population import DistributionEstimate, baseline_proportions, distribution_estimates, \
    sensitivity_grid
from .simulate import draw_population

EXIT_OK, EXIT_DATA, EXIT_NONCONVERGED = 0, 1, 2

log = logging.getLogger("ovrp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise DataError("usage", message)


def _rates(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise DataError("usage", f"cannot parse rates {text!r}") from None


def _names(text: str) -> list:
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_data_args(p):
    p.add_argument("--config", help="TOML run manifest; flags override its values")
    p.add_argument("--respondents", help="respondent CSV")
    p.add_argument("--strata", help="strata CSV")
    p.add_argument("--output", "-o", help="result JSON path (stdout if omitted)")
    p.add_argument("--y-col")
    p.add_argument("--r-col")
    p.add_argument("--weight-col")
    p.add_argument("--x-cols", type=_names, help="comma-separated outcome covariates")
    p.add_argument("--z-cols", type=_names, help="comma-separated response covariates")
    p.add_argument("--categorical", type=_names, help="comma-separated categorical covariates")
    p.add_argument("--share-col")
    p.add_argument("--Y", type=int, dest="n_outcome", help="declared number of outcome categories")
    p.add_argument("--R", type=int, dest="n_proxy", help="declared number of proxy categories")
    p.add_argument("--no-intercepts", action="store_true")


def _add_fit_args(p):
    p.add_argument("--seed", type=int)
    p.add_argument("--n-restarts", type=int)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--gradient-tolerance", type=float)
    p.add_argument("--fix-rho", type=float, dest="fix_rho_at")
    p.add_argument("--no-conditional", action="store_true",
                   help="skip respondent / nonrespondent distributions")
    p.add_argument("--reweighted-nonresp", action="store_true",
                   help="aggregate conditional distributions with group-specific stratum shares")
    p.add_argument("--weighted-fit", action="store_true",
                   help="use survey weights as likelihood multiplicities")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ovrp", description="Ordinal variable-response-propensity estimator")
    parser.add_argument("--version", action="version", version=f"ovrp {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="single estimation, JSON result")
    _add_data_args(p)
    _add_fit_args(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--n-miss", type=float, help="number of unit nonrespondents")
    g.add_argument("--rate", type=float, help="nonresponse rate in [0, 1)")

    p = sub.add_parser("sensitivity", help="refit over a grid of nonresponse rates")
    _add_data_args(p)
    _add_fit_args(p)
    p.add_argument("--rates", type=_rates, help="comma-separated rates, e.g. 0.2,0.5,0.7")
    p.add_argument("--csv", dest="csv_output", help="long-format distribution CSV")

    p = sub.add_parser("simulate", help="draw a synthetic dataset from a simulation TOML")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--n-population", type=int)

    p = sub.add_parser("check", help="validate data and report")
    _add_data_args(p)

    p = sub.add_parser("bvn-selftest", help="accuracy report for the bivariate normal kernel")
    p.add_argument("--draws", type=int, default=2_000_000, help="Monte Carlo draws per triple")
    p.add_argument("--triples", type=int, default=10)
    p.add_argument("--seed", type=int, default=12345)
    return parser


def _run_config(args, command: str) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    cols = cfg.columns
    for attr, dest in (("y_col", "y"), ("r_col", "r"), ("weight_col", "weight"),
                       ("x_cols", "outcome"), ("z_cols", "response"),
                       ("categorical", "categorical"), ("n_outcome", "Y"), ("n_proxy", "R")):
        val = getattr(args, attr, None)
        if val is not None:
            setattr(cols, dest, val)
    if getattr(args, "no_intercepts", False):
        cols.include_intercepts = False
    for attr in ("respondents", "strata", "output", "csv_output"):
        val = getattr(args, attr, None)
        if val is not None:
            setattr(cfg, attr, val)
    if getattr(args, "share_col", None):
        cfg.share_column = args.share_col

    overrides = {k: getattr(args, k, None) for k in
                 ("seed", "n_restarts", "max_iterations", "gradient_tolerance", "fix_rho_at")}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        try:
            cfg.fit = replace(cfg.fit, **overrides)
        except ValueError as exc:
            raise DataError("config", str(exc)) from None
    if getattr(args, "no_conditional", False):
        cfg.emit_conditional = False
    if getattr(args, "reweighted_nonresp", False):
        cfg.reweighted_nonresp = True
    if getattr(args, "weighted_fit", False):
        cfg.weighted_fit = True

    # a flag-given nonresponse source replaces whatever the manifest declared
    flag_src = {"n_miss": getattr(args, "n_miss", None), "rate": getattr(args, "rate", None),
                "grid": getattr(args, "rates", None)}
    if any(v is not None for v in flag_src.values()):
        cfg.n_miss = cfg.rate = cfg.grid = None
        for k, v in flag_src.items():
            if v is not None:
                setattr(cfg, k, v)
    if command == "sensitivity" and cfg.grid is None and (cfg.n_miss is not None or cfg.rate is not None):
        raise DataError("config", "sensitivity needs --rates or [nonresponse] grid")
    if command != "check":
        cfg.check(command)
    return cfg


def _load(cfg: RunConfig):
    records, codebook = load_respondents(cfg.respondents, cfg.columns)
    strata, warn = load_strata(cfg.strata, codebook, cfg.share_column, cfg.strata_id_column)
    warnings = list(codebook.warnings) + warn
    x_only = set(cfg.columns.response) - set(cfg.columns.outcome)
    if not x_only:
        warnings.append("no response covariate is excluded from the outcome equation; "
                        "rho is identified by functional form and proxy variation only")
    return records, codebook, strata, warnings


def _baselines(records, Y) -> list:
    out = [DistributionEstimate("raw", baseline_proportions(records, "raw", Y))]
    if any(rec.weight != 1.0 for rec in records):
        out.append(DistributionEstimate("weighted", baseline_proportions(records, "weighted", Y)))
    return out


def _emit(doc, path):
    if path:
        write_json(path, doc)
    else:
        sys.stdout.write(json.dumps(doc, indent=2) + "\n")


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_check(args) -> int:
    cfg = _run_config(args, "check")
    if not cfg.respondents or not cfg.strata:
        raise DataError("config", "check needs --respondents and --strata")
    records, codebook, strata, warnings = _load(cfg)
    report = validate_dataset(records, strata, codebook.spec)
    report.warnings.extend(warnings)
    doc = {"schema_version": SCHEMA_VERSION, "report": report.to_dict(),
           "codebook": codebook.to_dict()}
    # only an explicit --output: the manifest's output path belongs to fit results
    _emit(doc, args.output)
    for err in report.errors:
        sys.stderr.write(json.dumps({"error": "validation", "message": err}) + "\n")
    return EXIT_OK if report.ok else EXIT_DATA


def _validated(cfg):
    records, codebook, strata, warnings = _load(cfg)
    report = validate_dataset(records, strata, codebook.spec)
    if not report.ok:
        raise DataError("validation", "; ".join(report.errors), errors=report.errors)
    cells = CellTable.from_records(records, codebook.spec, weighted=cfg.weighted_fit)
    return records, codebook, strata, warnings + report.warnings, cells


def cmd_fit(args) -> int:
    cfg = _run_config(args, "fit")
    records, codebook, strata, warnings, cells = _validated(cfg)
    nr = (NonresponseDesign(cfg.n_miss) if cfg.n_miss is not None
          else NonresponseDesign.from_rate(cells.n_resp, cfg.rate))
    names = _param_names(codebook)
    result = fit(cells, strata, nr, cfg.fit, names=names)
    dists, dwarn = distribution_estimates(result, strata, cfg.reweighted_nonresp,
                                          cfg.emit_conditional)
    doc = fit_to_json(result, _baselines(records, codebook.Y) + dists, codebook,
                      warnings + dwarn, _timestamp())
    _emit(doc, cfg.output)
    if not any(result.restart_converged):
        sys.stderr.write(json.dumps({"error": "nonconvergence",
                                     "message": "optimizer did not converge from any start"}) + "\n")
        return EXIT_NONCONVERGED
    return EXIT_OK


def _param_names(codebook):
    return free_names(codebook.spec, codebook.names("outcome"), codebook.names("response"))


def cmd_sensitivity(args) -> int:
    cfg = _run_config(args, "sensitivity")
    records, codebook, strata, warnings, cells = _validated(cfg)
    results = sensitivity_grid(cells, strata, cfg.grid, cfg.fit, cfg.reweighted_nonresp,
                               cfg.emit_conditional)
    names = _param_names(codebook)
    results = [replace(r, fit=replace(r.fit, names=tuple(names)),
                       warnings=tuple(warnings) + r.warnings) for r in results]
    baselines = _baselines(records, codebook.Y)
    _emit(sensitivity_to_json(results, codebook, baselines, _timestamp()), cfg.output)
    csv_path = cfg.csv_output or (str(Path(cfg.output).with_suffix(".csv")) if cfg.output else None)
    if csv_path:
        write_distribution_csv(csv_path, distribution_rows(results, baselines))
    if not all(any(r.fit.restart_converged) for r in results):
        sys.stderr.write(json.dumps({"error": "nonconvergence", "message": "rates "
                                     + str([r.rate for r in results
                                            if not any(r.fit.restart_converged)])
                                     + " did not converge"}) + "\n")
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_simulate(args) -> int:
    plan = load_sim_config(args.config)
    if args.seed is not None or args.n_population is not None:
        plan = replace(plan, config=replace(
            plan.config,
            seed=plan.config.seed if args.seed is None else args.seed,
            n_population=plan.config.n_population if args.n_population is None else args.n_population))
    out = draw_population(plan.config)
    doc = write_simulation(plan, out, args.output_dir)
    sys.stdout.write(json.dumps({"output_dir": str(args.output_dir),
                                 "n_respondents": doc["n_respondents"],
                                 "n_miss": doc["n_miss"]}) + "\n")
    return EXIT_OK


def bvn_selftest(draws: int = 2_000_000, triples: int = 10, seed: int = 12345) -> dict:
    """Closed-form and Monte Carlo checks of the kernel; returns a report dict."""
    checks = []
    for rho in (-0.95, -0.5, 0.0, 0.49, 0.5, 0.95):
        exact = 0.25 + math.asin(rho) / (2 * math.pi)
        err = abs(bvn_cdf(0.0, 0.0, rho) - exact)
        checks.append({"kind": "closed-form", "rho": rho, "abs_error": err, "ok": err <= 1e-9})
    rng = np.random.default_rng(seed)
    tol = 4.0 * 0.5 / math.sqrt(draws) + 1e-4
    for _ in range(triples):
        a, b = rng.uniform(-2, 2, 2)
        rho = float(rng.uniform(-0.95, 0.95))
        e1 = rng.standard_normal(draws // 2)
        e2 = rng.standard_normal(draws // 2)
        sq = math.sqrt(1 - rho * rho)
        hits = 0
        for s in (1.0, -1.0):
            x, y = s * e1, rho * s * e1 + sq * s * e2
            hits += int(np.count_nonzero((x <= a) & (y <= b)))
        mc = hits / (2 * (draws // 2))
        err = abs(bvn_cdf(a, b, rho) - mc)
        checks.append({"kind": "monte-carlo", "a": a, "b": b, "rho": rho, "abs_error": err,
                       "ok": err <= tol})
    grid = np.array([-np.inf, -1.0, 0.0, 0.7, np.inf])
    total = float(rect_grid(grid, grid, 0.6).sum())
    checks.append({"kind": "partition", "abs_error": abs(total - 1.0), "ok": abs(total - 1.0) <= 1e-9})
    return {"ok": all(c["ok"] for c in checks), "checks": checks}


def cmd_bvn_selftest(args) -> int:
    t0 = time.perf_counter()
    report = bvn_selftest(args.draws, args.triples, args.seed)
    report["seconds"] = time.perf_counter() - t0
    sys.stdout.write(json.dumps(report, indent=2) + "\n")
    return EXIT_OK if report["ok"] else EXIT_DATA


COMMANDS = {"fit": cmd_fit, "sensitivity": cmd_sensitivity, "simulate": cmd_simulate,
            "check": cmd_check, "bvn-selftest": cmd_bvn_selftest}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except DataError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return EXIT_DATA
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return EXIT_DATA
    except ValueError as exc:
        sys.stderr.write(json.dumps({"error": "invalid-argument", "message": str(exc)}) + "\n")
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
