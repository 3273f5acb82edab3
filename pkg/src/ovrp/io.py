"""CSV ingestion, categorical expansion, run configuration and result writers."""
from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from io import StringIO
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import tomli
import tomli_w

from .design import Factor, cross_strata, design_names, effects_vector
from .estimator import FitConfig, FitResult
from .model import ModelSpec, ParamSet, RespondentRecord, Stratum
from .population import DistributionEstimate, SensitivityResult
from .simulate import SimConfig, SimOutput

__all__ = [
    "SCHEMA_VERSION",
    "DataError",
    "ColumnMapping",
    "Codebook",
    "RunConfig",
    "load_respondents",
    "load_strata",
    "load_run_config",
    "load_sim_config",
    "write_simulation",
    "fit_to_json",
    "sensitivity_to_json",
    "distribution_rows",
    "write_json",
    "write_distribution_csv",
    "atomic_write",
]

SCHEMA_VERSION = "1.0"
CSV_COLUMNS = ("target", "rate", "category", "proportion", "se")


class DataError(ValueError):
    """Bad input data or configuration; carries a machine-readable code."""

    def __init__(self, code: str, message: str, **context):
        super().__init__(message)
        self.code = code
        self.context = context

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self), "context": self.context}


@dataclass
class ColumnMapping:
    y: str = "y"
    r: str = "r"
    weight: str | None = None
    outcome: list = field(default_factory=list)
    response: list = field(default_factory=list)
    categorical: list = field(default_factory=list)
    levels: dict = field(default_factory=dict)
    include_intercepts: bool = True
    Y: int | None = None
    R: int | None = None

    @property
    def covariates(self) -> list:
        seen = []
        for c in list(self.outcome) + list(self.response):
            if c not in seen:
                seen.append(c)
        return seen


@dataclass
class Codebook:
    """Reference levels and design-column names shared by respondents and strata."""

    levels: dict
    mapping: ColumnMapping
    Y: int = 0
    R: int = 0
    warnings: list = field(default_factory=list)

    def names(self, equation: str) -> list:
        cols = self.mapping.outcome if equation == "outcome" else self.mapping.response
        out = ["(intercept)"] if self.mapping.include_intercepts else []
        for c in cols:
            if c in self.levels:
                out.extend(f"{c}={lv}" for lv in self.levels[c][1:])
            else:
                out.append(c)
        return out

    def encode(self, values: dict, equation: str) -> tuple:
        cols = self.mapping.outcome if equation == "outcome" else self.mapping.response
        row = [1.0] if self.mapping.include_intercepts else []
        for c in cols:
            if c in self.levels:
                row.extend(1.0 if values[c] == lv else 0.0 for lv in self.levels[c][1:])
            else:
                row.append(float(values[c]))
        return tuple(row)

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(Y=self.Y, R=self.R, dx=len(self.names("outcome")),
                         dz=len(self.names("response")))

    def to_dict(self) -> dict:
        return {"levels": self.levels, "outcome_columns": self.names("outcome"),
                "response_columns": self.names("response"), "Y": self.Y, "R": self.R}


def _read_csv(path) -> tuple[list, list]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            rows = list(reader)
    except FileNotFoundError:
        raise DataError("file-not-found", f"{path}: no such file", path=str(path)) from None
    except UnicodeDecodeError as exc:
        raise DataError("encoding", f"{path}: not UTF-8 ({exc})", path=str(path)) from None
    if not header:
        raise DataError("empty-file", f"{path}: file is empty", path=str(path))
    if not rows:
        raise DataError("empty-file", f"{path}: header but no data rows", path=str(path))
    return [h.strip() for h in header], rows


def _parse_int(raw: str, row: int, col: str, path) -> int:
    try:
        val = float(raw)
    except ValueError:
        raise DataError("schema-mismatch", f"{path}: row {row}, column {col!r}: "
                        f"{raw!r} is not an integer", row=row, column=col) from None
    if not val.is_integer():
        raise DataError("schema-mismatch", f"{path}: row {row}, column {col!r}: "
                        f"{raw!r} is not an integer", row=row, column=col)
    return int(val)


def _parse_float(raw: str, row: int, col: str, path) -> float:
    try:
        val = float(raw)
    except ValueError:
        raise DataError("schema-mismatch", f"{path}: row {row}, column {col!r}: "
                        f"{raw!r} is not numeric", row=row, column=col) from None
    if not math.isfinite(val):
        raise DataError("schema-mismatch", f"{path}: row {row}, column {col!r}: non-finite value",
                        row=row, column=col)
    return val


def _check_categories(values: list, rows: list, declared: int | None, col: str, path) -> int:
    for v, row in zip(values, rows):
        if v < 1 or (declared is not None and v > declared):
            bound = f"1..{declared}" if declared is not None else ">= 1"
            raise DataError("category-out-of-range", f"{path}: row {row}, column {col!r}: "
                            f"code {v} outside {bound}", row=row, column=col, value=v)
    if declared is not None:
        return declared
    top = max(values)
    missing = sorted(set(range(1, top + 1)) - set(values))
    if missing:
        raise DataError("non-consecutive-codes", f"{path}: column {col!r} codes are not "
                        f"consecutive from 1 (missing {missing})", column=col, missing=missing)
    return top


def load_respondents(path, mapping: ColumnMapping):
    """Read the respondent CSV; returns ``(records, codebook)``.

    Row numbers in messages count the header as row 1.  Rows with a blank
    outcome or proxy are dropped and listed in ``codebook.warnings``.
    """
    header, rows = _read_csv(path)
    needed = [mapping.y, mapping.r] + mapping.covariates + ([mapping.weight] if mapping.weight else [])
    absent = [c for c in needed if c not in header]
    if absent:
        raise DataError("schema-mismatch", f"{path}: missing columns {absent}", missing=absent)
    unknown_cat = [c for c in mapping.categorical if c not in mapping.covariates]
    if unknown_cat:
        raise DataError("schema-mismatch", f"categorical columns {unknown_cat} are not covariates")

    kept, dropped = [], []
    for i, raw in enumerate(rows, start=2):
        if not (raw.get(mapping.y) or "").strip() or not (raw.get(mapping.r) or "").strip():
            dropped.append(i)
        else:
            kept.append((i, raw))
    if not kept:
        raise DataError("empty-file", f"{path}: no rows with both outcome and proxy present")

    row_ids = [i for i, _ in kept]
    ys = [_parse_int(raw[mapping.y].strip(), i, mapping.y, path) for i, raw in kept]
    rs = [_parse_int(raw[mapping.r].strip(), i, mapping.r, path) for i, raw in kept]
    Y = _check_categories(ys, row_ids, mapping.Y, mapping.y, path)
    R = _check_categories(rs, row_ids, mapping.R, mapping.r, path)
    if Y < 2:
        raise DataError("schema-mismatch", f"{path}: outcome needs at least two categories")

    levels = {}
    for c in mapping.categorical:
        observed = []
        for i, raw in kept:
            v = (raw[c] or "").strip()
            if not v:
                raise DataError("missing-value", f"{path}: row {i}, column {c!r} is blank",
                                row=i, column=c)
            if v not in observed:
                observed.append(v)
        declared = [str(v) for v in mapping.levels.get(c, [])]
        if declared:
            extra = [v for v in observed if v not in declared]
            if extra:
                raise DataError("unknown-level", f"{path}: column {c!r} has levels {extra} "
                                f"not in the declared list", column=c, levels=extra)
            levels[c] = declared
        else:
            levels[c] = observed

    codebook = Codebook(levels=levels, mapping=mapping, Y=Y, R=R)
    if dropped:
        codebook.warnings.append(f"dropped {len(dropped)} rows with missing outcome or proxy: "
                                 f"rows {dropped[:20]}{' ...' if len(dropped) > 20 else ''}")
    numeric = [c for c in mapping.covariates if c not in levels]
    records = []
    for (i, raw), y, r in zip(kept, ys, rs):
        values = {c: (raw[c] or "").strip() for c in levels}
        values.update({c: _parse_float((raw[c] or "").strip(), i, c, path) for c in numeric})
        w = 1.0
        if mapping.weight:
            w = _parse_float((raw[mapping.weight] or "").strip(), i, mapping.weight, path)
            if w < 0:
                raise DataError("schema-mismatch", f"{path}: row {i}: negative weight", row=i)
        records.append(RespondentRecord(y, r, codebook.encode(values, "outcome"),
                                        codebook.encode(values, "response"), w))
    return records, codebook


def load_strata(path, codebook: Codebook, share_column: str = "share",
                id_column: str | None = None):
    """Read the strata CSV with the respondents' codebook; returns ``(strata, warnings)``.

    Shares summing to within 1e-3 of one are renormalized with a warning;
    anything further off is an error.  Zero-share rows are dropped.
    """
    header, rows = _read_csv(path)
    mapping = codebook.mapping
    needed = [share_column] + mapping.covariates + ([id_column] if id_column else [])
    absent = [c for c in needed if c not in header]
    if absent:
        raise DataError("schema-mismatch", f"{path}: missing columns {absent}", missing=absent)
    warnings = []
    entries = []
    for i, raw in enumerate(rows, start=2):
        share = _parse_float((raw[share_column] or "").strip(), i, share_column, path)
        if share < 0:
            raise DataError("share-sum", f"{path}: row {i}: negative share", row=i)
        values = {}
        for c in mapping.covariates:
            v = (raw[c] or "").strip()
            if c in codebook.levels:
                if v not in codebook.levels[c]:
                    raise DataError("unidentified-level", f"{path}: row {i}, column {c!r}: "
                                    f"unidentified level {v!r} (never observed among respondents)",
                                    row=i, column=c, level=v)
                values[c] = v
            else:
                values[c] = _parse_float(v, i, c, path)
        sid = (raw[id_column].strip() if id_column
               else "|".join(str(values[c]) for c in mapping.covariates) or f"row{i}")
        entries.append((sid, values, share, i))

    total = sum(e[2] for e in entries)
    if abs(total - 1.0) > 1e-3:
        raise DataError("share-sum", f"{path}: shares sum to {total:.6g}, not 1", share_sum=total)
    if abs(total - 1.0) > 1e-12:
        warnings.append(f"strata shares sum to {total:.6g}; renormalized to 1")
    else:
        total = 1.0  # rounding noise only; keep the shares bit-exact
    zero = [e[3] for e in entries if e[2] == 0]
    if zero:
        warnings.append(f"dropped {len(zero)} zero-share strata (rows {zero})")
    strata = [
        Stratum(id=sid, x=codebook.encode(vals, "outcome"), z=codebook.encode(vals, "response"),
                share=share / total, labels={k: str(v) for k, v in vals.items()})
        for sid, vals, share, _ in entries if share > 0
    ]
    return strata, warnings


@dataclass
class RunConfig:
    respondents: str | None = None
    strata: str | None = None
    output: str | None = None
    csv_output: str | None = None
    columns: ColumnMapping = field(default_factory=ColumnMapping)
    share_column: str = "share"
    strata_id_column: str | None = None
    n_miss: float | None = None
    rate: float | None = None
    grid: list | None = None
    fit: FitConfig = field(default_factory=FitConfig)
    emit_conditional: bool = True
    reweighted_nonresp: bool = False
    weighted_fit: bool = False

    def nonresponse_sources(self) -> list:
        return [k for k in ("n_miss", "rate", "grid") if getattr(self, k) is not None]

    def check(self, command: str) -> None:
        for attr in ("respondents", "strata"):
            if not getattr(self, attr):
                raise DataError("config", f"{attr} path not given")
        src = self.nonresponse_sources()
        if len(src) > 1:
            raise DataError("config", f"exactly one nonresponse source allowed, got {src}")
        if command == "fit" and src == ["grid"]:
            raise DataError("config", "fit needs a nonresponse count or rate, not a grid")
        if command == "fit" and not src:
            raise DataError("config", "fit needs a nonresponse count or rate")
        if command == "sensitivity" and src != ["grid"]:
            raise DataError("config", "sensitivity needs a grid of rates")


def _fit_config_from(table: dict, base: FitConfig | None = None) -> FitConfig:
    known = {f.name for f in fields(FitConfig)}
    bad = set(table) - known
    if bad:
        raise DataError("config", f"unknown [fit] keys {sorted(bad)}")
    current = {f.name: getattr(base or FitConfig(), f.name) for f in fields(FitConfig)}
    current.update(table)
    try:
        return FitConfig(**current)
    except (TypeError, ValueError) as exc:
        raise DataError("config", f"invalid fit settings: {exc}") from None


def load_run_config(path) -> RunConfig:
    """Parse a TOML run manifest; relative paths resolve against its directory."""
    path = Path(path)
    try:
        doc = tomli.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError("file-not-found", f"{path}: no such file") from None
    except tomli.TOMLDecodeError as exc:
        raise DataError("config", f"{path}: {exc}") from None
    base = path.parent

    def resolve(p):
        return None if p is None else str((base / p) if not Path(p).is_absolute() else Path(p))

    data = doc.get("data", {})
    cols = doc.get("columns", {})
    nonresp = doc.get("nonresponse", {})
    out = doc.get("output", {})
    mapping = ColumnMapping(
        y=cols.get("y", "y"), r=cols.get("r", "r"), weight=cols.get("weight"),
        outcome=list(cols.get("outcome", [])), response=list(cols.get("response", [])),
        categorical=list(cols.get("categorical", [])), levels=dict(cols.get("levels", {})),
        include_intercepts=bool(doc.get("model", {}).get("include_intercepts", True)),
        Y=doc.get("model", {}).get("Y"), R=doc.get("model", {}).get("R"),
    )
    return RunConfig(
        respondents=resolve(data.get("respondents")), strata=resolve(data.get("strata")),
        output=resolve(data.get("output")), csv_output=resolve(data.get("csv_output")),
        columns=mapping, share_column=data.get("share_column", "share"),
        strata_id_column=data.get("strata_id_column"),
        n_miss=nonresp.get("count"), rate=nonresp.get("rate"), grid=nonresp.get("grid"),
        fit=_fit_config_from(doc.get("fit", {})),
        emit_conditional=bool(out.get("emit_conditional", True)),
        reweighted_nonresp=bool(out.get("reweighted_nonresp", False)),
        weighted_fit=bool(doc.get("model", {}).get("weighted_fit", False)),
    )


@dataclass(frozen=True, eq=False)
class SimulationPlan:
    config: SimConfig
    factors: tuple
    x_names: list
    z_names: list


def load_sim_config(path) -> SimulationPlan:
    """Parse a simulation TOML built from crossed categorical factors."""
    path = Path(path)
    try:
        doc = tomli.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError("file-not-found", f"{path}: no such file") from None
    except tomli.TOMLDecodeError as exc:
        raise DataError("config", f"{path}: {exc}") from None
    try:
        factors = tuple(
            Factor(name=f["name"], levels=tuple(f["levels"]), probs=tuple(f["probs"]),
                   outcome="outcome_effects" in f or f.get("outcome", False),
                   response="response_effects" in f or f.get("response", False),
                   outcome_effects=tuple(f.get("outcome_effects", ())),
                   response_effects=tuple(f.get("response_effects", ())))
            for f in doc.get("factor", [])
        )
        if not factors:
            raise ValueError("at least one [[factor]] is required")
        outcome, response = doc["outcome"], doc["response"]
        alpha = effects_vector(factors, "outcome", float(outcome.get("intercept", 0.0)))
        beta = effects_vector(factors, "response", float(response.get("intercept", 0.0)))
        truth = ParamSet(alpha, beta, outcome["thresholds"], response["thresholds"], doc["rho"])
        truth.check()
        strata = cross_strata(factors)
        cfg = SimConfig(spec=truth.spec, truth=truth, strata=strata,
                        n_population=int(doc["n_population"]), seed=int(doc["seed"]))
    except KeyError as exc:
        raise DataError("config", f"{path}: missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise DataError("config", f"{path}: {exc}") from None
    return SimulationPlan(cfg, factors, design_names(factors, "outcome"),
                          design_names(factors, "response"))


def atomic_write(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_simulation(plan: SimulationPlan, out: SimOutput, directory) -> dict:
    """Emit respondents.csv, strata.csv, truth.json and a ready-to-run run.toml."""
    directory = Path(directory)
    names = [f.name for f in plan.factors]
    by_id = {s.id: s for s in plan.config.strata}
    stratum_of = out.truth_stratum[out.truth_r <= plan.config.spec.R]
    resp_rows = []
    for rec, k in zip(out.respondents, stratum_of):
        s = plan.config.strata[k]
        resp_rows.append([rec.y, rec.r] + [s.labels[n] for n in names] + [_fmt(rec.weight)])
    atomic_write(directory / "respondents.csv",
                 _csv_text(["y", "r"] + names + ["weight"], resp_rows))
    atomic_write(directory / "strata.csv", _csv_text(
        ["stratum"] + names + ["share"],
        [[s.id] + [s.labels[n] for n in names] + [_fmt(s.share)] for s in by_id.values()]))

    truth = plan.config.truth
    truth_doc = {
        "schema_version": SCHEMA_VERSION,
        "params": truth.to_dict(),
        "structural": truth.structural_vector().tolist(),
        "x_names": plan.x_names, "z_names": plan.z_names,
        "n_population": plan.config.n_population, "n_respondents": len(out.respondents),
        "n_miss": out.n_miss, "seed": plan.config.seed,
    }
    write_json(directory / "truth.json", truth_doc)
    run_doc = {
        "data": {"respondents": "respondents.csv", "strata": "strata.csv",
                 "output": "fit.json", "strata_id_column": "stratum"},
        "columns": {
            "y": "y", "r": "r", "weight": "weight",
            "outcome": [f.name for f in plan.factors if f.outcome],
            "response": [f.name for f in plan.factors if f.response],
            "categorical": names,
            "levels": {f.name: list(f.levels) for f in plan.factors},
        },
        "model": {"Y": plan.config.spec.Y, "R": plan.config.spec.R, "include_intercepts": True},
        "nonresponse": {"count": out.n_miss},
        "fit": {"seed": plan.config.seed},
    }
    atomic_write(directory / "run.toml", tomli_w.dumps(run_doc))
    return truth_doc


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_json(path, doc) -> None:
    # float repr is the shortest string that round-trips exactly (<= 17 significant digits)
    atomic_write(path, json.dumps(_clean(doc), indent=2, allow_nan=False) + "\n")


def _lower_triangle(m: np.ndarray) -> list:
    return [float(m[i, j]) for i in range(m.shape[0]) for j in range(i + 1)]


def fit_to_json(result: FitResult, distributions: Sequence[DistributionEstimate] = (),
                codebook: Codebook | None = None, extra_warnings: Sequence[str] = (),
                timestamp: str | None = None) -> dict:
    p = result.params
    x_names = codebook.names("outcome") if codebook else [str(i) for i in range(len(p.alpha))]
    z_names = codebook.names("response") if codebook else [str(i) for i in range(len(p.beta))]
    se = dict(zip(result.names, result.se_structural.tolist()))
    return {
        "schema_version": SCHEMA_VERSION,
        "generated_at": timestamp,
        "model": {"Y": result.spec.Y, "R": result.spec.R, "x_names": x_names, "z_names": z_names},
        "n_respondents": float(result.n_resp),
        "n_miss": float(result.n_miss),
        "params": {
            "alpha": dict(zip(x_names, p.alpha.tolist())),
            "beta": dict(zip(z_names, p.beta.tolist())),
            "gamma": p.gamma.tolist(),
            "theta": p.theta.tolist(),
            "rho": p.rho,
        },
        "param_names": list(result.names),
        "estimates": p.structural_vector().tolist(),
        "se": se,
        "cov": _lower_triangle(result.cov_structural),
        "loglik": result.loglik,
        "convergence": {
            "converged": result.converged,
            "iterations": result.iterations,
            "gradient_norm": result.gradient_norm,
            "restart_logliks": list(result.restart_logliks),
            "restart_converged": list(result.restart_converged),
        },
        "distributions": [d.to_dict() for d in distributions],
        "warnings": list(result.warnings) + list(extra_warnings),
    }


def sensitivity_to_json(results: Sequence[SensitivityResult], codebook: Codebook | None = None,
                        baselines: Sequence[DistributionEstimate] = (),
                        timestamp: str | None = None) -> list:
    out = []
    for res in results:
        doc = fit_to_json(res.fit, list(baselines) + list(res.distributions), codebook,
                          res.warnings, timestamp)
        doc["rate"] = res.rate
        out.append(doc)
    return out


def distribution_rows(results: Sequence[SensitivityResult] = (),
                      baselines: Sequence[DistributionEstimate] = ()) -> list:
    """Long-format rows ``(target, rate, category, proportion, se)``; baselines have no rate."""
    rows = []
    for d in baselines:
        for j, pj in enumerate(d.proportions, start=1):
            se = "" if d.se is None else _fmt(float(d.se[j - 1]))
            rows.append([d.target, "", j, _fmt(float(pj)), se])
    for res in results:
        for d in res.distributions:
            for j, pj in enumerate(d.proportions, start=1):
                se = "" if d.se is None else _fmt(float(d.se[j - 1]))
                rows.append([d.target, _fmt(res.rate), j, _fmt(float(pj)), se])
    return rows


def write_distribution_csv(path, rows) -> None:
    atomic_write(path, _csv_text(CSV_COLUMNS, rows))
