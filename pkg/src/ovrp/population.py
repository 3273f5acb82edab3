"""Outcome distributions for the population, respondents and nonrespondents.

Per stratum ``k`` the nonrespondent distribution is::

    P(y=j | r=R+1, x_k, z_k) = P(gamma_{j-1} - a_k < eps <= gamma_j - a_k, eta > -b_k) / Phi(b_k)

with ``a_k = alpha'x_k`` and ``b_k = beta'z_k``; respondents use ``eta <= -b_k``
and ``1 - Phi(b_k)``.  Strata are aggregated with the plain population shares
``p_k`` by default.  ``reweighted=True`` instead weights stratum ``k`` by its
share of the target group, ``p_k Phi(b_k) / sum_m p_m Phi(b_m)`` for
nonrespondents, which is the distribution one would tabulate in a census of
that group.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._parallel import map_ordered
from .bvn import std_normal_cdf
from .estimator import FitConfig, FitResult, delta_method, fit
from .likelihood import CellTable, NonresponseDesign, cell_grid
from .model import ParamSet, RespondentRecord, Stratum, unpack

__all__ = [
    "DegenerateStratumError",
    "DistributionEstimate",
    "SensitivityResult",
    "TARGETS",
    "outcome_dist_population",
    "outcome_dist_conditional",
    "stratum_conditionals",
    "mixture_check",
    "baseline_proportions",
    "distribution_estimates",
    "sensitivity_grid",
]

log = logging.getLogger(__name__)

TARGETS = ("population", "respondents", "nonrespondents", "raw", "weighted")
_DENOM_FLOOR = 1e-12


class DegenerateStratumError(ValueError):
    """A stratum has (numerically) no respondents or no nonrespondents."""


@dataclass(frozen=True, eq=False)
class DistributionEstimate:
    target: str
    proportions: np.ndarray
    se: np.ndarray | None = None
    n_miss_assumed: float = float("nan")

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"unknown target {self.target!r}")
        object.__setattr__(self, "proportions", np.asarray(self.proportions, dtype=float))

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "proportions": self.proportions.tolist(),
            "se": None if self.se is None else np.asarray(self.se).tolist(),
            "n_miss_assumed": self.n_miss_assumed,
        }


@dataclass(frozen=True, eq=False)
class SensitivityResult:
    rate: float
    fit: FitResult
    distributions: list = field(default_factory=list)
    warnings: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"rate must be in [0, 1), got {self.rate}")

    def get(self, target: str) -> DistributionEstimate | None:
        return next((d for d in self.distributions if d.target == target), None)


def _profiles(strata: Sequence[Stratum]):
    X = np.array([s.x for s in strata])
    Z = np.array([s.z for s in strata])
    shares = np.array([s.share for s in strata])
    return X, Z, shares


def outcome_dist_population(p: ParamSet, strata: Sequence[Stratum]) -> np.ndarray:
    """Share-weighted outcome distribution, marginal over response."""
    X, _, shares = _profiles(strata)
    a = X @ p.alpha
    cuts = np.concatenate([[-np.inf], p.gamma, [np.inf]])
    cdf = std_normal_cdf(cuts[None, :] - a[:, None])
    return shares @ np.diff(cdf, axis=1)


def stratum_conditionals(p: ParamSet, strata: Sequence[Stratum]):
    """Per-stratum ``(joint, p_nonresp, resp_cond, nonresp_cond)``.

    ``joint`` has shape ``(K, Y, R+1)``; the conditionals have shape ``(K, Y)``
    and are NaN where the denominator falls below 1e-12.
    """
    X, Z, _ = _profiles(strata)
    joint = cell_grid(X, Z, p)
    p_non = std_normal_cdf(Z @ p.beta - p.theta[-1])
    p_resp = std_normal_cdf(p.theta[-1] - Z @ p.beta)
    non_joint = joint[:, :, -1]
    resp_joint = joint[:, :, :-1].sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        non_cond = np.where(p_non[:, None] >= _DENOM_FLOOR, non_joint / p_non[:, None], np.nan)
        resp_cond = np.where(p_resp[:, None] >= _DENOM_FLOOR, resp_joint / p_resp[:, None], np.nan)
    return joint, p_non, resp_cond, non_cond


def outcome_dist_conditional(p: ParamSet, strata: Sequence[Stratum], target: str,
                             reweighted: bool = False) -> np.ndarray:
    """Outcome distribution among ``"respondents"`` or ``"nonrespondents"``."""
    if target not in ("respondents", "nonrespondents"):
        raise ValueError(f"target must be respondents or nonrespondents, got {target!r}")
    _, p_non, resp_cond, non_cond = stratum_conditionals(p, strata)
    cond = non_cond if target == "nonrespondents" else resp_cond
    bad = np.isnan(cond[:, 0])
    if bad.any():
        k = int(np.argmax(bad))
        raise DegenerateStratumError(
            f"stratum {strata[k].id!r} has no {target[:-1]} mass (denominator < {_DENOM_FLOOR})")
    shares = np.array([s.share for s in strata])
    if reweighted:
        group = p_non if target == "nonrespondents" else 1.0 - p_non
        shares = shares * group / float(shares @ group)
    return shares @ cond


def mixture_check(p: ParamSet, strata: Sequence[Stratum]) -> np.ndarray:
    """Per-stratum residual of the law of total probability, shape ``(K, Y)``."""
    X, _, _ = _profiles(strata)
    _, p_non, resp_cond, non_cond = stratum_conditionals(p, strata)
    a = X @ p.alpha
    cuts = np.concatenate([[-np.inf], p.gamma, [np.inf]])
    marg = np.diff(std_normal_cdf(cuts[None, :] - a[:, None]), axis=1)
    mix = (1.0 - p_non)[:, None] * np.nan_to_num(resp_cond) + p_non[:, None] * np.nan_to_num(non_cond)
    return marg - mix


def baseline_proportions(records: Sequence[RespondentRecord], mode: str = "raw",
                         Y: int | None = None) -> np.ndarray:
    """Raw or survey-weighted respondent category frequencies."""
    if not records:
        raise ValueError("baseline proportions need at least one record")
    if mode not in ("raw", "weighted"):
        raise ValueError(f"mode must be raw or weighted, got {mode!r}")
    y = np.array([rec.y for rec in records], dtype=int)
    Y = Y or int(y.max())
    if mode == "raw":
        w = np.ones(len(y))
    else:
        w = np.array([rec.weight for rec in records], dtype=float)
        if np.any(~np.isfinite(w)) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weighted baseline needs nonnegative weights with a positive total")
    counts = np.bincount(y - 1, weights=w, minlength=Y)
    return counts / counts.sum()


def distribution_estimates(result: FitResult, strata: Sequence[Stratum],
                           reweighted: bool = False, conditional: bool = True):
    """Model-based distributions with delta-method SEs from one joint Jacobian.

    Returns ``(estimates, warnings)``.  Targets whose conditioning event has no
    mass in some stratum are dropped with a warning.
    """
    spec = result.spec
    targets = ["population"]
    warnings = []
    if conditional:
        for t in ("respondents", "nonrespondents"):
            try:
                outcome_dist_conditional(result.params, strata, t, reweighted)
                targets.append(t)
            except DegenerateStratumError as exc:
                warnings.append(f"{t} distribution skipped: {exc}")

    def stacked(v):
        p = unpack(v, spec)
        parts = [outcome_dist_population(p, strata)]
        for t in targets[1:]:
            try:
                parts.append(outcome_dist_conditional(p, strata, t, reweighted))
            except DegenerateStratumError:
                parts.append(np.full(spec.Y, np.nan))
        return np.concatenate(parts)

    values, se, _ = delta_method(stacked, result)
    out = []
    for i, t in enumerate(targets):
        sl = slice(i * spec.Y, (i + 1) * spec.Y)
        out.append(DistributionEstimate(t, values[sl], se[sl], result.n_miss))
    return out, warnings


def sensitivity_grid(cells: CellTable, strata: Sequence[Stratum], rates: Sequence[float],
                     config: FitConfig | None = None, reweighted: bool = False,
                     conditional: bool = True, workers: int | None = None):
    """Refit at each nonresponse rate ``q`` with ``n_miss = N_resp q / (1 - q)``.

    Always completes; nonconvergence is recorded in the rate's FitResult.
    Output order follows ``rates``.
    """
    rates = [float(q) for q in rates]
    for q in rates:
        if not 0.0 <= q < 1.0:
            raise ValueError(f"nonresponse rate must be in [0, 1), got {q}")
    cfg = config or FitConfig()

    def one(q):
        nr = NonresponseDesign.from_rate(cells.n_resp, q)
        res = fit(cells, strata, nr, cfg)
        try:
            dists, warn = distribution_estimates(res, strata, reweighted, conditional)
        except (ValueError, np.linalg.LinAlgError) as exc:
            dists, warn = [], [f"distributions failed: {exc}"]
        if not res.converged:
            log.warning("rate %.3g: fit did not converge", q)
        return SensitivityResult(q, res, dists, tuple(warn))

    return map_ordered(one, rates, workers)
