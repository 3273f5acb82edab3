"""Log-likelihood of the joint outcome / response-propensity model.

Respondent records contribute the log-probability of their (outcome, proxy)
rectangle under the correlated bivariate normal; the unit nonrespondents
contribute ``n_miss * log(sum_k share_k * Phi(beta'z_k))``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numdiff
from .bvn import RectBounds, rect_grid, rect_prob, std_normal_cdf
from .model import ModelSpec, ParamSet, RespondentRecord, Stratum, unpack

__all__ = [
    "NonresponseDesign",
    "CellTable",
    "UNDERFLOW",
    "cell_prob",
    "nonresponse_prob",
    "cell_grid",
    "log_likelihood",
    "loglik_free",
    "loglik_gradient",
]

UNDERFLOW = 1e-300


@dataclass(frozen=True)
class NonresponseDesign:
    """Number of unit nonrespondents; real-valued so sensitivity rates need no rounding."""

    n_miss: float = 0.0

    def __post_init__(self):
        if not self.n_miss >= 0:
            raise ValueError(f"n_miss must be >= 0, got {self.n_miss}")
        object.__setattr__(self, "n_miss", float(self.n_miss))

    @classmethod
    def from_rate(cls, n_resp: float, rate: float) -> "NonresponseDesign":
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"nonresponse rate must be in [0, 1), got {rate}")
        return cls(n_resp * rate / (1.0 - rate))


@dataclass(frozen=True, eq=False)
class CellTable:
    """Respondent data collapsed to unique (y, r, x, z) cells.

    Cells are sorted by ``(y, r, x, z)`` and the distinct ``(x, z)`` covariate
    profiles are stored once in ``X`` / ``Z``; ``profile[c]`` points a cell to
    its row there.
    """

    spec: ModelSpec
    y: np.ndarray
    r: np.ndarray
    profile: np.ndarray
    count: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    @classmethod
    def from_records(cls, records: Sequence[RespondentRecord], spec: ModelSpec,
                     weighted: bool = False) -> "CellTable":
        if not records:
            raise ValueError("cannot build a cell table from zero records")
        agg: dict = {}
        for rec in records:
            key = (rec.y, rec.r, rec.x, rec.z)
            agg[key] = agg.get(key, 0.0) + (rec.weight if weighted else 1.0)
        keys = sorted(agg)
        profiles = sorted({(k[2], k[3]) for k in keys})
        index = {pz: i for i, pz in enumerate(profiles)}
        return cls(
            spec=spec,
            y=np.array([k[0] for k in keys], dtype=int),
            r=np.array([k[1] for k in keys], dtype=int),
            profile=np.array([index[(k[2], k[3])] for k in keys], dtype=int),
            count=np.array([agg[k] for k in keys], dtype=float),
            X=np.array([pz[0] for pz in profiles], dtype=float).reshape(len(profiles), spec.dx),
            Z=np.array([pz[1] for pz in profiles], dtype=float).reshape(len(profiles), spec.dz),
        )

    @property
    def n_cells(self) -> int:
        return len(self.y)

    @property
    def n_resp(self) -> float:
        return float(self.count.sum())

    def describe_cell(self, c: int) -> dict:
        return {"y": int(self.y[c]), "r": int(self.r[c]),
                "x": self.X[self.profile[c]].tolist(), "z": self.Z[self.profile[c]].tolist()}


def _bounds(cuts, shift):
    """Per-row category bounds ``[-inf, cuts - shift, +inf]``; shift has shape (P,)."""
    shift = np.asarray(shift, dtype=float)
    inner = cuts[None, :] - shift[:, None]
    inf = np.full((shift.size, 1), np.inf)
    return np.hstack([-inf, inner, inf])


def cell_grid(X, Z, p: ParamSet, counter: Counter | None = None) -> np.ndarray:
    """Joint probabilities for every profile, shape ``(P, Y, R+1)``.

    Column ``R`` (0-based) holds ``P(y=j, r=R+1 | x, z)``, the joint mass of
    outcome ``j`` among nonrespondents.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    u = _bounds(p.gamma, X @ p.alpha)
    v = _bounds(p.theta, Z @ p.beta)
    return rect_grid(u, v, p.rho, counter)


def cell_prob(y: int, r: int, x, z, p: ParamSet, counter: Counter | None = None) -> float:
    """P(y, r | x, z) for a respondent cell, 1-based categories, r <= R."""
    Y, R = len(p.gamma) + 1, len(p.theta)
    if not (1 <= y <= Y and 1 <= r <= R):
        raise ValueError(f"cell ({y}, {r}) outside 1..{Y} x 1..{R}")
    a = float(np.dot(p.alpha, x))
    b = float(np.dot(p.beta, z))
    g = np.concatenate([[-np.inf], p.gamma, [np.inf]])
    t = np.concatenate([[-np.inf], p.theta])
    bounds = RectBounds(g[y - 1] - a, g[y] - a, t[r - 1] - b, t[r] - b)
    return rect_prob(bounds, p.rho, counter)


def nonresponse_prob(z, p: ParamSet) -> float:
    """P(r = R+1 | z) = Phi(beta'z - theta_R)."""
    return std_normal_cdf(float(np.dot(p.beta, z)) - p.theta[-1])


def _nonresponse_mass(strata: Sequence[Stratum], p: ParamSet) -> float:
    Zs = np.array([s.z for s in strata])
    shares = np.array([s.share for s in strata])
    return float(shares @ std_normal_cdf(Zs @ p.beta - p.theta[-1]))


def log_likelihood(cells: CellTable, strata: Sequence[Stratum], nr: NonresponseDesign,
                   p: ParamSet, diagnostics: dict | None = None) -> float:
    """Full log-likelihood; ``-inf`` if an occupied cell underflows.

    When ``n_miss == 0`` the nonresponse term is dropped before taking the log,
    so parameters implying zero nonresponse mass are not penalized.  On
    underflow, ``diagnostics`` (if given) receives the offending cell.
    """
    counter: Counter = Counter()
    grid = cell_grid(cells.X, cells.Z, p, counter)
    probs = grid[cells.profile, cells.y - 1, cells.r - 1]
    if diagnostics is not None:
        diagnostics["negative_clamp"] = counter["negative_clamp"]
    low = probs < UNDERFLOW
    if low.any():
        c = int(np.argmax(low))
        if diagnostics is not None:
            diagnostics["underflow"] = {**cells.describe_cell(c), "prob": float(probs[c])}
        return -np.inf
    ll = float(np.dot(cells.count, np.log(probs)))
    if nr.n_miss > 0:
        mass = _nonresponse_mass(strata, p)
        if mass < UNDERFLOW:
            if diagnostics is not None:
                diagnostics["underflow"] = {"nonresponse_mass": mass}
            return -np.inf
        ll += nr.n_miss * np.log(mass)
    return ll


def loglik_free(cells: CellTable, strata, nr: NonresponseDesign, v) -> float:
    return log_likelihood(cells, strata, nr, unpack(v, cells.spec))


def loglik_gradient(cells: CellTable, strata, nr: NonresponseDesign, v) -> np.ndarray:
    """Central-difference gradient in the free parameterization."""
    return numdiff.gradient(lambda w: loglik_free(cells, strata, nr, w), v)
