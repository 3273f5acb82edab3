"""Data, strata and parameter types, plus the free-vector reparameterization.

Thresholds are anchored with the TOP cutpoint fixed at zero in both equations,
so location lives in the intercepts of ``x`` and ``z``.  Lower cutpoints are
built downward with cumulative exponentials::

    gamma_j = -sum_{m=j}^{Y-2} exp(xi_m),   j = 1..Y-2,   gamma_{Y-1} = 0

and likewise for ``theta``; ``rho = tanh(zeta)``.  The free vector is laid out
as ``[alpha, beta, xi, chi, zeta]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "ModelSpec",
    "RespondentRecord",
    "Stratum",
    "ParamSet",
    "ValidationReport",
    "free_dim",
    "free_names",
    "pack",
    "unpack",
    "validate_dataset",
]

_EXP_CLAMP = 30.0


@dataclass(frozen=True)
class ModelSpec:
    """Category counts and covariate dimensions.  ``R + 1`` is unit nonresponse."""

    Y: int
    R: int
    dx: int
    dz: int

    def __post_init__(self):
        if self.Y < 2:
            raise ValueError(f"need at least two outcome categories, got Y={self.Y}")
        if self.R < 1:
            raise ValueError(f"need at least one proxy category, got R={self.R}")
        if self.dx < 1 or self.dz < 1:
            raise ValueError("covariate dimensions must be >= 1")


@dataclass(frozen=True)
class RespondentRecord:
    y: int
    r: int
    x: tuple
    z: tuple
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "z", tuple(float(v) for v in self.z))


@dataclass(frozen=True, eq=False)
class Stratum:
    """A population cell with covariate profile and known population share."""

    id: str
    x: np.ndarray
    z: np.ndarray
    share: float
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        if not 0.0 < self.share <= 1.0:
            raise ValueError(f"stratum {self.id!r}: share {self.share} outside (0, 1]")


@dataclass(frozen=True, eq=False)
class ParamSet:
    """Structural parameters.  ``gamma`` has length Y-1, ``theta`` length R."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    rho: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "theta"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(Y=len(self.gamma) + 1, R=len(self.theta),
                         dx=len(self.alpha), dz=len(self.beta))

    def check(self) -> None:
        """Raise ValueError unless the normalization and ordering invariants hold."""
        for name, cuts in (("gamma", self.gamma), ("theta", self.theta)):
            if cuts[-1] != 0.0:
                raise ValueError(f"{name}: top threshold must be exactly 0, got {cuts[-1]}")
            if np.any(np.diff(cuts) <= 0):
                raise ValueError(f"{name}: thresholds must be strictly increasing")
        if not abs(self.rho) < 1.0:
            raise ValueError(f"|rho| must be < 1, got {self.rho}")
        vec = np.concatenate([self.alpha, self.beta, self.gamma, self.theta])
        if not np.all(np.isfinite(vec)):
            raise ValueError("parameters must be finite")

    def structural_vector(self) -> np.ndarray:
        """Non-normalized entries ``[alpha, beta, gamma[:-1], theta[:-1], rho]``."""
        return np.concatenate([self.alpha, self.beta, self.gamma[:-1], self.theta[:-1], [self.rho]])

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "gamma": self.gamma.tolist(),
            "theta": self.theta.tolist(),
            "rho": self.rho,
        }


def free_dim(spec: ModelSpec) -> int:
    return spec.dx + spec.dz + (spec.Y - 2) + (spec.R - 1) + 1


def free_names(spec: ModelSpec, x_names=None, z_names=None) -> list[str]:
    """Labels for the entries of both the free and the structural vector."""
    x_names = x_names or [str(i) for i in range(spec.dx)]
    z_names = z_names or [str(i) for i in range(spec.dz)]
    return (
        [f"alpha[{n}]" for n in x_names]
        + [f"beta[{n}]" for n in z_names]
        + [f"gamma_{j}" for j in range(1, spec.Y - 1)]
        + [f"theta_{j}" for j in range(1, spec.R)]
        + ["rho"]
    )


def _cuts_from_free(xi: np.ndarray) -> np.ndarray:
    gaps = np.exp(np.clip(xi, -_EXP_CLAMP, _EXP_CLAMP))
    # gamma_j = -(gaps_j + ... + gaps_last); reverse cumsum
    cuts = np.append(-np.cumsum(gaps[::-1])[::-1], 0.0)
    # a gap far below the spacing of its neighbours can vanish in rounding
    if np.any(np.diff(cuts) <= 0):
        for j in range(len(cuts) - 2, -1, -1):
            if cuts[j] >= cuts[j + 1]:
                cuts[j] = np.nextafter(cuts[j + 1], -np.inf)
    return cuts


def _free_from_cuts(cuts: np.ndarray) -> np.ndarray:
    return np.log(np.diff(cuts))


def pack(params: ParamSet) -> np.ndarray:
    """Map a valid ParamSet to the unconstrained optimization vector."""
    params.check()
    return np.concatenate([
        params.alpha,
        params.beta,
        _free_from_cuts(params.gamma),
        _free_from_cuts(params.theta),
        [np.arctanh(params.rho)],
    ])


def unpack(v, spec: ModelSpec) -> ParamSet:
    v = np.asarray(v, dtype=float)
    if v.shape != (free_dim(spec),):
        raise ValueError(f"free vector length {v.shape} does not match {free_dim(spec)} for {spec}")
    i = 0
    alpha = v[i:i + spec.dx]; i += spec.dx
    beta = v[i:i + spec.dz]; i += spec.dz
    xi = v[i:i + spec.Y - 2]; i += spec.Y - 2
    chi = v[i:i + spec.R - 1]; i += spec.R - 1
    return ParamSet(alpha=alpha.copy(), beta=beta.copy(), gamma=_cuts_from_free(xi),
                    theta=_cuts_from_free(chi), rho=_rho_from_free(v[i]))


_RHO_MAX = float(np.nextafter(1.0, 0.0))


def _rho_from_free(zeta) -> float:
    return float(np.clip(np.tanh(zeta), -_RHO_MAX, _RHO_MAX))


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    n_records: int = 0
    n_zero_weight: int = 0
    share_sum: float = float("nan")
    y_counts: dict = field(default_factory=dict)
    r_counts: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "errors": list(self.errors),
            "warnings": list(self.warnings),
            "n_records": self.n_records,
            "n_zero_weight": self.n_zero_weight,
            "share_sum": self.share_sum,
            "y_counts": {str(k): v for k, v in sorted(self.y_counts.items())},
            "r_counts": {str(k): v for k, v in sorted(self.r_counts.items())},
        }


def validate_dataset(records: Sequence[RespondentRecord], strata: Sequence[Stratum],
                     spec: ModelSpec) -> ValidationReport:
    """Scan everything and collect problems; never stops at the first one."""
    rep = ValidationReport(n_records=len(records))
    y_counts = {j: 0 for j in range(1, spec.Y + 1)}
    r_counts = {j: 0 for j in range(1, spec.R + 1)}
    if not records:
        rep.errors.append("no respondent records")

    for n, rec in enumerate(records):
        if rec.y in y_counts:
            y_counts[rec.y] += 1
        else:
            rep.errors.append(f"record {n}: outcome {rec.y} outside 1..{spec.Y}")
        if rec.r in r_counts:
            r_counts[rec.r] += 1
        else:
            rep.errors.append(f"record {n}: proxy {rec.r} outside 1..{spec.R}")
        if len(rec.x) != spec.dx:
            rep.errors.append(f"record {n}: x has length {len(rec.x)}, expected {spec.dx}")
        if len(rec.z) != spec.dz:
            rep.errors.append(f"record {n}: z has length {len(rec.z)}, expected {spec.dz}")
        if not rec.weight >= 0:
            rep.errors.append(f"record {n}: negative or NaN weight {rec.weight}")
        elif rec.weight == 0:
            rep.n_zero_weight += 1

    rep.y_counts, rep.r_counts = y_counts, r_counts
    if records:
        rep.errors.extend(f"outcome category {j} empty" for j, c in y_counts.items() if c == 0)
        rep.errors.extend(f"proxy category {j} empty" for j, c in r_counts.items() if c == 0)

    if not strata:
        rep.errors.append("no strata")
    else:
        total = float(sum(s.share for s in strata))
        rep.share_sum = total
        if abs(total - 1.0) > 1e-9:
            rep.errors.append(f"shares sum {total:.6g} ≠ 1")
        for s in strata:
            if len(s.x) != spec.dx or len(s.z) != spec.dz:
                rep.errors.append(f"stratum {s.id!r}: covariate dimensions do not match the model")
    if rep.n_zero_weight:
        rep.warnings.append(f"{rep.n_zero_weight} records have zero weight")
    return rep
