"""Seeded synthetic populations drawn from the joint latent model.

Stream discipline (fixed so datasets are reproducible anywhere):

* ``SeedSequence(seed).spawn(K + 1)`` gives K + 1 independent children; every
  child drives a ``Philox`` counter-based generator.
* Child 0 draws the stratum counts from ``Multinomial(n_population, shares)``.
* Child ``k + 1`` belongs to stratum ``k`` and draws an ``(n_k, 2)`` block of
  uniforms; normals come from the inverse CDF, ``eps = e1`` and
  ``eta = rho * e1 + sqrt(1 - rho^2) * e2``.
* Units are emitted stratum-major, draw-index-minor.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .model import ModelSpec, ParamSet, RespondentRecord, Stratum

__all__ = ["SimConfig", "SimOutput", "CellFreqs", "draw_population", "empirical_cell_freqs",
           "stratum_generators"]


@dataclass(frozen=True, eq=False)
class SimConfig:
    spec: ModelSpec
    truth: ParamSet
    strata: Sequence[Stratum]
    n_population: int
    seed: int

    def __post_init__(self):
        if self.n_population < 1:
            raise ValueError("n_population must be >= 1")
        self.truth.check()
        if self.truth.spec != self.spec:
            raise ValueError(f"truth dimensions {self.truth.spec} do not match {self.spec}")
        total = sum(s.share for s in self.strata)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"strata shares sum to {total}, not 1")


@dataclass(eq=False)
class SimOutput:
    """Respondents plus the complete latent truth (oracle use only).

    ``truth_r`` uses ``R + 1`` for unit nonresponse; ``truth_y`` is recorded for
    nonrespondents too, which real data never provides.
    """

    respondents: list
    n_miss: int
    truth_stratum: np.ndarray
    truth_y: np.ndarray
    truth_r: np.ndarray
    strata: Sequence[Stratum] = field(default_factory=list)

    @property
    def full_truth(self):
        ids = [s.id for s in self.strata]
        return [(ids[k], int(y), int(r)) for k, y, r in
                zip(self.truth_stratum, self.truth_y, self.truth_r)]


@dataclass(frozen=True)
class CellFreqs:
    cells: np.ndarray       # (Y, R) respondent cells
    nonresponse: float      # r = R + 1, outcome marginalized


def stratum_generators(seed: int, n_strata: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(n_strata + 1)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def _discretize(latent, cuts):
    # category c (1-based) iff cuts[c-2] < latent <= cuts[c-1]
    return np.searchsorted(cuts, latent, side="left") + 1


def draw_population(config: SimConfig) -> SimOutput:
    p, spec = config.truth, config.spec
    strata = list(config.strata)
    gens = stratum_generators(config.seed, len(strata))
    shares = np.array([s.share for s in strata])
    counts = gens[0].multinomial(config.n_population, shares / shares.sum())
    sq = np.sqrt(1.0 - p.rho ** 2)

    ks, ys, rs, respondents = [], [], [], []
    for k, (s, n_k) in enumerate(zip(strata, counts)):
        u = gens[k + 1].random((int(n_k), 2))
        e1, e2 = ndtri(u[:, 0]), ndtri(u[:, 1])
        eps, eta = e1, p.rho * e1 + sq * e2
        y = _discretize(float(s.x @ p.alpha) + eps, p.gamma)
        r = _discretize(float(s.z @ p.beta) + eta, p.theta)
        ks.append(np.full(int(n_k), k))
        ys.append(y)
        rs.append(r)
        responded = r <= spec.R
        x, z = tuple(s.x.tolist()), tuple(s.z.tolist())
        respondents.extend(
            RespondentRecord(int(yy), int(rr), x, z) for yy, rr in zip(y[responded], r[responded])
        )

    truth_r = np.concatenate(rs) if rs else np.zeros(0, dtype=int)
    out = SimOutput(
        respondents=respondents,
        n_miss=int((truth_r == spec.R + 1).sum()),
        truth_stratum=np.concatenate(ks).astype(int),
        truth_y=np.concatenate(ys).astype(int),
        truth_r=truth_r.astype(int),
        strata=strata,
    )
    _attach_poststrat_weights(out, spec.R)
    return out


def _attach_poststrat_weights(out: SimOutput, R: int) -> None:
    """Post-stratification weights: population share over respondent share of the stratum."""
    n_resp = len(out.respondents)
    if n_resp == 0:
        return
    responded = out.truth_r <= R
    stratum_of = out.truth_stratum[responded]
    per_stratum = np.bincount(stratum_of, minlength=len(out.strata))
    weights = np.array([s.share for s in out.strata]) / (np.maximum(per_stratum, 1) / n_resp)
    out.respondents = [
        RespondentRecord(rec.y, rec.r, rec.x, rec.z, float(weights[k]))
        for rec, k in zip(out.respondents, stratum_of)
    ]


def empirical_cell_freqs(out: SimOutput, spec: ModelSpec) -> CellFreqs:
    n = len(out.truth_r)
    table = np.zeros((spec.Y, spec.R))
    resp = out.truth_r <= spec.R
    np.add.at(table, (out.truth_y[resp] - 1, out.truth_r[resp] - 1), 1.0)
    return CellFreqs(cells=table / n, nonresponse=float((~resp).sum()) / n)
