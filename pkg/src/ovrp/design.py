"""Strata from crossed categorical factors, with reference-coded design vectors.

Each factor enters the outcome equation, the response equation, or both.  The
design vector is ``[1, indicators...]`` where the first listed level of every
factor is the reference and gets no column.  Factors are assumed independent
in the population, so a stratum's share is the product of its level shares.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import Stratum

__all__ = ["Factor", "design_names", "design_row", "cross_strata", "effects_vector"]


@dataclass(frozen=True)
class Factor:
    name: str
    levels: tuple
    probs: tuple
    outcome: bool = True
    response: bool = True
    outcome_effects: tuple = field(default=())
    response_effects: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        object.__setattr__(self, "probs", tuple(float(v) for v in self.probs))
        if len(self.levels) < 2:
            raise ValueError(f"factor {self.name!r} needs at least two levels")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError(f"factor {self.name!r} has duplicate levels")
        if len(self.probs) != len(self.levels) or abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError(f"factor {self.name!r}: probs must match levels and sum to 1")
        for eq, eff in (("outcome", self.outcome_effects), ("response", self.response_effects)):
            if eff and len(eff) != len(self.levels) - 1:
                raise ValueError(f"factor {self.name!r}: {eq}_effects needs one value per "
                                 f"non-reference level ({len(self.levels) - 1})")


def design_names(factors: Sequence[Factor], equation: str, intercept: bool = True) -> list[str]:
    names = ["(intercept)"] if intercept else []
    for f in factors:
        if getattr(f, equation):
            names.extend(f"{f.name}={lv}" for lv in f.levels[1:])
    return names


def design_row(factors: Sequence[Factor], labels: dict, equation: str,
               intercept: bool = True) -> np.ndarray:
    row = [1.0] if intercept else []
    for f in factors:
        if getattr(f, equation):
            row.extend(1.0 if labels[f.name] == lv else 0.0 for lv in f.levels[1:])
    return np.array(row)


def cross_strata(factors: Sequence[Factor], intercept: bool = True) -> list[Stratum]:
    """All level combinations, first factor varying slowest."""
    out = []
    for combo in itertools.product(*(range(len(f.levels)) for f in factors)):
        labels = {f.name: f.levels[i] for f, i in zip(factors, combo)}
        share = float(np.prod([f.probs[i] for f, i in zip(factors, combo)]))
        out.append(Stratum(
            id="|".join(labels[f.name] for f in factors),
            x=design_row(factors, labels, "outcome", intercept),
            z=design_row(factors, labels, "response", intercept),
            share=share,
            labels=labels,
        ))
    return out


def effects_vector(factors: Sequence[Factor], equation: str, intercept_value: float) -> np.ndarray:
    """Coefficient vector aligned with ``design_names`` (missing effects are zero)."""
    coef = [intercept_value]
    for f in factors:
        if getattr(f, equation):
            eff = getattr(f, f"{equation}_effects") or (0.0,) * (len(f.levels) - 1)
            coef.extend(float(e) for e in eff)
    return np.array(coef)
