"""Synthetic designs shared by the test modules."""
import numpy as np

from ovrp.design import Factor, cross_strata, effects_vector
from ovrp.likelihood import CellTable, NonresponseDesign
from ovrp.model import ParamSet
from ovrp.simulate import SimConfig, draw_population

GAMMA5 = [-1.8, -1.0, -0.4, 0.0]
THETA7 = [-2.0, -1.5, -1.1, -0.8, -0.5, -0.25, 0.0]


def anes_like_factors():
    """2 x 3 x 2 x 5 = 60 strata, echoing marital status x spouse x race x education."""
    return [
        Factor("marital", ("married", "single"), (0.5, 0.5),
               outcome_effects=(-0.3,), response_effects=(0.2,)),
        Factor("spouse", ("na", "male", "female"), (0.4, 0.3, 0.3),
               outcome_effects=(0.1, 0.2), response_effects=(-0.1, 0.1)),
        Factor("race", ("white", "other"), (0.7, 0.3),
               outcome_effects=(-0.2,), response_effects=(0.3,)),
        Factor("educ", ("e1", "e2", "e3", "e4", "e5"), (0.1, 0.3, 0.3, 0.2, 0.1),
               outcome_effects=(0.1, 0.3, 0.4, 0.6), response_effects=(-0.1, -0.2, -0.3, -0.4)),
    ]


def anes_like(rho, response_intercept=0.0):
    factors = anes_like_factors()
    strata = cross_strata(factors)
    truth = ParamSet(effects_vector(factors, "outcome", 0.8),
                     effects_vector(factors, "response", response_intercept),
                     GAMMA5, THETA7, rho)
    return truth, strata


def separated_design(rho):
    """Outcome and response driven by different, independent factors.

    Nonresponse is then ignorable exactly when ``rho == 0``.
    """
    factors = [
        Factor("a", ("a0", "a1", "a2"), (0.3, 0.4, 0.3), outcome=True, response=False,
               outcome_effects=(0.3, 0.6)),
        Factor("b", ("b0", "b1"), (0.5, 0.5), outcome=False, response=True,
               response_effects=(0.4,)),
    ]
    strata = cross_strata(factors)
    truth = ParamSet(effects_vector(factors, "outcome", 0.8),
                     effects_vector(factors, "response", -0.2),
                     GAMMA5, THETA7, rho)
    return truth, strata


def small_design(rho):
    """Six strata; one shared binary factor and one response-only factor."""
    factors = [
        Factor("s", ("s0", "s1"), (0.6, 0.4), outcome_effects=(0.4,), response_effects=(-0.3,)),
        Factor("c", ("c0", "c1", "c2"), (0.3, 0.4, 0.3), outcome=False, response=True,
               response_effects=(0.3, 0.6)),
    ]
    strata = cross_strata(factors)
    truth = ParamSet(effects_vector(factors, "outcome", 0.8),
                     effects_vector(factors, "response", -0.2),
                     GAMMA5, THETA7, rho)
    return truth, strata


def simulate(truth, strata, n, seed):
    out = draw_population(SimConfig(truth.spec, truth, strata, n, seed))
    cells = CellTable.from_records(out.respondents, truth.spec)
    return out, cells, NonresponseDesign(out.n_miss)


def random_params(rng, Y, R, dx, dz, rho_max=0.95):
    gaps_g = rng.uniform(0.1, 1.5, Y - 2)
    gaps_t = rng.uniform(0.1, 1.5, R - 1)
    gamma = np.append(-np.cumsum(gaps_g[::-1])[::-1], 0.0)
    theta = np.append(-np.cumsum(gaps_t[::-1])[::-1], 0.0)
    return ParamSet(rng.normal(0, 0.7, dx), rng.normal(0, 0.7, dz), gamma, theta,
                    rng.uniform(-rho_max, rho_max))
