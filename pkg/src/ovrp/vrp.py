"""scikit-learn style front end for the ordinal VRP estimator."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bvn import std_normal_cdf
from .estimator import FitConfig, fit
from .likelihood import CellTable, NonresponseDesign
from .model import ModelSpec, RespondentRecord, Stratum, free_names, validate_dataset
from .population import (
    DistributionEstimate, baseline_proportions, distribution_estimates, outcome_dist_conditional,
    outcome_dist_population,
)
from .validation import check_codes, check_design, check_shares, check_weights


class OrdinalVRP(BaseEstimator):
    """Correlated ordered-probit outcome / response model with embedded unit nonresponse.

    Parameters
    ----------
    n_miss : float, optional
        Number of unit nonrespondents. Exactly one of ``n_miss`` and
        ``nonresponse_rate`` must be given.
    nonresponse_rate : float, optional
        Nonresponse rate ``q`` in [0, 1); translated to
        ``n_miss = n_respondents * q / (1 - q)``.
    n_outcome, n_proxy : int, optional
        Declared category counts ``Y`` and ``R``; inferred from the data
        otherwise (codes must then be consecutive from 1).
    fix_rho_at : float, optional
        Hold the latent correlation fixed (profile fit).
    max_iter, tol, step_tol, n_restarts, random_state
        Optimizer settings, see :class:`ovrp.estimator.FitConfig`.
    reweight_nonrespondents : bool
        Aggregate conditional distributions with group-specific stratum shares.
    use_sample_weight : bool
        Treat ``sample_weight`` as likelihood multiplicities. By default the
        weights only feed the weighted baseline proportions.

    Notes
    -----
    ``X`` and ``Z`` are numeric design matrices and should include an
    intercept column: the top threshold of each equation is fixed at zero, so
    the intercepts carry the location.

    Examples
    --------
    >>> est = OrdinalVRP(nonresponse_rate=0.5)                  # doctest: +SKIP
    >>> est.fit(X, y, r=r, Z=Z, strata_X=SX, strata_shares=p)   # doctest: +SKIP
    >>> est.rho_, est.distribution("nonrespondents").proportions  # doctest: +SKIP
    """

    def __init__(self, n_miss=None, nonresponse_rate=None, n_outcome=None, n_proxy=None,
                 fix_rho_at=None, max_iter=500, tol=1e-5, step_tol=1e-9, n_restarts=3,
                 random_state=0, reweight_nonrespondents=False, use_sample_weight=False):
        self.n_miss = n_miss
        self.nonresponse_rate = nonresponse_rate
        self.n_outcome = n_outcome
        self.n_proxy = n_proxy
        self.fix_rho_at = fix_rho_at
        self.max_iter = max_iter
        self.tol = tol
        self.step_tol = step_tol
        self.n_restarts = n_restarts
        self.random_state = random_state
        self.reweight_nonrespondents = reweight_nonrespondents
        self.use_sample_weight = use_sample_weight

    def _fit_config(self) -> FitConfig:
        return FitConfig(max_iterations=self.max_iter, gradient_tolerance=self.tol,
                         step_tolerance=self.step_tol, n_restarts=self.n_restarts,
                         fix_rho_at=self.fix_rho_at, seed=int(self.random_state or 0))

    def fit(self, X, y, *, r, Z=None, strata_X, strata_Z=None, strata_shares,
            sample_weight=None):
        """Fit on respondents.

        ``Z`` defaults to ``X`` and ``strata_Z`` to ``strata_X``.  Strata rows
        give the population covariate profiles with their shares.
        """
        if (self.n_miss is None) == (self.nonresponse_rate is None):
            raise ValueError("set exactly one of n_miss and nonresponse_rate")
        X = check_design(X, "X")
        Z = X if Z is None else check_design(Z, "Z")
        if Z.shape[0] != X.shape[0]:
            raise ValueError(f"Z has {Z.shape[0]} rows, X has {X.shape[0]}")
        y, Y = check_codes(y, X.shape[0], self.n_outcome, "y")
        r, R = check_codes(r, X.shape[0], self.n_proxy, "r")
        if Y < 2:
            raise ValueError("the outcome needs at least two categories")
        SX = check_design(strata_X, "strata_X")
        SZ = SX if strata_Z is None else check_design(strata_Z, "strata_Z")
        if SX.shape[1] != X.shape[1] or SZ.shape[1] != Z.shape[1] or SX.shape[0] != SZ.shape[0]:
            raise ValueError("strata design matrices do not match the respondent designs")
        shares = check_shares(strata_shares, SX.shape[0])
        w = check_weights(sample_weight, X.shape[0])

        spec = ModelSpec(Y=Y, R=R, dx=X.shape[1], dz=Z.shape[1])
        records = [RespondentRecord(int(a), int(b), tuple(xr), tuple(zr), float(wi))
                   for a, b, xr, zr, wi in zip(y, r, X, Z, w)]
        strata = [Stratum(str(k), SX[k], SZ[k], float(shares[k])) for k in range(SX.shape[0])]
        report = validate_dataset(records, strata, spec)
        if not report.ok:
            raise ValueError("; ".join(report.errors))

        cells = CellTable.from_records(records, spec, weighted=self.use_sample_weight)
        if self.n_miss is not None:
            nr = NonresponseDesign(float(self.n_miss))
        else:
            nr = NonresponseDesign.from_rate(cells.n_resp, float(self.nonresponse_rate))
        result = fit(cells, strata, nr, self._fit_config(), names=free_names(spec))

        self.result_ = result
        self.params_ = result.params
        self.coef_ = result.params.alpha
        self.response_coef_ = result.params.beta
        self.thresholds_ = result.params.gamma
        self.response_thresholds_ = result.params.theta
        self.rho_ = result.params.rho
        self.se_ = dict(zip(result.names, result.se_structural))
        self.n_miss_ = nr.n_miss
        self.n_features_in_ = X.shape[1]
        self.n_outcome_, self.n_proxy_ = Y, R
        self.strata_ = strata
        self.records_ = records
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Outcome distribution for each row of ``X``, marginal over response."""
        check_is_fitted(self, "params_")
        X = check_design(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        p = self.params_
        cuts = np.concatenate([[-np.inf], p.gamma, [np.inf]])
        return np.diff(std_normal_cdf(cuts[None, :] - (X @ p.alpha)[:, None]), axis=1)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1) + 1

    def score(self, X, y) -> float:
        """Mean log-probability of the observed outcome categories."""
        proba = self.predict_proba(X)
        y, _ = check_codes(y, proba.shape[0], self.n_outcome_, "y")
        return float(np.mean(np.log(np.clip(proba[np.arange(len(y)), y - 1], 1e-300, None))))

    def distribution(self, target: str = "population") -> DistributionEstimate:
        """Population, respondent, nonrespondent or baseline outcome distribution."""
        check_is_fitted(self, "params_")
        if target in ("raw", "weighted"):
            return DistributionEstimate(target, baseline_proportions(self.records_, target,
                                                                      self.n_outcome_))
        dists, _ = distribution_estimates(self.result_, self.strata_, self.reweight_nonrespondents,
                                          conditional=target != "population")
        for d in dists:
            if d.target == target:
                return d
        # conditional target dropped as degenerate; re-raise the underlying error
        outcome_dist_conditional(self.params_, self.strata_, target, self.reweight_nonrespondents)
        raise ValueError(f"unknown target {target!r}")

    def population_distribution(self) -> np.ndarray:
        check_is_fitted(self, "params_")
        return outcome_dist_population(self.params_, self.strata_)
