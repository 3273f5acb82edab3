import numpy as np
import pytest
from scipy.stats import norm

from _designs import simulate, small_design
from _oracles import ordered_probit_fit, response_fit
from ovrp.estimator import (
    FitConfig, FitResult, covariance, delta_method, fit, initial_values, ordered_probit_marginal,
)
from ovrp.likelihood import CellTable, NonresponseDesign, log_likelihood
from ovrp.model import ModelSpec, ParamSet, RespondentRecord, Stratum, free_dim, unpack


@pytest.fixture(scope="module")
def fitted():
    truth, strata = small_design(0.4)
    _, cells, nr = simulate(truth, strata, 6000, seed=21)
    return truth, strata, cells, nr, fit(cells, strata, nr, FitConfig(n_restarts=2, seed=4))


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(gradient_tolerance=0)
    with pytest.raises(ValueError):
        FitConfig(n_restarts=0)
    with pytest.raises(ValueError):
        FitConfig(fix_rho_at=1.0)


def test_intercept_only_marginal_closed_form():
    counts = np.array([50.0, 50.0, 50.0])
    coef, xi, ok = ordered_probit_marginal(np.ones((3, 1)), [1, 2, 3], counts, 3)
    assert ok
    lo, hi = norm.ppf(1 / 3), norm.ppf(2 / 3)
    assert coef[0] == pytest.approx(-hi, abs=1e-6)
    # one free cut below the pinned top cut: gamma_1 = -exp(xi)
    assert -np.exp(xi[0]) == pytest.approx(lo - hi, abs=1e-6)


def test_separation_falls_back_to_zero_start():
    spec = ModelSpec(Y=3, R=2, dx=2, dz=1)
    recs = [RespondentRecord(1 if d == 0 else 3, 1 + (i % 2), (1.0, float(d)), (1.0,))
            for i, d in enumerate([0, 1] * 40)]
    cells = CellTable.from_records(recs, spec)
    strata = [Stratum("s", [1.0, 0.5], [1.0], 1.0)]
    warnings = []
    v0 = initial_values(cells, strata, NonresponseDesign(30), spec, warnings)
    assert np.all(v0 == 0) and v0.size == free_dim(spec)
    assert any("start failed" in w for w in warnings)


def test_start_is_near_mle_when_rho_zero():
    truth, strata = small_design(0.0)
    _, cells, nr = simulate(truth, strata, 5000, seed=2)
    res = fit(cells, strata, nr, FitConfig(n_restarts=1))
    assert res.converged
    assert res.iterations <= 30
    v0 = initial_values(cells, strata, nr)
    assert np.max(np.abs(v0 - res.free)) < 0.15


def test_fix_rho_zero_factorizes():
    truth, strata = small_design(0.3)
    _, cells, nr = simulate(truth, strata, 5000, seed=11)
    res = fit(cells, strata, nr, FitConfig(fix_rho_at=0.0))
    assert res.params.rho == 0.0
    Xc, Zc = cells.X[cells.profile], cells.Z[cells.profile]
    a, g = ordered_probit_fit(Xc, cells.y, cells.count, 5)
    Zs = np.array([s.z for s in strata])
    shares = np.array([s.share for s in strata])
    b, t = response_fit(Zc, cells.r, cells.count, 7, Zs, shares, nr.n_miss)
    np.testing.assert_allclose(res.params.alpha, a, atol=1e-5)
    np.testing.assert_allclose(res.params.gamma, g, atol=1e-5)
    np.testing.assert_allclose(res.params.beta, b, atol=1e-5)
    np.testing.assert_allclose(res.params.theta, t, atol=1e-5)
    assert res.cov_free[-1, -1] == 0.0 and res.se_structural[-1] == 0.0


def test_no_nonresponse_single_proxy_category_reduces_to_outcome_probit():
    rng = np.random.default_rng(3)
    spec = ModelSpec(Y=4, R=1, dx=2, dz=2)
    xs = rng.normal(size=600)
    ys = np.digitize(0.5 * xs + rng.normal(size=600), [-1, 0, 1]) + 1
    recs = [RespondentRecord(int(y), 1, (1.0, float(x)), (1.0, float(x))) for x, y in zip(xs, ys)]
    cells = CellTable.from_records(recs, spec)
    res = fit(cells, [Stratum("s", [1.0, 0.0], [1.0, 0.0], 1.0)], NonresponseDesign(0),
              FitConfig(n_restarts=1))
    a, g = ordered_probit_fit(cells.X[cells.profile], cells.y, cells.count, 4)
    np.testing.assert_allclose(res.params.alpha, a, atol=1e-5)
    np.testing.assert_allclose(res.params.gamma, g, atol=1e-5)


def test_returned_loglik_is_fresh(fitted):
    _, strata, cells, nr, res = fitted
    assert abs(res.loglik - log_likelihood(cells, strata, nr, res.params)) <= 1e-10
    assert abs(res.loglik - log_likelihood(cells, strata, nr, unpack(res.free, cells.spec))) <= 1e-10


def test_trace_is_nondecreasing(fitted):
    res = fitted[-1]
    assert res.converged
    assert np.all(np.diff(res.trace) >= 0)


def test_restarts_pick_best(fitted):
    res = fitted[-1]
    assert len(res.restart_logliks) == 2
    assert res.loglik == pytest.approx(max(res.restart_logliks), abs=1e-8)


def test_covariance_invariants(fitted):
    res = fitted[-1]
    C = res.cov_structural
    assert np.array_equal(C, C.T)
    assert np.linalg.eigvalsh(C).min() >= -1e-10
    np.testing.assert_array_equal(res.se_structural, np.sqrt(np.diag(C)))
    assert np.array_equal(res.cov_free, res.cov_free.T)


def test_identity_block_structural_se_equals_free_se(fitted):
    res = fitted[-1]
    k = res.spec.dx + res.spec.dz
    np.testing.assert_allclose(res.se_structural[:k], np.sqrt(np.diag(res.cov_free))[:k],
                               rtol=0, atol=1e-8)


def test_profile_consistency(fitted):
    _, strata, cells, nr, res = fitted
    prof = fit(cells, strata, nr, FitConfig(fix_rho_at=res.params.rho, n_restarts=1))
    assert abs(prof.loglik - res.loglik) <= 1e-6


def test_recovers_truth_roughly(fitted):
    truth, _, _, _, res = fitted
    z = (res.params.structural_vector() - truth.structural_vector()) / res.se_structural
    assert np.max(np.abs(z)) < 4.5
    assert abs(res.params.rho - 0.4) < 0.15


def test_nonconvergence_is_reported_not_raised():
    truth, strata = small_design(0.4)
    _, cells, nr = simulate(truth, strata, 3000, seed=5)
    res = fit(cells, strata, nr, FitConfig(max_iterations=1, n_restarts=1))
    assert not res.converged
    assert any("did not converge" in w for w in res.warnings)
    assert np.isfinite(res.loglik)
    assert res.restart_converged == (False,)


def test_restart_flags_cover_every_start(fitted):
    res = fitted[-1]
    assert len(res.restart_converged) == len(res.restart_logliks) == 2
    assert any(res.restart_converged)


def test_fit_is_deterministic():
    truth, strata = small_design(0.4)
    _, cells, nr = simulate(truth, strata, 2000, seed=8)
    a = fit(cells, strata, nr, FitConfig(n_restarts=2, seed=1))
    b = fit(cells, strata, nr, FitConfig(n_restarts=2, seed=1))
    assert np.array_equal(a.free, b.free) and a.loglik == b.loglik


def test_covariance_of_quadratic_surrogate():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(5, 5))
    A = B @ B.T + 5 * np.eye(5)
    m = rng.normal(size=5)
    surface = lambda v: -0.5 * (v - m) @ A @ (v - m)
    cov_free, cov_struct, warnings = covariance(m, None, None, None, loglik=surface)
    np.testing.assert_allclose(cov_free, np.linalg.inv(A), rtol=1e-6)
    np.testing.assert_array_equal(cov_struct, cov_free)
    assert warnings == []


def test_singular_information_warns():
    surface = lambda v: -0.5 * (v[0] + v[1]) ** 2
    cov_free, _, warnings = covariance(np.zeros(2), None, None, None, loglik=surface)
    assert "information matrix singular" in warnings
    assert np.all(np.isfinite(cov_free))


def test_nan_hessian_raises():
    with pytest.raises(ValueError):
        covariance(np.zeros(2), None, None, None, loglik=lambda v: np.nan)


def _fake_fit(cov):
    n = cov.shape[0]
    p = ParamSet([0.0], [0.0], [0.0], [0.0], 0.0)
    return FitResult(p, np.linspace(-0.5, 0.5, n), cov, cov, np.sqrt(np.diag(cov)), 0.0, True, 0, 0.0)


def test_delta_method_identity_and_linear():
    rng = np.random.default_rng(1)
    B = rng.normal(size=(5, 5))
    cov = B @ B.T
    fake = _fake_fit(cov)
    vals, se, cov_g = delta_method(lambda v: v, fake)
    np.testing.assert_allclose(cov_g, cov, atol=1e-8)
    np.testing.assert_array_equal(vals, fake.free)
    L = rng.normal(size=(3, 5))
    vals, se, cov_g = delta_method(lambda v: L @ v, fake)
    np.testing.assert_allclose(cov_g, L @ cov @ L.T, atol=1e-8)
    np.testing.assert_allclose(se, np.sqrt(np.diag(L @ cov @ L.T)), atol=1e-8)
