import numpy as np
import pytest
from scipy.stats import norm

from _designs import random_params, simulate, anes_like
from _oracles import richardson_derivative
from ovrp.likelihood import (
    CellTable, NonresponseDesign, cell_grid, cell_prob, log_likelihood, loglik_free,
    loglik_gradient, nonresponse_prob,
)
from ovrp.model import ModelSpec, ParamSet, RespondentRecord, Stratum, pack, unpack
from ovrp import numdiff

# Frozen: 10^7 antithetic latent draws (seed 20250101), y=2, r=1, alpha'x=0.3, beta'z=-0.2,
# gamma=(-1, -0.3, 0), theta=(-0.6, 0), rho=0.5.
MC_CELL_Y2_R1 = 0.0931463


def _op_prob(cat, lin, cuts):
    c = np.concatenate([[-np.inf], cuts, [np.inf]])
    return norm.cdf(c[cat] - lin) - norm.cdf(c[cat - 1] - lin)


def test_total_probability_random():
    rng = np.random.default_rng(5)
    for _ in range(200):
        Y, R = rng.integers(2, 7), rng.integers(1, 8)
        p = random_params(rng, Y, R, 2, 3)
        x, z = rng.normal(size=2), rng.normal(size=3)
        total = sum(cell_prob(y, r, x, z, p) for y in range(1, Y + 1) for r in range(1, R + 1))
        assert total + nonresponse_prob(z, p) == pytest.approx(1.0, abs=1e-9)


def test_cell_prob_factorizes_at_rho_zero():
    rng = np.random.default_rng(6)
    p = random_params(rng, 5, 4, 2, 2)
    p = ParamSet(p.alpha, p.beta, p.gamma, p.theta, 0.0)
    x, z = rng.normal(size=2), rng.normal(size=2)
    for y in range(1, 6):
        for r in range(1, 5):
            expected = _op_prob(y, p.alpha @ x, p.gamma) * _op_prob(r, p.beta @ z, p.theta)
            assert cell_prob(y, r, x, z, p) == pytest.approx(expected, abs=1e-14)


def test_cell_prob_monte_carlo():
    p = ParamSet([0.3], [-0.2], [-1.0, -0.3, 0.0], [-0.6, 0.0], 0.5)
    assert abs(cell_prob(2, 1, [1.0], [1.0], p) - MC_CELL_Y2_R1) <= 5e-4


def test_cell_prob_rejects_out_of_range():
    p = ParamSet([0.3], [-0.2], [-1.0, 0.0], [0.0], 0.5)
    with pytest.raises(ValueError):
        cell_prob(1, 2, [1.0], [1.0], p)


def test_nonresponse_prob_examples():
    p = ParamSet([0.0], [0.0], [0.0], [-1.0, 0.0], 0.2)
    assert nonresponse_prob([1.0], p) == 0.5
    p = ParamSet([0.0], [1.959963985], [0.0], [-1.0, 0.0], 0.2)
    assert nonresponse_prob([1.0], p) == pytest.approx(0.975, abs=1e-9)


def test_nonresponse_prob_is_complement():
    rng = np.random.default_rng(7)
    for _ in range(50):
        p = random_params(rng, 3, 5, 1, 3)
        z = rng.normal(size=3)
        lin = p.beta @ z
        cuts = np.concatenate([[-np.inf], p.theta])
        resp = sum(norm.cdf(cuts[r] - lin) - norm.cdf(cuts[r - 1] - lin) for r in range(1, 6))
        assert nonresponse_prob(z, p) == pytest.approx(1.0 - resp, abs=1e-10)


def test_cell_grid_last_column_sums_to_nonresponse():
    rng = np.random.default_rng(8)
    p = random_params(rng, 4, 3, 2, 2)
    X, Z = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    g = cell_grid(X, Z, p)
    for k in range(5):
        assert g[k, :, -1].sum() == pytest.approx(nonresponse_prob(Z[k], p), abs=1e-12)


def _dataset(seed=0, n=2000, rho=0.4, Y=5, R=7):
    rng = np.random.default_rng(seed)
    p = random_params(rng, Y, R, 2, 3, rho_max=0.6)
    strata = [Stratum(str(k), [1.0, rng.normal()], [1.0, rng.normal(), rng.normal()], 0.25)
              for k in range(4)]
    recs = []
    for _ in range(n):
        s = strata[rng.integers(4)]
        recs.append(RespondentRecord(int(rng.integers(1, Y + 1)), int(rng.integers(1, R + 1)),
                                     tuple(s.x), tuple(s.z)))
    return p, strata, recs


def _naive_loglik(records, strata, n_miss, p):
    ll = sum(np.log(cell_prob(rec.y, rec.r, rec.x, rec.z, p)) for rec in records)
    if n_miss > 0:
        mass = sum(s.share * norm.cdf(p.beta @ s.z) for s in strata)
        ll += n_miss * np.log(mass)
    return ll


def test_loglik_matches_naive_per_record():
    p, strata, recs = _dataset()
    spec = p.spec
    cells = CellTable.from_records(recs, spec)
    assert cells.n_cells < len(recs)
    ll = log_likelihood(cells, strata, NonresponseDesign(1234.5), p)
    assert ll == pytest.approx(_naive_loglik(recs, strata, 1234.5, p), abs=1e-9)


def test_loglik_n_miss_zero_is_respondent_sum():
    p, strata, recs = _dataset(seed=1, n=300)
    cells = CellTable.from_records(recs, p.spec)
    grid = cell_grid(cells.X, cells.Z, p)
    resp = float(np.dot(cells.count, np.log(grid[cells.profile, cells.y - 1, cells.r - 1])))
    assert log_likelihood(cells, strata, NonresponseDesign(0.0), p) == resp


def test_loglik_factorizes_at_rho_zero():
    p, strata, recs = _dataset(seed=2, n=800)
    p = ParamSet(p.alpha, p.beta, p.gamma, p.theta, 0.0)
    cells = CellTable.from_records(recs, p.spec)
    y = np.array([r.y for r in recs])
    r = np.array([r.r for r in recs])
    X = np.array([rec.x for rec in recs])
    Z = np.array([rec.z for rec in recs])
    ll_y = np.sum(np.log(_op_prob(y, X @ p.alpha, p.gamma)))
    tc = np.concatenate([[-np.inf], p.theta])
    ll_r = np.sum(np.log(norm.cdf(tc[r] - Z @ p.beta) - norm.cdf(tc[r - 1] - Z @ p.beta)))
    mass = sum(s.share * norm.cdf(p.beta @ s.z) for s in strata)
    expected = ll_y + ll_r + 500.0 * np.log(mass)
    assert log_likelihood(cells, strata, NonresponseDesign(500.0), p) == pytest.approx(expected, abs=1e-9)


def test_loglik_permutation_invariant():
    p, strata, recs = _dataset(seed=3, n=1000)
    rng = np.random.default_rng(0)
    base = log_likelihood(CellTable.from_records(recs, p.spec), strata, NonresponseDesign(321), p)
    shuffled = [recs[i] for i in rng.permutation(len(recs))]
    other = log_likelihood(CellTable.from_records(shuffled, p.spec), strata, NonresponseDesign(321), p)
    assert abs(base - other) <= 1e-10


def test_loglik_underflow_reports_cell():
    spec = ModelSpec(Y=2, R=1, dx=1, dz=1)
    p = ParamSet([40.0], [0.0], [0.0], [0.0], 0.0)
    cells = CellTable.from_records([RespondentRecord(1, 1, (1.0,), (1.0,))], spec)
    diag = {}
    ll = log_likelihood(cells, [Stratum("s", [1.0], [1.0], 1.0)], NonresponseDesign(0), p, diag)
    assert ll == -np.inf
    assert diag["underflow"]["y"] == 1 and diag["underflow"]["prob"] < 1e-300


def test_nonresponse_design():
    assert NonresponseDesign.from_rate(1000, 0.5).n_miss == pytest.approx(1000)
    assert NonresponseDesign.from_rate(1000, 0.2).n_miss == pytest.approx(250)
    with pytest.raises(ValueError):
        NonresponseDesign.from_rate(1000, 1.0)
    with pytest.raises(ValueError):
        NonresponseDesign(-1.0)


def test_weighted_cell_table_sums_weights():
    spec = ModelSpec(Y=2, R=1, dx=1, dz=1)
    recs = [RespondentRecord(1, 1, (1.0,), (1.0,), 0.5), RespondentRecord(1, 1, (1.0,), (1.0,), 2.0)]
    assert CellTable.from_records(recs, spec, weighted=True).count.tolist() == [2.5]
    assert CellTable.from_records(recs, spec).count.tolist() == [2.0]


def test_gradient_agrees_with_richardson():
    p, strata, recs = _dataset(seed=4, n=1500)
    cells = CellTable.from_records(recs, p.spec)
    nr = NonresponseDesign(900)
    rng = np.random.default_rng(1)
    for _ in range(3):
        v = pack(p) + rng.normal(0, 0.1, size=pack(p).size)
        g = loglik_gradient(cells, strata, nr, v)
        for i in range(v.size):
            e = np.zeros(v.size)
            e[i] = 1.0
            ref = richardson_derivative(lambda t: loglik_free(cells, strata, nr, v + t * e), 0.0)
            assert abs(g[i] - ref) <= 1e-4 * max(1.0, abs(ref))


def test_gradient_rho_coordinate_at_zero_symmetric_data():
    # Y = R + 1 = 3 and exchangeable counts: roles of eps and eta are interchangeable
    spec = ModelSpec(Y=3, R=2, dx=1, dz=1)
    counts = {(1, 1): 60, (1, 2): 25, (2, 1): 25, (2, 2): 40, (3, 1): 15, (3, 2): 35}
    recs = [RespondentRecord(y, r, (1.0,), (1.0,)) for (y, r), c in counts.items() for _ in range(c)]
    cells = CellTable.from_records(recs, spec)
    strata = [Stratum("s", [1.0], [1.0], 1.0)]
    nr = NonresponseDesign(60)
    v = pack(ParamSet([0.2], [-0.4], [-0.8, 0.0], [-0.8, 0.0], 0.0))
    g = loglik_gradient(cells, strata, nr, v)
    e = np.zeros(v.size)
    e[-1] = 1.0
    ref = richardson_derivative(lambda t: loglik_free(cells, strata, nr, v + t * e), 0.0)
    assert g[-1] == pytest.approx(ref, abs=1e-4)
    assert g[-1] > 0  # the counts put extra mass on the diagonal


def test_gradient_exact_for_quadratic():
    A = np.array([[3.0, 0.5, 0.0], [0.5, 2.0, 0.1], [0.0, 0.1, 1.0]])
    m = np.array([0.3, -1.0, 2.0])
    f = lambda v: -0.5 * (v - m) @ A @ (v - m)
    v = np.array([1.0, 0.5, -0.2])
    np.testing.assert_allclose(numdiff.gradient(f, v), -A @ (v - m), atol=1e-8)


def test_gradient_small_at_truth_for_large_n():
    truth, strata = anes_like(0.5)
    _, cells, nr = simulate(truth, strata, 200_000, seed=99)
    g = loglik_gradient(cells, strata, nr, pack(truth))
    assert np.max(np.abs(g)) / cells.n_resp < 0.01


@pytest.mark.parametrize("rho", [0.3, 0.8])
def test_conditional_mean_of_outcome_monotone_in_proxy(rho):
    # higher proxy category means higher eta; with rho > 0 that pushes eps up
    p = ParamSet([0.2], [0.1], [-1.5, -0.7, 0.0], [-1.2, -0.6, -0.2, 0.0], rho)
    grid = cell_grid([[1.0]], [[1.0]], p)[0, :, :-1]
    mean_y = (np.arange(1, 5)[:, None] * grid).sum(0) / grid.sum(0)
    assert np.all(np.diff(mean_y) >= 0)
    neg = cell_grid([[1.0]], [[1.0]], ParamSet(p.alpha, p.beta, p.gamma, p.theta, -rho))[0, :, :-1]
    mean_neg = (np.arange(1, 5)[:, None] * neg).sum(0) / neg.sum(0)
    assert np.all(np.diff(mean_neg) <= 0)
