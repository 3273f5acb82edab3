"""Maximum-likelihood fitting, parameter covariance and the delta method."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize
from scipy.special import ndtr, ndtri

from . import numdiff
from ._parallel import map_ordered
from .likelihood import CellTable, NonresponseDesign, log_likelihood
from .model import ModelSpec, ParamSet, Stratum, free_dim, free_names, unpack

__all__ = [
    "FitConfig",
    "FitResult",
    "initial_values",
    "ordered_probit_marginal",
    "fit",
    "covariance",
    "delta_method",
]

log = logging.getLogger(__name__)

# Marginal start values beyond this magnitude are treated as separation.
_SEPARATION_BOUND = 10.0
_ARMIJO = 1e-4
_MAX_HALVINGS = 60
_MAX_STEP = 2.0


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings.

    ``gradient_tolerance`` applies to the per-respondent log-likelihood, i.e. the
    full gradient is compared against ``gradient_tolerance * n_respondents``.
    """

    max_iterations: int = 500
    gradient_tolerance: float = 1e-5
    step_tolerance: float = 1e-9
    n_restarts: int = 3
    fix_rho_at: float | None = None
    seed: int = 0
    restart_jitter: float = 0.25

    def __post_init__(self):
        if self.gradient_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.fix_rho_at is not None and not abs(self.fix_rho_at) < 1:
            raise ValueError("fix_rho_at must lie strictly inside (-1, 1)")


@dataclass(frozen=True, eq=False)
class FitResult:
    params: ParamSet
    free: np.ndarray
    cov_free: np.ndarray
    cov_structural: np.ndarray
    se_structural: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    gradient_norm: float
    warnings: tuple = ()
    names: tuple = ()
    trace: tuple = ()
    n_resp: float = 0.0
    n_miss: float = 0.0
    restart_logliks: tuple = ()
    restart_converged: tuple = ()
    fixed: tuple = ()

    @property
    def spec(self) -> ModelSpec:
        return self.params.spec

    def summary(self) -> str:
        est = self.params.structural_vector()
        width = max(len(n) for n in self.names) if self.names else 8
        lines = [f"{'parameter':<{width}}  {'estimate':>12}  {'se':>12}"]
        for n, e, s in zip(self.names, est, self.se_structural):
            lines.append(f"{n:<{width}}  {e:12.6f}  {s:12.6f}")
        lines.append(f"loglik = {self.loglik:.6f}   converged = {self.converged}"
                     f"   iterations = {self.iterations}")
        return "\n".join(lines)


def ordered_probit_marginal(D, cats, counts, n_cat, extra=None, extra_grad=None):
    """Fit a univariate ordered probit with top cutpoint 0; returns ``(coef, xi, ok)``.

    ``extra(b)`` optionally adds a term depending on the linear index ``b`` of
    auxiliary rows (used for the nonresponse mass); it must return a scalar.
    """
    D = np.asarray(D, dtype=float)
    cats = np.asarray(cats, dtype=int)
    counts = np.asarray(counts, dtype=float)
    d = D.shape[1]
    n_cut = n_cat - 2

    def unpack_local(w):
        coef, xi = w[:d], w[d:]
        gaps = np.exp(np.clip(xi, -30, 30))
        cuts = np.append(-np.cumsum(gaps[::-1])[::-1], 0.0)
        return coef, np.concatenate([[-np.inf], cuts, [np.inf]])

    def nll(w):
        coef, cuts = unpack_local(w)
        a = D @ coef
        p = ndtr(cuts[cats] - a) - ndtr(cuts[cats - 1] - a)
        if np.any(p <= 1e-300):
            return np.inf
        val = -float(counts @ np.log(p))
        if extra is not None:
            val -= extra(coef)
        return val / counts.sum()

    # intercept-only closed form for the cutpoints gives a sensible start
    freq = np.bincount(cats, weights=counts, minlength=n_cat + 1)[1:]
    cum = np.clip(np.cumsum(freq)[:-1] / freq.sum(), 1e-4, 1 - 1e-4)
    c = ndtri(cum)
    w0 = np.zeros(d + n_cut)
    gaps = np.diff(c)
    if n_cut:
        w0[d:] = np.log(np.maximum(gaps, 1e-3))
    w0[0] = -c[-1] if np.allclose(D[:, 0], 1.0) else 0.0
    if not np.isfinite(nll(w0)):
        w0 = np.zeros(d + n_cut)
    res = optimize.minimize(nll, w0, method="BFGS", options={"gtol": 1e-8, "maxiter": 2000})
    ok = bool(np.all(np.isfinite(res.x)) and np.isfinite(res.fun)
              and np.max(np.abs(res.x)) < _SEPARATION_BOUND)
    return res.x[:d], res.x[d:], ok


def initial_values(cells: CellTable, strata: Sequence[Stratum], nr: NonresponseDesign,
                   spec: ModelSpec | None = None, warnings: list | None = None) -> np.ndarray:
    """Start point from two separate ordered probits and ``rho = 0``.

    The outcome side regresses ``y`` on ``x`` among respondents.  The response
    side regresses ``r`` on ``z`` with the nonrespondents entering through the
    aggregate ``n_miss * log(sum_k share_k Phi(beta'z_k))`` term.  If either fit
    fails or separates, the all-zero vector is returned with a warning.
    """
    spec = spec or cells.spec
    warnings = warnings if warnings is not None else []
    Xc, Zc = cells.X[cells.profile], cells.Z[cells.profile]
    try:
        alpha, xi, ok_y = ordered_probit_marginal(Xc, cells.y, cells.count, spec.Y)
        Zs = np.array([s.z for s in strata])
        shares = np.array([s.share for s in strata])

        def extra(beta):
            if nr.n_miss == 0:
                return 0.0
            mass = float(shares @ ndtr(Zs @ beta))
            return nr.n_miss * np.log(mass) if mass > 1e-300 else -np.inf

        beta, chi, ok_r = ordered_probit_marginal(Zc, cells.r, cells.count, spec.R + 1, extra)
        # with R + 1 categories the local helper pins theta_{R} = 0 -- exactly our normalization
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        ok_y = ok_r = False
        log.debug("marginal fit raised %s", exc)
    if not (ok_y and ok_r):
        msg = "marginal ordered-probit start failed (separation or nonconvergence); starting from zero"
        warnings.append(msg)
        log.warning(msg)
        return np.zeros(free_dim(spec))
    return np.concatenate([alpha, beta, xi, chi, [0.0]])


def _bfgs(fun, x0, cfg: FitConfig, n_scale: float):
    """Minimize ``fun`` (mean negative log-likelihood) by BFGS with Armijo backtracking.

    Returns ``(x, f, converged, iterations, gnorm, trace, message)``.
    """
    grad = lambda w: numdiff.gradient(fun, w)
    x = np.array(x0, dtype=float)
    fx = fun(x)
    trace = [-fx * n_scale]
    if not np.isfinite(fx):
        return x, fx, False, 0, np.inf, trace, "start point has zero likelihood"
    g = grad(x)
    n = x.size
    H = np.eye(n)
    fresh = True
    message = "iteration limit reached"
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        gnorm = float(np.max(np.abs(g))) if n else 0.0
        if gnorm <= cfg.gradient_tolerance:
            converged, message = True, "gradient tolerance reached"
            it -= 1
            break
        d = -H @ g
        slope = float(g @ d)
        if slope >= 0:
            H, fresh = np.eye(n), True
            d = -g
            slope = float(g @ d)
        big = np.max(np.abs(d))
        if big > _MAX_STEP:
            d *= _MAX_STEP / big
            slope = float(g @ d)
        t = 1.0
        for _ in range(_MAX_HALVINGS):
            x_new = x + t * d
            f_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= fx + _ARMIJO * t * slope:
                break
            t *= 0.5
        else:
            if not fresh:
                H, fresh = np.eye(n), True
                continue
            message = "line search failed"
            break
        step = x_new - x
        g_new = grad(x_new)
        improvement = fx - f_new
        yk = g_new - g
        x, fx, g = x_new, f_new, g_new
        trace.append(-fx * n_scale)
        if np.max(np.abs(step)) < cfg.step_tolerance and improvement < 1e-10:
            converged, message = True, "step tolerance reached"
            break
        sy = float(step @ yk)
        if sy > 1e-12 * np.linalg.norm(step) * np.linalg.norm(yk):
            if fresh:
                H = np.eye(n) * (sy / float(yk @ yk))
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(step, yk)
            H = V @ H @ V.T + rho * np.outer(step, step)
            fresh = False
    else:
        gnorm = float(np.max(np.abs(g))) if n else 0.0
        if gnorm <= cfg.gradient_tolerance:
            converged, message = True, "gradient tolerance reached"
    gnorm = float(np.max(np.abs(g))) if n else 0.0
    return x, fx, converged, it, gnorm, trace, message


def _active_mask(spec: ModelSpec, cfg: FitConfig) -> np.ndarray:
    mask = np.ones(free_dim(spec), dtype=bool)
    if cfg.fix_rho_at is not None:
        mask[-1] = False
    return mask


def fit(cells: CellTable, strata: Sequence[Stratum], nr: NonresponseDesign,
        config: FitConfig | None = None, names: Sequence[str] | None = None,
        compute_covariance: bool = True) -> FitResult:
    """Maximize the log-likelihood over the free vector.

    Restart 0 starts at :func:`initial_values`; further restarts add seeded
    Gaussian jitter.  The best run by log-likelihood wins (ties go to the
    earliest).  Nonconvergence is reported, never raised.
    """
    cfg = config or FitConfig()
    spec = cells.spec
    n_scale = cells.n_resp
    warnings: list = []
    v0 = initial_values(cells, strata, nr, spec, warnings)
    mask = _active_mask(spec, cfg)
    if cfg.fix_rho_at is not None:
        v0[-1] = np.arctanh(cfg.fix_rho_at)

    rng = np.random.default_rng(cfg.seed)
    starts = [v0[mask]]
    for _ in range(cfg.n_restarts - 1):
        starts.append(v0[mask] + rng.normal(0.0, cfg.restart_jitter, mask.sum()))

    def full(w):
        v = v0.copy()
        v[mask] = w
        return v

    def objective(w):
        return -log_likelihood(cells, strata, nr, unpack(full(w), spec)) / n_scale

    runs = map_ordered(lambda s: _bfgs(objective, s, cfg, n_scale), starts)
    best = min(range(len(runs)), key=lambda i: (runs[i][1] if np.isfinite(runs[i][1]) else np.inf, i))
    w, fbest, converged, iters, gnorm, trace, message = runs[best]
    if not converged:
        warnings.append(f"optimizer did not converge: {message}")
    if not any(r[2] for r in runs):
        warnings.append("no restart converged")
    v = full(w)
    params = unpack(v, spec)
    loglik = log_likelihood(cells, strata, nr, params)

    n = free_dim(spec)
    if compute_covariance and np.isfinite(loglik):
        cov_free, cov_struct, cov_warn = covariance(v, cells, strata, nr, fixed=~mask)
        warnings.extend(cov_warn)
    else:
        cov_free = cov_struct = np.full((n, n), np.nan)
    se = np.sqrt(np.clip(np.diag(cov_struct), 0.0, None))
    return FitResult(
        params=params, free=v, cov_free=cov_free, cov_structural=cov_struct, se_structural=se,
        loglik=loglik, converged=converged, iterations=iters, gradient_norm=gnorm,
        warnings=tuple(warnings), names=tuple(names or free_names(spec)), trace=tuple(trace),
        n_resp=n_scale, n_miss=nr.n_miss,
        restart_logliks=tuple(-r[1] * n_scale for r in runs),
        restart_converged=tuple(bool(r[2]) for r in runs),
        fixed=tuple(bool(b) for b in ~mask),
    )


def covariance(fit_point, cells: CellTable, strata: Sequence[Stratum], nr: NonresponseDesign,
               fixed=None, loglik: Callable | None = None):
    """Inverse observed information in free coordinates, and its structural image.

    Returns ``(cov_free, cov_structural, warnings)``.  Coordinates flagged in
    ``fixed`` get zero variance.  ``loglik`` overrides the model log-likelihood
    (a function of the free vector); tests use it to plug in known surfaces.
    """
    v = np.asarray(fit_point, dtype=float)
    spec = cells.spec if cells is not None else None
    n = v.size
    fixed = np.zeros(n, dtype=bool) if fixed is None else np.asarray(fixed, dtype=bool)
    act = ~fixed
    if loglik is None:
        loglik = lambda u: log_likelihood(cells, strata, nr, unpack(u, spec))

    def sub(w):
        u = v.copy()
        u[act] = w
        return loglik(u)

    warnings = []
    H = numdiff.hessian(sub, v[act])
    if not np.all(np.isfinite(H)):
        raise ValueError("non-finite entries in the numerical Hessian")
    info = -(H + H.T) / 2.0
    eig = np.linalg.eigvalsh(info) if info.size else np.array([1.0])
    if eig.min() <= 0:
        warnings.append("information matrix singular")
        cov_act = np.linalg.pinv(info, hermitian=True)
    else:
        cov_act = np.linalg.inv(info)
    cov_act = (cov_act + cov_act.T) / 2.0
    cov_free = np.zeros((n, n))
    cov_free[np.ix_(act, act)] = cov_act

    if spec is not None:
        J = numdiff.jacobian(lambda u: unpack(u, spec).structural_vector(), v)
    else:
        J = np.eye(n)
    cov_struct = J @ cov_free @ J.T
    cov_struct = (cov_struct + cov_struct.T) / 2.0
    return cov_free, cov_struct, warnings


def delta_method(g: Callable, fit: FitResult):
    """Values, standard errors and covariance of ``g(free)`` by first-order propagation."""
    values = np.atleast_1d(np.asarray(g(fit.free), dtype=float))
    G = numdiff.jacobian(g, fit.free).reshape(values.size, fit.free.size)
    cov = G @ fit.cov_free @ G.T
    cov = (cov + cov.T) / 2.0
    return values, np.sqrt(np.clip(np.diag(cov), 0.0, None)), cov
