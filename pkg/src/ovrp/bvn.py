"""Univariate and bivariate standard normal probabilities.

The bivariate CDF follows the Drezner-Wesolowsky / Genz scheme: Gauss-Legendre
quadrature of Plackett's identity for moderate correlation, and an asymptotic
expansion plus quadrature of the remainder when ``|rho| >= 0.925``.  The
correlation is a scalar per call; the bounds broadcast as arrays, which is how
the likelihood evaluates a whole threshold grid in one shot.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

__all__ = [
    "KernelError",
    "RectBounds",
    "std_normal_cdf",
    "bvn_cdf",
    "rect_prob",
    "rect_probs",
    "rect_grid",
]

_TWOPI = 2.0 * math.pi
_NEG_TOL = 1e-12

# Half of the symmetric Gauss-Legendre rules of order 6, 12 and 20 on [-1, 1].
_GL_NODES = (
    np.array([-0.9324695142031522, -0.6612093864662647, -0.2386191860831970]),
    np.array([
        -0.9815606342467191, -0.9041172563704750, -0.7699026741943050,
        -0.5873179542866171, -0.3678314989981802, -0.1252334085114692,
    ]),
    np.array([
        -0.9931285991850949, -0.9639719272779138, -0.9122344282513259,
        -0.8391169718222188, -0.7463319064601508, -0.6360536807265150,
        -0.5108670019508271, -0.3737060887154196, -0.2277858511416451,
        -0.07652652113349733,
    ]),
)
_GL_WEIGHTS = (
    np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
    np.array([
        0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
        0.2031674267230659, 0.2334925365383547, 0.2491470458134029,
    ]),
    np.array([
        0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
        0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
        0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
        0.1527533871307259,
    ]),
)


class KernelError(ArithmeticError):
    """A rectangle probability came out materially negative."""


@dataclass(frozen=True)
class RectBounds:
    """Half-open rectangle ``(lo1, hi1] x (lo2, hi2]``; bounds may be infinite."""

    lo1: float
    hi1: float
    lo2: float
    hi2: float

    def __post_init__(self):
        vals = (self.lo1, self.hi1, self.lo2, self.hi2)
        if any(math.isnan(v) for v in vals):
            raise ValueError("rectangle bounds must not be NaN")
        if self.lo1 > self.hi1 or self.lo2 > self.hi2:
            raise ValueError(f"invalid rectangle {vals}: need lo <= hi")


def _check_nan(*arrays):
    for a in arrays:
        if np.isnan(a).any():
            raise ValueError("NaN passed to a normal probability kernel")


def std_normal_cdf(x):
    """Standard normal CDF; accepts scalars or arrays, maps -inf/+inf to 0/1."""
    arr = np.asarray(x, dtype=float)
    _check_nan(arr)
    out = ndtr(arr)
    return float(out) if out.ndim == 0 else out


def _check_rho(rho):
    rho = float(rho)
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    return rho


def _bvnu(h, k, r):
    """P(X > h, Y > k) for finite arrays h, k and scalar correlation r."""
    ar = abs(r)
    ng = 0 if ar < 0.3 else (1 if ar < 0.75 else 2)
    x, w = _GL_NODES[ng], _GL_WEIGHTS[ng]
    hk = h * k

    if ar < 0.925:
        hs = 0.5 * (h * h + k * k)
        asr = math.asin(r)
        sn = np.sin(asr * np.concatenate(((x + 1.0) / 2.0, (1.0 - x) / 2.0)))
        ww = np.concatenate((w, w))
        expo = (sn * hk[..., None] - hs[..., None]) / (1.0 - sn * sn)
        bvn = np.exp(expo) @ ww
        return bvn * asr / (2.0 * _TWOPI) + ndtr(-h) * ndtr(-k)

    if r < 0:
        k = -k
        hk = -hk
    bvn = np.zeros(np.broadcast(h, k).shape)
    if ar < 1.0:
        as_ = (1.0 - r) * (1.0 + r)
        a = math.sqrt(as_)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 16.0
        bvn = a * np.exp(-(bs / as_ + hk) / 2.0) * (
            1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0
        )
        with np.errstate(over="ignore", invalid="ignore"):
            b = np.sqrt(bs)
            tail = (
                np.exp(-hk / 2.0) * math.sqrt(_TWOPI) * ndtr(-b / a) * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
            )
        bvn = bvn - np.where(hk > -160.0, tail, 0.0)
        a /= 2.0
        bs_, hk_, c_, d_ = bs[..., None], hk[..., None], c[..., None], d[..., None]
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            xs = (a * (x + 1.0)) ** 2
            rs = np.sqrt(1.0 - xs)
            t1 = np.exp(-bs_ / (2.0 * xs) - hk_ / (1.0 + rs)) / rs \
                - np.exp(-(bs_ / xs + hk_) / 2.0) * (1.0 + c_ * xs * (1.0 + d_ * xs))
            xs = as_ * (1.0 - x) ** 2 / 4.0
            rs = np.sqrt(1.0 - xs)
            t2 = np.exp(-(bs_ / xs + hk_) / 2.0) * (
                np.exp(-hk_ * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
                - (1.0 + c_ * xs * (1.0 + d_ * xs))
            )
        bvn = bvn + a * (np.nan_to_num(t1) @ w + np.nan_to_num(t2) @ w)
        bvn = -bvn / _TWOPI
    if r > 0:
        return bvn + ndtr(-np.maximum(h, k))
    if r < 0:
        return -bvn + np.maximum(0.0, ndtr(-h) - ndtr(-k))
    return bvn


def bvn_cdf(a, b, rho):
    """P(X <= a, Y <= b) for a standard bivariate normal with correlation ``rho``.

    ``a`` and ``b`` broadcast against each other and may hold +-inf; infinite
    bounds short-circuit to univariate CDFs.  ``|rho| == 1`` uses the degenerate
    closed form (``Phi(min(a, b))`` or ``max(0, Phi(a) - Phi(-b))``).
    """
    rho = _check_rho(rho)
    a_arr, b_arr = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    _check_nan(a_arr, b_arr)
    out = np.empty(a_arr.shape)

    zero = np.isneginf(a_arr) | np.isneginf(b_arr)
    a_top = np.isposinf(a_arr) & ~zero
    b_top = np.isposinf(b_arr) & ~zero & ~a_top
    finite = ~(zero | a_top | b_top)

    out[zero] = 0.0
    out[a_top] = ndtr(b_arr[a_top])
    out[b_top] = ndtr(a_arr[b_top])
    if finite.any():
        out[finite] = _bvnu(-a_arr[finite], -b_arr[finite], rho)
    np.clip(out, 0.0, 1.0, out=out)
    return float(out) if out.ndim == 0 else out


def rect_probs(lo1, hi1, lo2, hi2, rho, counter: Counter | None = None):
    """Vectorized rectangle probabilities by inclusion-exclusion of four CDFs.

    Results in ``(-1e-12, 0)`` are clamped to zero and tallied under
    ``counter["negative_clamp"]``; anything more negative raises KernelError.
    """
    p = (
        bvn_cdf(hi1, hi2, rho) - bvn_cdf(lo1, hi2, rho)
        - bvn_cdf(hi1, lo2, rho) + bvn_cdf(lo1, lo2, rho)
    )
    p = np.asarray(p, dtype=float)
    neg = p < 0.0
    if neg.any():
        if (p[neg] <= -_NEG_TOL).any():
            raise KernelError(f"rectangle probability {p[neg].min():.3e} below clamp tolerance")
        if counter is not None:
            counter["negative_clamp"] += int(neg.sum())
    p = np.clip(p, 0.0, 1.0)
    return float(p) if p.ndim == 0 else p


def rect_prob(bounds: RectBounds, rho: float, counter: Counter | None = None) -> float:
    return rect_probs(bounds.lo1, bounds.hi1, bounds.lo2, bounds.hi2, rho, counter)


def rect_grid(u, v, rho, counter: Counter | None = None):
    """Probabilities of every rectangle cut out by two sorted bound vectors.

    ``u`` has shape ``(..., I+1)`` and ``v`` shape ``(..., J+1)``, each running
    from -inf to +inf.  Returns shape ``(..., I, J)`` with entry ``[i, j]`` equal
    to ``P(u_i < X <= u_{i+1}, v_j < Y <= v_{j+1})``.  Evaluating the CDF once
    per grid corner shares the corners between adjacent rectangles.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    corners = bvn_cdf(u[..., :, None], v[..., None, :], rho)
    p = np.diff(np.diff(corners, axis=-2), axis=-1)
    neg = p < 0.0
    if neg.any():
        if (p[neg] <= -_NEG_TOL).any():
            raise KernelError(f"rectangle probability {p[neg].min():.3e} below clamp tolerance")
        if counter is not None:
            counter["negative_clamp"] += int(neg.sum())
    return np.clip(p, 0.0, 1.0)
