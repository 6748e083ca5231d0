"""Drift functionals of the block-counting process.

``psi(q) = int ((1-y)**q - 1 + q*y) y**-2 Lambda(dy)`` is the expected
block-decrease rate out of ``q`` blocks; ``psi_star`` replaces
``(1-y)**q`` by ``exp(-q*y)``.  Both grow like ``c_psi * q**(1+beta)``
and their ratio-to-power constants (``c_psi``, ``K1``, ``K``, ``c_int``)
drive every asymptotic statement downstream.

Evaluation strategy: the parametric measure kinds admit exact closed
forms through analytically-continued Beta integrals; a singularity-split
quadrature with a series-stabilized integrand is the generic reference
path and doubles as an independent cross-check of the closed forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as _gamma
from scipy.special import gammaln

from . import measure
from .errors import DomainError, NumericError
from .measure import LambdaSpec, integral_against
from .quadrature import geometric_edges, integrate_panels, straighten_left_power

_SERIES_CUT = 1e-3  # q*y below this evaluates the integrand by series


def _ln_gamma_ratio(x, d: float):
    """``lngamma(x) - lngamma(x - d)``, stable for huge ``x``.

    Direct subtraction loses digits once ``lngamma`` exceeds ~1e9, so
    large arguments use a Stirling form written entirely in ``log1p``
    differences.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1e6
    if np.any(small):
        xs = x[small]
        out[small] = gammaln(xs) - gammaln(xs - d)
    big = ~small
    if np.any(big):
        xb = x[big]
        l1p = np.log1p(-d / xb)
        out[big] = (d * np.log(xb) - (xb - d - 0.5) * l1p - d
                    + (1.0 / 12.0) * (1.0 / xb - 1.0 / (xb - d)))
    return out


def _c_int_closed(beta: float) -> float:
    return math.gamma(1.0 - beta) / (beta * (1.0 + beta))


def _continued_beta_const(beta: float, a: float) -> float:
    """Analytic continuation of ``B(-1-beta, a)``; zero at denominator poles."""
    arg = a - 1.0 - beta
    if abs(arg - round(arg)) < 1e-12 and round(arg) <= 0:
        return 0.0
    return _c_int_closed(beta) * math.gamma(a) / _gamma(arg)


# ---------------------------------------------------------------------------
# stabilized integrands

def _phi_pow(q: float, y: np.ndarray) -> np.ndarray:
    """``(1-y)**q - 1 + q*y`` without cancellation."""
    y = np.asarray(y, dtype=float)
    x = q * y
    out = np.empty_like(y)
    small = x < _SERIES_CUT
    if np.any(small):
        ys = y[small]
        c2 = q * (q - 1.0) / 2.0
        c3 = c2 * (q - 2.0) / 3.0
        c4 = c3 * (q - 3.0) / 4.0
        c5 = c4 * (q - 4.0) / 5.0
        out[small] = ys * ys * (c2 - ys * (c3 - ys * (c4 - ys * c5)))
    big = ~small
    if np.any(big):
        yb = y[big]
        out[big] = np.expm1(q * np.log1p(-yb)) + q * yb
    return out


def _phi_exp(q: float, y: np.ndarray) -> np.ndarray:
    """``exp(-q*y) - 1 + q*y`` without cancellation."""
    x = q * np.asarray(y, dtype=float)
    out = np.empty_like(x)
    small = x < _SERIES_CUT
    xs = x[small]
    out[small] = xs * xs * (0.5 - xs * (1.0 / 6.0 - xs * (1.0 / 24.0 - xs / 120.0)))
    big = ~small
    xb = x[big]
    out[big] = np.expm1(-xb) + xb
    return out


def _phi_hp(q: float, y: np.ndarray) -> np.ndarray:
    """``(1 - exp(-q*U) * (1 + q*U)) / q**2`` with ``U = -log(1-y)``."""
    u = -np.log1p(-np.asarray(y, dtype=float))
    x = q * u
    out = np.empty_like(x)
    small = x < _SERIES_CUT
    xs = x[small]
    out[small] = xs * xs * (0.5 - xs * (1.0 / 3.0 - xs * (0.125 - xs / 30.0)))
    big = ~small
    xb = x[big]
    out[big] = -np.expm1(-xb) - xb * np.exp(-xb)
    return out / (q * q)


@dataclass(frozen=True)
class AsymptoticConstants:
    """Growth and limit-law constants derived from a measure.

    ``c_psi``: coefficient of the ``q**(1+beta)`` growth of the drift;
    ``c_int``: the measure-free integral it factors through; ``K1``: the
    coefficient of the power-law speed ``K1 * t**(-1/beta)``; ``K``: the
    scale of the stable limit noise.
    """

    beta: float
    A: float
    c_psi: float
    c_int: float
    K1: float
    K: float


def asymptotic_constants(spec: LambdaSpec, check_tol: float = 1e-6) -> AsymptoticConstants:
    """Compute constants, cross-checking ``c_int`` quadrature vs closed form."""
    beta, A = spec.beta, spec.A
    c_int = _c_int_closed(beta)
    c_quad = _c_int_quadrature(beta)
    if abs(c_quad / c_int - 1.0) > check_tol:
        raise NumericError(
            f"c_int routes disagree: closed {c_int!r} vs quadrature {c_quad!r}")
    c_psi = A * c_int
    K1 = ((1.0 + beta) / (A * math.gamma(1.0 - beta))) ** (1.0 / beta)
    # cos(pi*(1+beta)/2) < 0 on (0,1), so the product under the root is positive
    K = (-A * c_int * math.cos(math.pi * (1.0 + beta) / 2.0)) ** (1.0 / (1.0 + beta))
    if not (c_psi > 0.0 and K1 > 0.0 and K > 0.0):
        raise NumericError("asymptotic constants must be strictly positive")
    return AsymptoticConstants(beta=beta, A=A, c_psi=c_psi, c_int=c_int, K1=K1, K=K)


def _c_int_quadrature(beta: float) -> float:
    """``int_0^inf (exp(-x) - 1 + x) x**(-2-beta) dx`` by panels + tail."""
    cut = 40.0
    f = lambda x: _phi_exp(1.0, x) * x ** (-2.0 - beta)
    g, lo, hi = straighten_left_power(f, 0.0, 1.0, beta)
    total = integrate_panels(g, [lo, 0.5, hi], rel_tol=1e-12)
    total += integrate_panels(f, geometric_edges(1.0, cut, factor=4.0), rel_tol=1e-12)
    # beyond the cut the exponential is below 4e-18; integrate x - 1 exactly
    total += cut ** (-beta) / beta - cut ** (-1.0 - beta) / (1.0 + beta)
    return total


class PsiEvaluator:
    """Evaluates ``psi``, ``psi_star``, ``h = psi/q`` and ``h'``.

    ``method`` is ``"auto"`` (closed forms where the kind admits them),
    ``"closed"`` or ``"quadrature"``.  An optional monotone log-log cache
    can accelerate repeated ``psi`` evaluation; it is off by default and
    must only be enabled before sharing the evaluator across workers.
    """

    def __init__(self, spec: LambdaSpec, method: str = "auto",
                 rel_tol: float = 1e-9, abs_tol: float = 1e-12):
        if method not in ("auto", "closed", "quadrature"):
            raise DomainError(f"unknown method {method!r}")
        has_closed = spec.kind in ("beta", "perturbed_power")
        if method == "closed" and not has_closed:
            raise DomainError(f"kind {spec.kind!r} has no closed form")
        self.spec = spec
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol
        self._closed = has_closed if method == "auto" else (method == "closed")
        self.constants = asymptotic_constants(spec)
        self._cache = None

    # -- public surface ----------------------------------------------------

    def psi(self, q):
        q_arr, scalar = self._check_domain(q, 1.0, "psi")
        if self._cache is not None:
            out = self._cache(q_arr)
        elif self._closed:
            out = self._psi_closed(q_arr)
        else:
            out = self._map_quadrature(self._psi_quad_scalar, q_arr)
        out = np.maximum(out, 0.0)
        return float(out[0]) if scalar else out

    def psi_star(self, q):
        q_arr, scalar = self._check_domain(q, 0.0, "psi_star")
        out = self._map_quadrature(self._psi_star_quad_scalar, q_arr)
        return float(out[0]) if scalar else out

    def h(self, q):
        q_arr, scalar = self._check_domain(q, 1.0, "h")
        out = self.psi(q_arr) / q_arr
        return float(out[0]) if scalar else out

    def h_prime(self, q):
        q_arr, scalar = self._check_domain(q, 1.0, "h_prime")
        if np.any(q_arr <= 1.0):
            raise DomainError("h_prime needs q > 1")
        out = self._map_quadrature(self._h_prime_quad_scalar, q_arr)
        return float(out[0]) if scalar else out

    def psi_truncated(self, q, a: float):
        """Drift of the measure restricted to [0, a]; test hook."""
        q_arr, scalar = self._check_domain(q, 1.0, "psi_truncated")
        out = self._map_quadrature(
            lambda qq: self._split_integral(_phi_pow, qq, hi=a), q_arr)
        return float(out[0]) if scalar else out

    def psi_star_truncated(self, q, a: float):
        q_arr, scalar = self._check_domain(q, 0.0, "psi_star_truncated")
        out = self._map_quadrature(
            lambda qq: self._split_integral(_phi_exp, qq, hi=a), q_arr)
        return float(out[0]) if scalar else out

    def check_consistency(self, q: float, rel_tol: float = 1e-7) -> None:
        """Closed form vs quadrature agreement at one point."""
        if not self._closed:
            return
        c = float(self._psi_closed(np.atleast_1d(float(q)))[0])
        s = self._psi_quad_scalar(float(q))
        if abs(s - c) > rel_tol * max(abs(c), 1e-300):
            raise NumericError(f"psi routes disagree at q={q}: {c!r} vs {s!r}")

    def enable_cache(self, q_max: float = 1e13, points_per_decade: int = 24) -> None:
        """Monotone log-log interpolation of psi; optional acceleration."""
        from scipy.interpolate import PchipInterpolator
        qs = np.geomspace(1.0 + 1e-9, q_max, max(
            16, int(points_per_decade * math.log10(q_max))))
        vals = self._psi_closed(qs) if self._closed else \
            self._map_quadrature(self._psi_quad_scalar, qs)
        interp = PchipInterpolator(np.log(qs), np.log(np.maximum(vals, 1e-300)))
        lo, hi = qs[0], qs[-1]

        def cached(q_arr):
            if np.any(q_arr > hi):
                raise DomainError(f"cache covers q <= {hi:g}")
            out = np.exp(interp(np.log(np.maximum(q_arr, lo))))
            out[q_arr <= lo] = 0.0
            return out

        self._cache = cached

    # -- internals -----------------------------------------------------------

    @staticmethod
    def _check_domain(q, lower: float, name: str):
        q_arr = np.atleast_1d(np.asarray(q, dtype=float))
        if np.any(~np.isfinite(q_arr)) or np.any(q_arr < lower):
            raise DomainError(f"{name} needs q >= {lower}")
        return q_arr, np.ndim(q) == 0

    def _psi_closed(self, q: np.ndarray) -> np.ndarray:
        spec = self.spec
        if spec.kind == "beta":
            beta, a = spec.beta, spec.a
            c_int = _c_int_closed(beta)
            bnorm = math.exp(gammaln(1.0 - beta) + gammaln(a) - gammaln(1.0 - beta + a))
            growth = c_int * np.exp(_ln_gamma_ratio(q + a, 1.0 + beta))
            const = _continued_beta_const(beta, a)
            return (growth - const) / bnorm - q * (a - beta) / beta
        out = np.zeros_like(q)
        for coef, bx in ((spec.c0, spec.beta), (spec.c1, spec.beta - spec.alpha)):
            if coef == 0.0:
                continue
            c_int = _c_int_closed(bx)
            growth = c_int * np.exp(_ln_gamma_ratio(q + 1.0, 1.0 + bx))
            out += coef * (growth + 1.0 / (1.0 + bx) - q / bx)
        return out

    def _map_quadrature(self, fn, q_arr: np.ndarray) -> np.ndarray:
        return np.array([fn(float(qq)) for qq in q_arr])

    def _split_integral(self, phi, q: float, hi: float = 1.0) -> float:
        if q == 0.0 or (phi is _phi_pow and q == 1.0):
            return 0.0
        splits = []
        if 0.0 < 1.0 / q < hi:
            splits.append(1.0 / q)
        h = lambda y: phi(q, y) / (y * y)
        return integral_against(self.spec, h, 0.0, hi, sing_exp_at_0=0.0,
                                extra_splits=splits, rel_tol=self.rel_tol)

    def _psi_quad_scalar(self, q: float) -> float:
        return self._split_integral(_phi_pow, q)

    def _psi_star_quad_scalar(self, q: float) -> float:
        return self._split_integral(_phi_exp, q)

    def _h_prime_quad_scalar(self, q: float) -> float:
        return self._split_integral(_phi_hp, q)
