"""Speed of coming down from infinity.

``v_t`` solves ``t = int_{v_t}^inf dq / psi(q)``; ``v*_t`` is the same
construction with ``psi_star``; ``w_t = K1 * t**(-1/beta)`` is the pure
power-law proxy.  Inversion goes through quadrature of ``1/psi`` plus
bracketed root finding rather than integrating the stiff ODE
``v' = -psi(v)``: the integral form is self-validating via the
round-trip ``t -> v -> t``.

The substitution ``x = q**(-beta)`` turns the upper tail of the
defining integral into a bounded smooth integrand (``-> 1/c_psi`` at
``x = 0``), so no explicit tail cutoff is needed where the drift is
evaluated exactly; kinds evaluated through an interpolation cache fall
back to the ``c_psi * q**(1+beta)`` asymptote beyond the cache and the
table records that error bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DomainError, NumericError
from .measure import LambdaSpec
from .psi import PsiEvaluator, asymptotic_constants
from .quadrature import geometric_edges, integrate_panels

_CACHE_Q_MAX = 1e14


class SpeedCalculator:
    """Shared machinery for inverting a drift functional into a speed."""

    def __init__(self, spec: LambdaSpec, use_star: bool = False,
                 evaluator: PsiEvaluator | None = None, rel_tol: float = 1e-9):
        self.spec = spec
        self.use_star = use_star
        self.evaluator = evaluator or PsiEvaluator(spec)
        self.constants = self.evaluator.constants
        self.rel_tol = rel_tol
        self._q_floor = 1.0 if not use_star else 0.0
        self._drift_vec = self._build_drift_vec()

    # -- drift evaluation, vectorized over q --------------------------------

    def _build_drift_vec(self):
        ev = self.evaluator
        if not self.use_star and ev._closed:
            return ev.psi
        # quadrature-backed kinds go through a monotone log-log cache
        fn = ev.psi_star if self.use_star else ev.psi
        q_lo = 1e-4 if self.use_star else 1.0 + 1e-9
        qs = np.geomspace(q_lo, _CACHE_Q_MAX, 620)
        vals = np.array([fn(float(q)) for q in qs])
        interp = PchipInterpolator(np.log(qs), np.log(np.maximum(vals, 1e-300)))
        c_psi, beta = self.constants.c_psi, self.constants.beta

        def drift(q):
            q = np.asarray(q, dtype=float)
            out = np.empty_like(q)
            inside = q <= qs[-1]
            out[inside] = np.exp(interp(np.log(np.maximum(q[inside], qs[0]))))
            out[~inside] = c_psi * q[~inside] ** (1.0 + beta)
            return out

        return drift

    # -- the defining integral ----------------------------------------------

    def time_at(self, v: float) -> float:
        """``int_v^inf dq / drift(q)`` (the time at which the speed is v)."""
        v = float(v)
        if not v > self._q_floor:
            raise DomainError(f"speed level must exceed {self._q_floor}, got {v}")
        beta = self.constants.beta
        drift = self._drift_vec
        total = 0.0
        q_mid = max(4.0, 2.0 * self._q_floor + 2.0)
        if v < q_mid:
            # near the absorbing level the integrand blows up like
            # 1/(q - floor); dyadic panels toward v keep GL accurate
            gap_edges = geometric_edges(v - self._q_floor, q_mid - self._q_floor,
                                        factor=2.0)
            edges = [self._q_floor + e for e in gap_edges]
            total += integrate_panels(lambda q: 1.0 / drift(q), edges,
                                      rel_tol=self.rel_tol * 0.01, n_start=48)
            q_tail = q_mid
        else:
            q_tail = v
        x_hi = q_tail ** (-beta)

        def transformed(x):
            q = x ** (-1.0 / beta)
            return x ** (-1.0 - 1.0 / beta) / drift(q)

        total += integrate_panels(transformed, np.linspace(0.0, x_hi, 5),
                                  rel_tol=self.rel_tol * 0.01, n_start=48) / beta
        return total

    # -- inversion -----------------------------------------------------------

    def speed_at(self, t: float) -> float:
        """Solve ``time_at(v) = t`` by bracketing, bisection, then secant."""
        t = float(t)
        if not t > 0.0:
            raise DomainError(f"time must be positive, got {t}")
        c = self.constants
        floor = self._q_floor
        guess = max(c.K1 * t ** (-1.0 / c.beta), floor + 1e-9)
        lo = hi = guess
        f_lo = f_hi = self.time_at(guess)
        for _ in range(200):
            if f_lo > t:
                break
            lo = floor + (lo - floor) / 4.0
            f_lo = self.time_at(lo)
        else:
            raise NumericError(f"failed to bracket the speed from below at t={t}")
        for _ in range(200):
            if f_hi < t:
                break
            hi = floor + (hi - floor) * 4.0
            f_hi = self.time_at(hi)
        else:
            raise NumericError(f"failed to bracket the speed from above at t={t}")

        # bisection in the log of the gap above the floor
        g_lo, g_hi = math.log(lo - floor), math.log(hi - floor)
        for _ in range(30):
            g_mid = 0.5 * (g_lo + g_hi)
            mid = floor + math.exp(g_mid)
            if self.time_at(mid) > t:
                g_lo = g_mid
            else:
                g_hi = g_mid
            if g_hi - g_lo < 1e-3:
                break
        # secant polish on g -> time_at(floor + e**g) - t
        ga, gb = g_lo, g_hi
        fa = self.time_at(floor + math.exp(ga)) - t
        fb = self.time_at(floor + math.exp(gb)) - t
        for _ in range(60):
            if fb == fa:
                break
            gc = gb - fb * (gb - ga) / (fb - fa)
            gc = min(max(gc, g_lo), g_hi)
            fc = self.time_at(floor + math.exp(gc)) - t
            ga, fa, gb, fb = gb, fb, gc, fc
            if abs(gb - ga) < 1e-12 or fc == 0.0:
                break
        else:
            raise NumericError(f"speed inversion did not converge at t={t}")
        return floor + math.exp(gb)


@dataclass
class SpeedTable:
    """Tabulated speed with monotone log-log interpolation.

    Below ``t_min`` evaluation switches to the power-law tail
    ``K1 * t**(-1/beta)`` scaled to match the table at ``t_min``
    (first-order accurate, documented approximate); queries below
    ``t_min / 10`` are refused.
    """

    spec: LambdaSpec
    ts: np.ndarray
    vs: np.ndarray
    beta: float
    K1: float
    c_psi: float
    t_min: float
    t_max: float
    tail_ratio: float
    tail_error_bound: float
    _interp: PchipInterpolator = field(repr=False)

    def v(self, t):
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(ts <= 0.0):
            raise DomainError("speed is defined for t > 0")
        if np.any(ts < self.t_min / 10.0) or np.any(ts > self.t_max * (1 + 1e-12)):
            raise DomainError(
                f"t outside the table range [{self.t_min / 10.0:g}, {self.t_max:g}]")
        out = np.empty_like(ts)
        low = ts < self.t_min
        out[low] = self.tail_ratio * self.K1 * ts[low] ** (-1.0 / self.beta)
        out[~low] = np.exp(self._interp(np.log(ts[~low])))
        return float(out[0]) if np.ndim(t) == 0 else out


def build_speed_table(spec: LambdaSpec, t_min: float, t_max: float, n: int = 64,
                      calculator: SpeedCalculator | None = None) -> SpeedTable:
    """Solve the defining integral on a log grid and wrap it for interpolation."""
    if not (0.0 < t_min < t_max):
        raise DomainError(f"need 0 < t_min < t_max, got [{t_min}, {t_max}]")
    if n < 16:
        raise DomainError(f"grid needs at least 16 points, got {n}")
    calc = calculator or SpeedCalculator(spec)
    ts = np.geomspace(t_min, t_max, int(n))
    vs = np.array([calc.speed_at(float(t)) for t in ts])
    if np.any(np.diff(vs) >= 0.0) or np.any(vs <= 1.0):
        raise NumericError("speed table must be strictly decreasing and > 1")
    c = calc.constants
    limit = (1.0 + c.beta) / (c.A * math.gamma(1.0 - c.beta))
    asym = t_min * vs[0] ** c.beta
    if t_min <= 1e-4 and abs(asym / limit - 1.0) > 0.02:
        raise NumericError(
            f"t * v**beta = {asym:.6f} at t_min, expected {limit:.6f} within 2%")
    interp = PchipInterpolator(np.log(ts), np.log(vs))
    tail_ratio = vs[0] / (c.K1 * t_min ** (-1.0 / c.beta))
    tail_bound = 0.0 if calc.evaluator._closed else _CACHE_Q_MAX ** (-c.beta)
    return SpeedTable(spec=spec, ts=ts, vs=vs, beta=c.beta, K1=c.K1,
                      c_psi=c.c_psi, t_min=t_min, t_max=t_max,
                      tail_ratio=tail_ratio, tail_error_bound=tail_bound,
                      _interp=interp)


def speed_v(table: SpeedTable, t):
    """Interpolated speed ``v_t``; power-law extension below the grid."""
    return table.v(t)


def speed_v_star(spec: LambdaSpec, t, calculator: SpeedCalculator | None = None):
    """Speed built from ``psi_star``; satisfies ``|log(v/v*)| <= t``."""
    calc = calculator or SpeedCalculator(spec, use_star=True)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.array([calc.speed_at(float(tt)) for tt in ts])
    return float(out[0]) if np.ndim(t) == 0 else out


def speed_w(spec: LambdaSpec, t):
    """Power-law proxy ``K1 * t**(-1/beta)``."""
    c = asymptotic_constants(spec)
    ts = np.asarray(t, dtype=float)
    if np.any(ts <= 0.0):
        raise DomainError("speed is defined for t > 0")
    out = c.K1 * ts ** (-1.0 / c.beta)
    return float(out) if np.ndim(t) == 0 else out


def time_at_count(spec: LambdaSpec, n: float,
                  calculator: SpeedCalculator | None = None) -> float:
    """Time at which the speed passes the level ``n`` (v_t = n)."""
    calc = calculator or SpeedCalculator(spec)
    return calc.time_at(float(n))
