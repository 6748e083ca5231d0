"""Panel-based Gauss-Legendre quadrature for singular integrands.

Integrands here typically behave like ``y**(-p)`` with ``p < 1`` near an
endpoint.  Instead of a general-purpose adaptive scheme we split the
domain into panels chosen by the caller (geometric toward singular or
multi-scale regions), straighten endpoint power singularities with an
explicit substitution, and double the node count per panel until the
estimate stabilizes.
"""
from __future__ import annotations

import numpy as np

from .errors import QuadratureError

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    rule = _GL_CACHE.get(n)
    if rule is None:
        rule = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = rule
    return rule


def gl_integrate(f, lo: float, hi: float, n: int) -> float:
    """Fixed n-node Gauss-Legendre estimate of ``int_lo^hi f``."""
    x, w = _gl_rule(n)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    return float(half * np.sum(w * f(mid + half * x)))


def integrate_panels(f, edges, rel_tol: float = 1e-11, abs_tol: float = 1e-14,
                     n_start: int = 32, max_doublings: int = 6,
                     scale_hint: float = 0.0,
                     raise_on_failure: bool = True) -> float:
    """Integrate ``f`` over consecutive panels with node-doubling control.

    Each panel is refined until two successive estimates agree within
    ``max(abs_tol, rel_tol * scale)`` where the scale is the largest of
    the running total, the panel itself and ``scale_hint`` (callers pass
    a rough whole-integral estimate so that small panels are not held to
    a tolerance far below their contribution).  On failure raises
    :class:`QuadratureError` carrying the achieved error estimate.
    """
    edges = [float(e) for e in edges]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        prev = gl_integrate(f, lo, hi, n_start)
        n = n_start
        converged = False
        err = np.inf
        for _ in range(max_doublings):
            n *= 2
            cur = gl_integrate(f, lo, hi, n)
            err = abs(cur - prev)
            prev = cur
            scale = max(abs(total + cur), abs(cur), abs(scale_hint))
            if err <= max(abs_tol, rel_tol * scale):
                converged = True
                break
        if not converged and raise_on_failure:
            raise QuadratureError(
                f"panel [{lo:g}, {hi:g}] did not converge "
                f"(achieved error estimate {err:.3e})",
                achieved_error=err,
            )
        total += prev
    return total


def straighten_left_power(f, lo: float, hi: float, p: float):
    """Substitution removing a ``(y-lo)**(-p)`` singularity at ``lo``.

    Returns ``(g, 0, 1)`` with ``int_lo^hi f = int_0^1 g``; uses
    ``y = lo + (hi-lo) * v**s`` with ``s = 1/(1-p)``.
    """
    if not p < 1.0:
        raise ValueError(f"singularity exponent must be < 1, got {p}")
    s = 1.0 / (1.0 - p)
    width = hi - lo

    def g(v):
        v = np.asarray(v, dtype=float)
        y = lo + width * v ** s
        return f(y) * width * s * v ** (s - 1.0)

    return g, 0.0, 1.0


def straighten_right_power(f, lo: float, hi: float, p: float):
    """Mirror of :func:`straighten_left_power` for a singularity at ``hi``."""
    if not p < 1.0:
        raise ValueError(f"singularity exponent must be < 1, got {p}")
    s = 1.0 / (1.0 - p)
    width = hi - lo

    def g(v):
        v = np.asarray(v, dtype=float)
        y = hi - width * v ** s
        return f(y) * width * s * v ** (s - 1.0)

    return g, 0.0, 1.0


def geometric_edges(lo: float, hi: float, factor: float = 10.0,
                    max_panels: int = 64) -> list[float]:
    """Edges from ``lo`` to ``hi``, geometric toward ``lo`` (both > 0)."""
    if lo <= 0.0:
        raise ValueError("geometric_edges needs lo > 0")
    edges = [hi]
    cur = hi
    for _ in range(max_panels):
        cur /= factor
        if cur <= lo * (1.0 + 1e-12):
            break
        edges.append(cur)
    edges.append(lo)
    return sorted(set(edges))
