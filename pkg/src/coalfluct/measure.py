"""Driving measures on (0,1) and the merge rates they induce.

A measure here is described by its density ``g`` near zero: ``g(y) ~ A *
y**(-beta)`` with ``beta in (0, 1)``, which is exactly the regime where
the block-counting process comes down from infinity with a power-law
speed.  Three parametric families are supported:

``beta``
    ``g(y) = y**(-beta) * (1-y)**(a-1) / B(1-beta, a)`` -- a probability
    measure for any ``a > 0``.
``perturbed_power``
    ``g(y) = y**(-beta) * (c0 + c1 * y**alpha)`` on (0, 1]; not
    normalized.  Used to probe sensitivity to the regularity of
    ``y**beta * g(y) - A`` near zero.
``tabulated``
    a grid of ``(y, g(y))`` values with declared ``beta``, ``A``, ``y0``;
    interpolated log-log below ``y0`` (power-law faithful) and linearly
    above.

All operations are pure; spec and kernel objects are immutable after
construction and safe to share across workers.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, betaln, gammaln

from .errors import CapacityError, DomainError, NumericError
from .quadrature import (geometric_edges, gl_integrate, integrate_panels,
                         straighten_left_power, straighten_right_power)

DEFAULT_MAX_BLOCKS = 50_000

_VALIDATION_GRID = np.geomspace(1e-9, 1.0 - 1e-9, 257)
_MASS_RTOL = 1e-10


@dataclass(frozen=True)
class LambdaSpec:
    """Validated description of a driving measure.

    ``beta`` is the singularity exponent, ``A = lim y**beta * g(y)``,
    ``y0`` the threshold below which the density form is guaranteed, and
    ``total_mass`` the measure of (0, 1).  Kind-specific parameters are
    ``None`` when unused.
    """

    kind: str
    beta: float
    A: float
    y0: float
    total_mass: float
    a: float | None = None
    alpha: float | None = None
    c0: float | None = None
    c1: float | None = None
    grid_y: tuple[float, ...] | None = None
    grid_g: tuple[float, ...] | None = None

    def label(self) -> str:
        if self.kind == "beta":
            return f"beta({self.beta:g},{self.a:g})"
        if self.kind == "perturbed_power":
            return f"perturbed_power({self.beta:g},{self.alpha:g},{self.c0:g},{self.c1:g})"
        return f"tabulated(beta={self.beta:g},n={len(self.grid_y)})"


def _check_beta_exponent(beta: float) -> float:
    beta = float(beta)
    if not 0.0 < beta < 1.0:
        raise DomainError(f"singularity exponent beta must lie in (0,1), got {beta}")
    return beta


def beta_family(beta: float, a: float) -> LambdaSpec:
    """Probability measure with density ``y**-beta (1-y)**(a-1) / B(1-beta, a)``."""
    beta = _check_beta_exponent(beta)
    a = float(a)
    if a <= 0.0:
        raise DomainError(f"beta family needs a > 0, got {a}")
    A = math.exp(-betaln(1.0 - beta, a))
    return LambdaSpec(kind="beta", beta=beta, A=A, y0=1.0, total_mass=1.0, a=a)


def perturbed_power(beta: float, alpha: float, c0: float = 1.0, c1: float = 1.0) -> LambdaSpec:
    """Density ``y**-beta (c0 + c1 y**alpha)`` on (0, 1]; mass need not be 1."""
    beta = _check_beta_exponent(beta)
    alpha = float(alpha)
    c0, c1 = float(c0), float(c1)
    if alpha <= 0.0:
        raise DomainError(f"perturbation exponent alpha must be > 0, got {alpha}")
    if c0 <= 0.0 or c1 < 0.0:
        raise DomainError("perturbed power needs c0 > 0 and c1 >= 0")
    if alpha >= beta:
        # keeps every closed form on the branch where both power pieces
        # are singular; the regimes of interest all satisfy alpha < beta
        raise DomainError(f"perturbed power requires alpha < beta, got alpha={alpha}, beta={beta}")
    mass = c0 / (1.0 - beta) + c1 / (1.0 + alpha - beta)
    return LambdaSpec(kind="perturbed_power", beta=beta, A=c0, y0=1.0,
                      total_mass=mass, alpha=alpha, c0=c0, c1=c1)


def tabulated_density(grid_y, grid_g, beta: float, A: float, y0: float) -> LambdaSpec:
    """Measure given by density samples; power-law continued below the grid."""
    beta = _check_beta_exponent(beta)
    A = float(A)
    y0 = float(y0)
    ys = np.asarray(grid_y, dtype=float)
    gs = np.asarray(grid_g, dtype=float)
    if A <= 0.0:
        raise DomainError("tabulated density needs A > 0")
    if not 0.0 < y0 <= 1.0:
        raise DomainError(f"y0 must lie in (0,1], got {y0}")
    if ys.ndim != 1 or ys.shape != gs.shape or ys.size < 4:
        raise DomainError("grid must be 1-d, matching, with at least 4 points")
    if np.any(np.diff(ys) <= 0.0) or ys[0] <= 0.0 or ys[-1] > 1.0:
        raise DomainError("grid_y must be strictly increasing inside (0,1]")
    if np.any(gs < 0.0):
        raise DomainError("density is negative on the grid")
    # heuristic Assumption-A check at the left edge of the table
    edge = ys[0] ** beta * gs[0] / A
    if not 0.75 < edge < 1.25:
        raise DomainError(
            f"y**beta * g(y) = {edge:.3f} * A at the smallest grid point; "
            "declared (beta, A) inconsistent with the table")
    spec = LambdaSpec(kind="tabulated", beta=beta, A=A, y0=y0, total_mass=1.0,
                      grid_y=tuple(ys), grid_g=tuple(gs))
    mass = _quadrature_mass(spec)
    object.__setattr__(spec, "total_mass", mass)
    return spec


def make_lambda(kind: str, **params) -> LambdaSpec:
    """Factory dispatching on the serialized ``kind`` tag."""
    if kind == "beta":
        return beta_family(**params)
    if kind == "perturbed_power":
        return perturbed_power(**params)
    if kind == "tabulated":
        return tabulated_density(**params)
    raise DomainError(f"unknown measure kind {kind!r}")


def to_json(spec: LambdaSpec) -> str:
    """Serialize with the documented field names."""
    if spec.kind == "beta":
        doc = {"kind": "beta", "beta": spec.beta, "a": spec.a}
    elif spec.kind == "perturbed_power":
        doc = {"kind": "perturbed_power", "beta": spec.beta, "alpha": spec.alpha,
               "c0": spec.c0, "c1": spec.c1}
    else:
        doc = {"kind": "tabulated", "beta": spec.beta, "A": spec.A, "y0": spec.y0,
               "grid_y": list(spec.grid_y), "grid_g": list(spec.grid_g)}
    return json.dumps(doc)


def from_json(doc) -> LambdaSpec:
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind is None:
        raise DomainError("measure document lacks a 'kind' field")
    return make_lambda(kind, **doc)


# ---------------------------------------------------------------------------
# density evaluation

def lambda_density(spec: LambdaSpec, y) -> np.ndarray | float:
    """Density ``g(y)`` of the measure, vectorized over ``y`` in (0,1)."""
    arr = np.asarray(y, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("density is defined on the open interval (0,1)")
    if spec.kind == "beta":
        out = arr ** (-spec.beta) * (1.0 - arr) ** (spec.a - 1.0) * spec.A
    elif spec.kind == "perturbed_power":
        out = arr ** (-spec.beta) * (spec.c0 + spec.c1 * arr ** spec.alpha)
    else:
        out = _tabulated_density(spec, arr)
    return out if isinstance(y, np.ndarray) else float(out)


def _tabulated_density(spec: LambdaSpec, y: np.ndarray) -> np.ndarray:
    ys = np.asarray(spec.grid_y)
    gs = np.asarray(spec.grid_g)
    out = np.empty_like(y)
    below_grid = y < ys[0]
    out[below_grid] = spec.A * y[below_grid] ** (-spec.beta)
    low = (~below_grid) & (y <= spec.y0)
    if np.any(low):
        out[low] = np.exp(np.interp(np.log(y[low]), np.log(ys),
                                    np.log(np.maximum(gs, 1e-300))))
    high = y > spec.y0
    if np.any(high):
        out[high] = np.interp(y[high], ys, gs)
    return out


# ---------------------------------------------------------------------------
# quadrature against the measure

def _singular_integral(f, lo: float, hi: float, p_left: float,
                       p_right: float | None, splits, rel_tol: float,
                       n_start: int) -> float:
    """``int_lo^hi f`` where ``f ~ y**-p_left`` at 0 and, when ``p_right``
    is given, ``f ~ (1-y)**-p_right`` at 1 (either may be <= 0, meaning a
    fractional-power factor whose derivatives still blow up).

    Endpoint power factors are straightened by exact substitutions so
    Gauss-Legendre sees analytic integrands; interior panels follow the
    split points and spread geometrically over wide ranges.
    """
    if p_left >= 1.0:
        raise DomainError(f"integrand exponent {p_left} at 0 is not integrable")
    splits = sorted({float(s) for s in splits if lo < s < hi})
    total = 0.0
    if p_right is not None and hi >= 1.0:
        right_cut = max([0.65] + [s for s in splits if s < 1.0])
        right_cut = max(right_cut, (lo + 1.0) / 2.0)
        g_right, r_lo, r_hi = straighten_right_power(f, right_cut, 1.0, p_right)
        total += integrate_panels(g_right, [r_lo, 0.5, r_hi], rel_tol=rel_tol,
                                  n_start=n_start)
        hi = right_cut
        splits = [s for s in splits if s < hi]
    if lo == 0.0:
        cap = 0.35 if (p_right is not None and hi > 0.35) else hi
        first = min([s for s in splits if s < hi] + [cap, hi])
        g_left, t_lo, t_hi = straighten_left_power(f, 0.0, first, max(p_left, 0.0))
        total += integrate_panels(g_left, [t_lo, 0.25, 0.5, t_hi],
                                  rel_tol=rel_tol, n_start=n_start)
        lo = first
        if lo >= hi:
            return total
    edges = set(geometric_edges(lo, hi) if hi / lo > 30.0 else [lo, hi])
    edges |= {s for s in splits if lo < s < hi}
    if p_right is not None:
        edges |= {c for c in (0.35, 0.65) if lo < c < hi}
    total += integrate_panels(f, sorted(edges), rel_tol=rel_tol, n_start=n_start)
    return total


def integral_against(spec: LambdaSpec, h, lo: float = 0.0, hi: float = 1.0, *,
                     sing_exp_at_0: float = 0.0, extra_splits=(),
                     rel_tol: float = 1e-11, n_start: int = 32) -> float:
    """``int_lo^hi h(y) * g(y) dy`` with singularity-aware panels.

    ``sing_exp_at_0`` declares the power blow-up of ``h`` itself at 0 (the
    density's ``y**-beta`` is accounted for automatically), so the total
    left-endpoint exponent must stay below 1 for convergence.  Mixed
    power densities integrate component by component, each with its exact
    straightening substitution.
    """
    if not 0.0 <= lo < hi <= 1.0:
        raise DomainError(f"integration range [{lo}, {hi}] invalid")
    if sing_exp_at_0 + spec.beta >= 1.0:
        raise DomainError(
            f"integrand exponent {sing_exp_at_0 + spec.beta} at 0 is not integrable")
    if spec.kind == "perturbed_power":
        total = 0.0
        for coef, bexp in ((spec.c0, spec.beta), (spec.c1, spec.beta - spec.alpha)):
            if coef == 0.0:
                continue
            f = lambda y, e=bexp: h(y) * y ** (-e)
            total += coef * _singular_integral(
                f, lo, hi, sing_exp_at_0 + bexp, None, extra_splits,
                rel_tol, n_start)
        return total
    if spec.kind == "beta":
        f = lambda y: h(y) * lambda_density(spec, y)
        a = spec.a
        # non-integer a leaves a (1-y)**(a-1) branch point at 1
        p_right = (1.0 - a) if abs(a - round(a)) > 1e-12 or a < 1.0 else None
        return _singular_integral(f, lo, hi, sing_exp_at_0 + spec.beta,
                                  p_right, extra_splits, rel_tol, n_start)
    # tabulated: panel per interpolation cell; pure power below the grid
    f = lambda y: h(y) * lambda_density(spec, y)
    grid = [g for g in spec.grid_y if lo < g < hi]
    splits = sorted(set(grid) | {float(s) for s in extra_splits if lo < s < hi}
                    | ({spec.y0} if lo < spec.y0 < hi else set()))
    return _singular_integral(f, lo, hi, sing_exp_at_0 + spec.beta, None,
                              splits, max(rel_tol, 1e-10), n_start)


def _quadrature_mass(spec: LambdaSpec) -> float:
    return integral_against(spec, lambda y: np.ones_like(y), rel_tol=1e-12)


def mass_below(spec: LambdaSpec, y: float) -> float:
    """``Lambda([0, y])``, by closed form where available."""
    if not 0.0 < y <= 1.0:
        raise DomainError(f"mass_below needs y in (0,1], got {y}")
    if spec.kind == "beta":
        return float(betainc(1.0 - spec.beta, spec.a, y))
    if spec.kind == "perturbed_power":
        return (spec.c0 * y ** (1.0 - spec.beta) / (1.0 - spec.beta)
                + spec.c1 * y ** (1.0 + spec.alpha - spec.beta)
                / (1.0 + spec.alpha - spec.beta))
    return integral_against(spec, lambda u: np.ones_like(u), 0.0, y)


def validate_spec(spec: LambdaSpec) -> None:
    """Re-check nonnegativity and declared mass on the validation grid."""
    grid = _VALIDATION_GRID
    g = lambda_density(spec, grid)
    if np.any(g < 0.0):
        raise DomainError("density negative on the validation grid")
    mass = _quadrature_mass(spec)
    if not math.isclose(mass, spec.total_mass, rel_tol=_MASS_RTOL):
        raise NumericError(
            f"declared mass {spec.total_mass!r} vs quadrature {mass!r}")


# ---------------------------------------------------------------------------
# merge rates

def merge_rate(spec: LambdaSpec, b: int, k: int) -> float:
    """Rate at which a given k-tuple out of b blocks merges.

    ``int r**(k-2) (1-r)**(b-k) Lambda(dr)``; Beta-function closed forms
    for the parametric kinds, quadrature otherwise.
    """
    b, k = int(b), int(k)
    if not 2 <= k <= b:
        raise DomainError(f"need 2 <= k <= b, got k={k}, b={b}")
    if spec.kind == "beta":
        return math.exp(betaln(k - 1.0 - spec.beta, b - k + spec.a)
                        - betaln(1.0 - spec.beta, spec.a))
    if spec.kind == "perturbed_power":
        t0 = spec.c0 * math.exp(betaln(k - 1.0 - spec.beta, b - k + 1.0))
        t1 = spec.c1 * math.exp(betaln(k - 1.0 - spec.beta + spec.alpha, b - k + 1.0))
        return t0 + t1
    h = lambda r: r ** (k - 2.0) * (1.0 - r) ** (b - k)
    return integral_against(spec, h, sing_exp_at_0=float(max(0, 2 - k)),
                            extra_splits=(1.0 / b,), rel_tol=1e-11)


class MergeKernel:
    """All merge channels out of ``b`` blocks.

    ``rates[i]`` is the total rate ``C(b, k) * lambda_{b,k}`` of the
    ``k = i + 2`` channel; immutable after construction.
    """

    __slots__ = ("b", "rates", "total_rate", "probabilities", "_alias")

    def __init__(self, b: int, rates: np.ndarray):
        rates = np.asarray(rates, dtype=float)
        if rates.shape != (b - 1,):
            raise DomainError(f"kernel for b={b} needs {b - 1} channel rates")
        if np.any(rates < 0.0) or not np.all(np.isfinite(rates)):
            raise NumericError("kernel rates must be finite and nonnegative")
        total = float(rates.sum())
        if total <= 0.0:
            raise NumericError(f"kernel rates underflowed to zero at b={b}")
        self.b = int(b)
        self.rates = rates
        self.total_rate = total
        self.probabilities = rates / total
        self.rates.setflags(write=False)
        self.probabilities.setflags(write=False)
        self._alias = None

    @property
    def sizes(self) -> np.ndarray:
        return np.arange(2, self.b + 1)

    def drift_sum(self) -> float:
        """``sum_k (k-1) * rates[k]`` -- the expected block-decrease rate."""
        return float(np.sum((self.sizes - 1) * self.rates))


def _beta_kernel_rates(spec: LambdaSpec, b: int) -> np.ndarray:
    # seed log q_2 in log-space, then a cumulative product of exact
    # rational ratios; every intermediate stays within float range
    log_q2 = (gammaln(b + 1.0) - gammaln(3.0) - gammaln(b - 1.0)
              + betaln(1.0 - spec.beta, b - 2.0 + spec.a)
              - betaln(1.0 - spec.beta, spec.a))
    k = np.arange(2, b, dtype=float)
    ratios = ((b - k) * (k - 1.0 - spec.beta)
              / ((k + 1.0) * (b - k - 1.0 + spec.a)))
    out = np.empty(b - 1)
    out[0] = 1.0
    np.cumprod(ratios, out=out[1:])
    return out * math.exp(log_q2)


def _perturbed_kernel_rates(spec: LambdaSpec, b: int) -> np.ndarray:
    out = np.zeros(b - 1)
    k = np.arange(2, b, dtype=float)
    log_choose2 = gammaln(b + 1.0) - gammaln(3.0) - gammaln(b - 1.0)
    for coef, bexp in ((spec.c0, spec.beta), (spec.c1, spec.beta - spec.alpha)):
        if coef == 0.0:
            continue
        log_q2 = log_choose2 + betaln(1.0 - bexp, b - 1.0)
        ratios = (k - 1.0 - bexp) / (k + 1.0)
        comp = np.empty(b - 1)
        comp[0] = 1.0
        np.cumprod(ratios, out=comp[1:])
        out += coef * math.exp(log_q2) * comp
    return out


def merge_kernel(spec: LambdaSpec, b: int, max_blocks: int | None = None) -> MergeKernel:
    """Kernel of all merge channels out of ``b`` blocks."""
    b = int(b)
    limit = DEFAULT_MAX_BLOCKS if max_blocks is None else int(max_blocks)
    if b < 2:
        raise DomainError(f"kernel needs b >= 2, got {b}")
    if b > limit:
        raise CapacityError(f"b={b} exceeds the configured block limit {limit}")
    if spec.kind == "beta":
        rates = _beta_kernel_rates(spec, b)
    elif spec.kind == "perturbed_power":
        rates = _perturbed_kernel_rates(spec, b)
    else:
        rates = np.array([merge_rate(spec, b, k) * math.exp(
            gammaln(b + 1.0) - gammaln(k + 1.0) - gammaln(b - k + 1.0))
            for k in range(2, b + 1)])
    return MergeKernel(b, rates)
