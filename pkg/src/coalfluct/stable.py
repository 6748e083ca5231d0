"""Totally skewed stable laws and the limit fluctuation process.

Parametrization: a stable variable with index ``alpha`` in (1,2), scale
``sigma``, skew ``b`` in {-1,+1} and zero location has characteristic
function ``exp(-sigma**alpha |z|**alpha (1 - i b sgn(z)
tan(pi alpha / 2)))``.  With ``b = +1`` the left tail is light and the
Laplace transform ``E exp(-theta X) = exp(sigma**alpha theta**alpha /
|cos(pi alpha / 2)|)`` is finite for ``theta >= 0``; every sampler here
is validated through transforms, never through densities.

The limit process ``Z`` satisfies ``t * Z(t) = -K * int_0^t u dL(u)``
for a totally right-skewed unit Levy process ``L``, equivalently the
singular Ornstein-Uhlenbeck equation ``dZ = -(Z/t) dt - K dL``.  Both
simulation routes below consume the exact per-cell stable scale of
``int u dL``, so refinement changes nothing in law and route agreement
is a sharp test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import measure
from .errors import CapacityError, DomainError, PreconditionError
from .measure import LambdaSpec
from .psi import PsiEvaluator
from .speed import SpeedTable


@dataclass(frozen=True)
class StableParams:
    """Index, scale and total skew of a stable law (location fixed at 0)."""

    alpha: float
    scale: float = 1.0
    skew: float = 1.0

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise DomainError(f"alpha must lie in (1,2), got {self.alpha}")
        if not self.scale > 0.0:
            raise DomainError(f"scale must be positive, got {self.scale}")
        if self.skew not in (-1.0, 1.0):
            raise DomainError(f"skew must be -1 or +1, got {self.skew}")


def sample_skewed_stable(params: StableParams, rng: np.random.Generator,
                         size=None):
    """Exact draws via the Chambers-Mallows-Stuck transform.

    The auxiliary angle is shifted so the output matches the
    ``tan(pi alpha / 2)`` characteristic-function convention above; the
    skew sign is pinned by a transform-based unit test.
    """
    a = params.alpha
    n = 1 if size is None else size
    u = rng.uniform(-math.pi / 2.0, math.pi / 2.0, n)
    w = rng.exponential(1.0, n)
    t_a = math.tan(math.pi * a / 2.0)
    b_shift = math.atan(params.skew * t_a) / a
    s_fac = (1.0 + (params.skew * t_a) ** 2) ** (1.0 / (2.0 * a))
    x = (s_fac * np.sin(a * (u + b_shift)) / np.cos(u) ** (1.0 / a)
         * (np.cos(u - a * (u + b_shift)) / w) ** ((1.0 - a) / a))
    x *= params.scale
    return float(x[0]) if size is None else x


def skewed_stable_laplace(params: StableParams, theta: float) -> float:
    """``E exp(-theta X)`` for ``skew=+1`` (finite for ``theta >= 0``)."""
    if params.skew != 1.0:
        raise DomainError("the Laplace transform is finite only for skew +1")
    if theta < 0.0:
        raise DomainError("theta must be nonnegative")
    a = params.alpha
    return math.exp((params.scale * theta) ** a / abs(math.cos(math.pi * a / 2.0)))


@dataclass
class StablePath:
    """A path sampled on a grid, with its underlying increment draws."""

    times: np.ndarray
    values: np.ndarray
    increments: np.ndarray
    route: str
    meta: dict = field(default_factory=dict)


def _check_grid(t_grid, from_zero: bool) -> np.ndarray:
    ts = np.asarray(t_grid, dtype=float)
    if ts.ndim != 1 or ts.size < 2 or np.any(np.diff(ts) <= 0.0):
        raise DomainError("time grid must be strictly increasing with >= 2 points")
    if from_zero and ts[0] != 0.0:
        raise DomainError("grid must start at 0")
    if not from_zero and ts[0] <= 0.0:
        raise DomainError("grid must start at a strictly positive time")
    return ts


def simulate_levy_L(beta: float, t_grid, rng: np.random.Generator) -> StablePath:
    """Totally right-skewed (1+beta)-stable Levy process from L(0) = 0.

    Increments over disjoint cells are independent with scale
    ``(dt)**(1/alpha)``.
    """
    ts = _check_grid(t_grid, from_zero=True)
    alpha = 1.0 + float(beta)
    params = StableParams(alpha=alpha, scale=1.0, skew=1.0)
    dts = np.diff(ts)
    incs = sample_skewed_stable(params, rng, size=dts.size) * dts ** (1.0 / alpha)
    values = np.concatenate([[0.0], np.cumsum(incs)])
    return StablePath(times=ts, values=values, increments=incs, route="levy")


def _cell_scales(ts: np.ndarray, alpha: float) -> np.ndarray:
    """Exact stable scale of ``int_{t_i}^{t_{i+1}} u dL(u)`` per cell."""
    pows = ts ** (alpha + 1.0)
    return (np.diff(pows) / (alpha + 1.0)) ** (1.0 / alpha)


def z_marginal_scale(beta: float, K: float, t) -> np.ndarray | float:
    """Scale of the (totally left-skewed) marginal ``Z(t)``."""
    alpha = 1.0 + float(beta)
    t_arr = np.asarray(t, dtype=float)
    out = K * (t_arr / (alpha + 1.0)) ** (1.0 / alpha)
    return float(out) if np.ndim(t) == 0 else out


def sample_z_marginal(beta: float, K: float, t: float, rng: np.random.Generator,
                      size=None):
    """Draws of ``Z(t)``: stable with skew -1 and the scale above."""
    params = StableParams(alpha=1.0 + float(beta),
                          scale=z_marginal_scale(beta, K, t), skew=-1.0)
    return sample_skewed_stable(params, rng, size=size)


def simulate_Z_direct(beta: float, K: float, t_grid, rng: np.random.Generator,
                      increments=None) -> StablePath:
    """Limit process via ``Z(t) = -(K/t) * cumsum of int u dL`` cells."""
    ts = _check_grid(t_grid, from_zero=True)
    alpha = 1.0 + float(beta)
    scales = _cell_scales(ts, alpha)
    if increments is None:
        params = StableParams(alpha=alpha, scale=1.0, skew=1.0)
        increments = sample_skewed_stable(params, rng, size=scales.size) * scales
    else:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != scales.shape:
            raise DomainError("increments must match the number of grid cells")
    running = np.cumsum(increments)
    values = np.concatenate([[0.0], -K * running / ts[1:]])
    return StablePath(times=ts, values=values, increments=increments,
                      route="direct")


def simulate_Z_sde(beta: float, K: float, t_grid, rng: np.random.Generator,
                   z0: float | None = None, increments=None) -> StablePath:
    """Limit process via the exact one-step Ornstein-Uhlenbeck update.

    ``Z(t_{i+1}) = (t_i / t_{i+1}) Z(t_i) - (K / t_{i+1}) * xi_i`` with
    ``xi_i`` the exact stable increment of ``int u dL`` over the cell;
    there is no discretization bias, so coincident grids agree with the
    direct route in law and refinements agree pathwise.
    """
    ts = _check_grid(t_grid, from_zero=False)
    alpha = 1.0 + float(beta)
    if z0 is None:
        z0 = float(sample_z_marginal(beta, K, ts[0], rng))
    scales = _cell_scales(ts, alpha)
    if increments is None:
        params = StableParams(alpha=alpha, scale=1.0, skew=1.0)
        increments = sample_skewed_stable(params, rng, size=scales.size) * scales
    else:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != scales.shape:
            raise DomainError("increments must match the number of grid cells")
    values = np.empty(ts.size)
    values[0] = z0
    for i in range(scales.size):
        values[i + 1] = (ts[i] / ts[i + 1]) * values[i] \
            - (K / ts[i + 1]) * increments[i]
    return StablePath(times=ts, values=values, increments=increments,
                      route="sde", meta={"z0": z0})


def sample_z_sde_marginal(beta: float, K: float, t_start: float, t_end: float,
                          n_cells: int, rng: np.random.Generator,
                          size: int) -> np.ndarray:
    """Replicas of ``Z(t_end)`` through the one-step update, vectorized.

    Same law as reading ``simulate_Z_sde`` at ``t_end``; the loop runs
    over grid cells only, so large route-equivalence ensembles are cheap.
    """
    if not 0.0 < t_start < t_end:
        raise DomainError("need 0 < t_start < t_end")
    ts = np.geomspace(t_start, t_end, int(n_cells) + 1)
    alpha = 1.0 + float(beta)
    scales = _cell_scales(ts, alpha)
    params = StableParams(alpha=alpha, scale=1.0, skew=1.0)
    z = sample_z_marginal(beta, K, t_start, rng, size=size)
    for i in range(scales.size):
        xi = sample_skewed_stable(params, rng, size=size) * scales[i]
        z = (ts[i] / ts[i + 1]) * z - (K / ts[i + 1]) * xi
    return z


# ---------------------------------------------------------------------------
# the pre-limit martingale-weighted process

class NuSampler:
    """Jump sizes from the restricted intensity ``y**-2 Lambda(dy)`` on [delta, 1].

    Inverse-CDF sampling on a per-cell power-law fit of the intensity
    over a log-spaced grid; rebuilt whenever ``delta`` changes.
    """

    def __init__(self, spec: LambdaSpec, delta: float, cells_per_decade: int = 48):
        if not 0.0 < delta < 1.0:
            raise DomainError(f"delta must lie in (0,1), got {delta}")
        self.spec = spec
        self.delta = float(delta)
        n = max(16, int(cells_per_decade * math.log10(1.0 / delta)) + 1)
        edges = np.geomspace(delta, 1.0 - 1e-9, n)
        d_lo = _nu_density(spec, edges[:-1])
        d_hi = _nu_density(spec, edges[1:])
        # local power exponent of the intensity in each cell
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.log(d_hi / d_lo) / np.log(edges[1:] / edges[:-1])
        p = np.where(np.isfinite(p), p, 0.0)
        p1 = p + 1.0
        small = np.abs(p1) < 1e-9
        p1 = np.where(small, 1.0, p1)   # placeholder; the small branch logs
        lo_p = edges[:-1] ** p1
        hi_p = edges[1:] ** p1
        coef = d_lo / edges[:-1] ** p
        cell_mass = np.where(small,
                             d_lo * edges[:-1] * np.log(edges[1:] / edges[:-1]),
                             coef * (hi_p - lo_p) / p1)
        self._edges = edges
        self._p1 = p1
        self._lo_p = lo_p
        self._hi_p = hi_p
        self._small = small
        self._cum = np.concatenate([[0.0], np.cumsum(cell_mass)])
        self.total_rate = float(self._cum[-1])

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size) * self.total_rate
        idx = np.clip(np.searchsorted(self._cum, u, side="right") - 1,
                      0, self._edges.size - 2)
        frac = (u - self._cum[idx]) / np.maximum(
            self._cum[idx + 1] - self._cum[idx], 1e-300)
        p1 = self._p1[idx]
        powered = self._lo_p[idx] + frac * (self._hi_p[idx] - self._lo_p[idx])
        out = np.where(
            self._small[idx],
            self._edges[idx] * (self._edges[idx + 1] / self._edges[idx]) ** frac,
            powered ** (1.0 / p1))
        return np.clip(out, self.delta, 1.0 - 1e-15)


def _nu_density(spec: LambdaSpec, y: np.ndarray) -> np.ndarray:
    return measure.lambda_density(spec, y) / y ** 2


def small_jump_variance(spec: LambdaSpec, delta: float, duration: float) -> float:
    """Variance of the compensated sub-threshold jumps over a window.

    The second moment of the restricted compensated Poisson integral is
    ``duration * int_0^delta y**2 nu(dy) = duration * Lambda([0, delta])``.
    """
    return float(duration) * measure.mass_below(spec, delta)


def first_moment_above(spec: LambdaSpec, delta: float) -> float:
    """``int_delta^1 y nu(dy) = int_delta^1 y**-1 Lambda(dy)``."""
    return measure.integral_against(spec, lambda y: 1.0 / y, delta, 1.0)


class _SpeedWeightGrid:
    """Dense interpolants of ``1/h(v_s)`` and its integrals on (0, horizon]."""

    def __init__(self, spec: LambdaSpec, table: SpeedTable,
                 evaluator: PsiEvaluator, horizon: float, points: int = 900):
        if table.t_min > horizon / 50.0:
            raise PreconditionError(
                f"speed table starts at {table.t_min:g}; the weight grid needs "
                f"coverage down to ~{horizon / 50.0:g}")
        s = np.geomspace(horizon * 1e-9, horizon, points)
        v = table.v(np.maximum(s, table.t_min / 10.0))
        hv = evaluator.psi(v) / v
        w = 1.0 / hv                     # ~ beta * s near zero
        ls = np.log(s)
        self._w = PchipInterpolator(ls, w)
        # antiderivatives in log-time: int f ds = int f * s dlog s
        self._int_w = PchipInterpolator(ls, w * s).antiderivative()
        self._int_w2 = PchipInterpolator(ls, w * w * s).antiderivative()
        self._s_lo = s[0]
        self.horizon = horizon
        self._beta = table.beta

    def inv_h(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.empty_like(s)
        low = s < self._s_lo
        # below the grid the weight is linear in s to first order
        out[low] = self._w(math.log(self._s_lo)) * (s[low] / self._s_lo)
        out[~low] = self._w(np.log(s[~low]))
        return out

    def int_inv_h(self, s: float) -> float:
        s = min(max(s, self._s_lo), self.horizon)
        return float(self._int_w(math.log(s)) - self._int_w(math.log(self._s_lo))
                     + 0.5 * self._w(math.log(self._s_lo)) * self._s_lo)

    def int_inv_h_sq(self, s: float) -> float:
        s = min(max(s, self._s_lo), self.horizon)
        head = self._w(math.log(self._s_lo)) ** 2 * self._s_lo / 3.0
        return float(self._int_w2(math.log(s)) - self._int_w2(math.log(self._s_lo))
                     + head)


def simulate_Y_eps(spec: LambdaSpec, table: SpeedTable, eps: float, t_grid,
                   rng: np.random.Generator, delta: float = 1e-6,
                   evaluator: PsiEvaluator | None = None,
                   max_expected_jumps: float = 1e7) -> StablePath:
    """One path of the rescaled weighted martingale on probe times.

    Jumps above ``delta`` are simulated exactly from the restricted
    Poisson intensity with their explicit compensator; jumps below are
    replaced by an independent centered Gaussian whose variance matches
    the compensated second moment exactly.
    """
    ts = _check_grid(t_grid, from_zero=False) if np.asarray(t_grid)[0] != 0.0 \
        else _check_grid(t_grid, from_zero=True)
    eps = float(eps)
    if eps <= 0.0:
        raise DomainError("eps must be positive")
    ev = evaluator or PsiEvaluator(spec)
    horizon = eps * float(ts[-1])
    sampler = NuSampler(spec, delta)
    if sampler.total_rate * horizon > max_expected_jumps:
        raise CapacityError(
            f"expected jump count {sampler.total_rate * horizon:.3g} exceeds "
            f"{max_expected_jumps:.3g}; raise delta or lower the horizon")
    grid = _SpeedWeightGrid(spec, table, ev, horizon)
    drift_rate = first_moment_above(spec, delta)
    var_rate = measure.mass_below(spec, delta)

    n_jumps = rng.poisson(sampler.total_rate * horizon)
    s_jump = np.sort(rng.uniform(0.0, horizon, n_jumps))
    y_jump = sampler.sample(rng, n_jumps)
    contrib = np.cumsum(y_jump * grid.inv_h(s_jump))

    beta = table.beta
    scale_out = eps ** (-1.0 / (1.0 + beta))
    values = np.empty(ts.size)
    gauss = 0.0
    prev_i2 = 0.0
    for j, t in enumerate(ts):
        t_abs = eps * float(t)
        if t_abs == 0.0:
            values[j] = 0.0
            continue
        i2 = grid.int_inv_h_sq(t_abs)
        gauss += rng.normal(0.0, math.sqrt(max(var_rate * (i2 - prev_i2), 0.0)))
        prev_i2 = i2
        n_before = np.searchsorted(s_jump, t_abs, side="right")
        jumps = contrib[n_before - 1] if n_before > 0 else 0.0
        comp = drift_rate * grid.int_inv_h(t_abs)
        v_t = table.v(max(t_abs, table.t_min / 10.0))
        h_t = ev.psi(v_t) / v_t
        values[j] = scale_out * h_t * (jumps - comp + gauss)
    incs = np.diff(values, prepend=0.0)
    return StablePath(times=ts, values=values, increments=incs, route="y_eps",
                      meta={"eps": eps, "delta": delta,
                            "n_jumps": int(n_jumps)})


def sample_Y_eps_marginal(spec: LambdaSpec, table: SpeedTable, eps: float,
                          t: float, rng: np.random.Generator, size: int,
                          delta: float = 1e-6,
                          evaluator: PsiEvaluator | None = None,
                          max_expected_jumps: float = 1e7,
                          batch_jumps: int = 10_000_000) -> np.ndarray:
    """Vectorized replicas of ``Y_eps(t)`` (single probe time).

    Identical in law to reading ``simulate_Y_eps`` at ``t``; batched so
    that distributional tests over 1e4+ replicas stay in one numpy pass.
    """
    ev = evaluator or PsiEvaluator(spec)
    eps = float(eps)
    horizon = eps * float(t)
    sampler = NuSampler(spec, delta)
    mean_jumps = sampler.total_rate * horizon
    if mean_jumps > max_expected_jumps:
        raise CapacityError(
            f"expected jump count {mean_jumps:.3g} exceeds {max_expected_jumps:.3g}")
    grid = _SpeedWeightGrid(spec, table, ev, horizon)
    drift = first_moment_above(spec, delta) * grid.int_inv_h(horizon)
    sd_gauss = math.sqrt(measure.mass_below(spec, delta)
                         * grid.int_inv_h_sq(horizon))
    v_t = table.v(horizon)
    h_t = ev.psi(v_t) / v_t
    beta = table.beta
    scale_out = eps ** (-1.0 / (1.0 + beta)) * h_t

    counts = rng.poisson(mean_jumps, size)
    sums = np.zeros(size)
    start = 0
    while start < size:
        stop = start
        tot = 0
        while stop < size and tot + counts[stop] <= batch_jumps:
            tot += counts[stop]
            stop += 1
        stop = max(stop, start + 1)
        c = counts[start:stop]
        tot = int(c.sum())
        s = rng.uniform(0.0, horizon, tot)
        y = sampler.sample(rng, tot)
        w = y * grid.inv_h(s)
        offsets = np.concatenate([[0], np.cumsum(c)[:-1]])
        sums[start:stop] = np.add.reduceat(w, offsets) if tot else 0.0
        sums[start:stop][c == 0] = 0.0
        start = stop
    gauss = rng.normal(0.0, sd_gauss, size)
    return scale_out * (sums - drift + gauss)
