"""Exact simulation of the block-counting process, via two backends.

Backend A ("chain") is the reference: a continuous-time Markov chain on
the block count, jumping from ``b`` to ``b - k + 1`` at the kernel
rates.  Backend B ("poisson") realizes the coloring construction: atoms
``(t, y)`` of a Poisson random measure with intensity ``y**-2
Lambda(dy)`` mark each of the ``b`` blocks independently with
probability ``y`` and merge the marked ones.  The two must agree in law,
which is the strongest cross-check in the package.

Backend B cannot generate its (infinite) sub-threshold atoms.  Dropping
them entirely would bias the decrease rate by a *scale-free* percentage
(the missing pairwise merges at level ``b`` arrive at rate ``b*(b-1)/2 *
Lambda([0, delta])``, a constant fraction of the total drift for
power-law measures), so sub-threshold events are restored as an explicit
pairwise-merge channel with exactly that rate.  The remaining error is
the probability that a sub-threshold event merges three or more blocks,
of relative order ``b * delta``, which the default threshold keeps below
1e-4 of the channel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import measure
from .errors import CapacityError, DomainError, PreconditionError
from .measure import LambdaSpec, MergeKernel, merge_kernel
from .stable import NuSampler
from .streams import BufferedDraws

_TABULATED_CHAIN_CAP = 2048


@dataclass(frozen=True)
class CoalescentPath:
    """Piecewise-constant block-count trajectory with provenance.

    ``counts[i]`` is the block count immediately after ``times[i]``; the
    path is right-continuous with ``N(0) = n0``.
    """

    n0: int
    times: np.ndarray
    counts: np.ndarray
    t_end: float
    spec_label: str
    backend: str
    seed: tuple | None = None

    def __post_init__(self):
        self.times.setflags(write=False)
        self.counts.setflags(write=False)


def evaluate_N(path: CoalescentPath, t: float) -> int:
    """Right-continuous evaluation ``N(t)``."""
    t = float(t)
    if t < 0.0 or t > path.t_end:
        raise DomainError(f"t={t} outside the simulated horizon [0, {path.t_end}]")
    idx = int(np.searchsorted(path.times, t, side="right"))
    return int(path.n0) if idx == 0 else int(path.counts[idx - 1])


# ---------------------------------------------------------------------------
# merge-size sampling from an explicit kernel

def _build_alias(probs: np.ndarray):
    """Walker alias table; O(n) build, O(1) draws."""
    n = probs.size
    scaled = probs * n
    alias = np.zeros(n, dtype=np.int64)
    cut = np.ones(n)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    scaled = scaled.copy()
    while small and large:
        s = small.pop()
        l = large.pop()
        cut[s] = scaled[s]
        alias[s] = l
        scaled[l] -= 1.0 - scaled[s]
        (small if scaled[l] < 1.0 else large).append(l)
    for i in small + large:
        cut[i] = 1.0
    return cut, alias


def sample_merge_size(kernel: MergeKernel, rng: np.random.Generator) -> int:
    """One merge size ``k`` from the kernel's channel probabilities.

    Inverse-CDF scan for small kernels, alias table above 64 channels.
    """
    b = kernel.b
    if b - 1 <= 64:
        u = rng.random()
        cum = 0.0
        probs = kernel.probabilities
        for i in range(probs.size):
            cum += probs[i]
            if u <= cum:
                return i + 2
        return b
    if kernel._alias is None:
        kernel._alias = _build_alias(kernel.probabilities)
    cut, alias = kernel._alias
    i = int(rng.integers(0, b - 1))
    if rng.random() >= cut[i]:
        i = int(alias[i])
    return i + 2


# ---------------------------------------------------------------------------
# backend A: the block-count jump chain

class ChainRateTable:
    """Total rates and scan seeds for every block count up to ``b_max``.

    For the parametric kinds the merge-size distribution is sampled by
    an on-the-fly ratio recurrence, so only O(1) numbers are stored per
    level; expected scan length is the mean merge size, which stays O(1).
    """

    def __init__(self, spec: LambdaSpec, b_max: int):
        b_max = int(b_max)
        if b_max < 2:
            raise DomainError("rate table needs b_max >= 2")
        if b_max > measure.DEFAULT_MAX_BLOCKS:
            raise CapacityError(
                f"b_max={b_max} exceeds the block limit {measure.DEFAULT_MAX_BLOCKS}")
        if spec.kind == "tabulated" and b_max > _TABULATED_CHAIN_CAP:
            raise CapacityError(
                f"tabulated measures cap the chain backend at {_TABULATED_CHAIN_CAP}")
        self.spec = spec
        self.b_max = b_max
        self.total_rate = np.zeros(b_max + 1)
        self.drift = np.zeros(b_max + 1)
        self._kind = spec.kind
        if spec.kind == "beta":
            self._seed0 = np.zeros(b_max + 1)
            self._beta, self._a = spec.beta, spec.a
            for b in range(2, b_max + 1):
                rates = measure._beta_kernel_rates(spec, b)
                self._seed0[b] = rates[0]
                self.total_rate[b] = rates.sum()
                self.drift[b] = np.arange(1, b).dot(rates)
        elif spec.kind == "perturbed_power":
            self._seed0 = np.zeros(b_max + 1)
            self._seed1 = np.zeros(b_max + 1)
            self._beta, self._alpha = spec.beta, spec.alpha
            log_c2 = lambda b: (math.lgamma(b + 1.0) - math.lgamma(3.0)
                                - math.lgamma(b - 1.0))
            from scipy.special import betaln
            for b in range(2, b_max + 1):
                rates = measure._perturbed_kernel_rates(spec, b)
                self._seed0[b] = spec.c0 * math.exp(
                    log_c2(b) + betaln(1.0 - spec.beta, b - 1.0))
                self._seed1[b] = spec.c1 * math.exp(
                    log_c2(b) + betaln(1.0 - spec.beta + spec.alpha, b - 1.0))
                self.total_rate[b] = rates.sum()
                self.drift[b] = np.arange(1, b).dot(rates)
        else:
            self._kernels = {}
            for b in range(2, b_max + 1):
                kern = merge_kernel(spec, b)
                self._kernels[b] = kern
                self.total_rate[b] = kern.total_rate
                self.drift[b] = kern.drift_sum()
        self.total_rate.setflags(write=False)
        self.drift.setflags(write=False)

    def sample_k(self, b: int, u: float, rng: np.random.Generator) -> int:
        """Merge size at level ``b`` from the uniform draw ``u``."""
        target = u * self.total_rate[b]
        if self._kind == "beta":
            beta, a = self._beta, self._a
            q = self._seed0[b]
            cum = q
            k = 2
            while cum < target and k < b:
                q *= (b - k) * (k - 1.0 - beta) / ((k + 1.0) * (b - k - 1.0 + a))
                k += 1
                cum += q
            return k
        if self._kind == "perturbed_power":
            beta, alpha = self._beta, self._alpha
            q0 = self._seed0[b]
            q1 = self._seed1[b]
            cum = q0 + q1
            k = 2
            while cum < target and k < b:
                q0 *= (k - 1.0 - beta) / (k + 1.0)
                q1 *= (k - 1.0 - beta + alpha) / (k + 1.0)
                k += 1
                cum += q0 + q1
            return k
        return sample_merge_size(self._kernels[b], rng)


def simulate_block_chain(spec: LambdaSpec, n0: int, t_end: float,
                         rng: np.random.Generator,
                         rates: ChainRateTable | None = None,
                         seed_info: tuple | None = None) -> CoalescentPath:
    """Backend A: exponential waits at the kernel's total rate, then a
    merge size draw, until one block remains or the horizon is reached."""
    n0 = int(n0)
    t_end = float(t_end)
    if n0 < 2:
        raise DomainError(f"need n0 >= 2, got {n0}")
    if t_end <= 0.0:
        raise DomainError(f"need t_end > 0, got {t_end}")
    if rates is None:
        rates = ChainRateTable(spec, n0)
    if n0 > rates.b_max:
        raise CapacityError(f"n0={n0} exceeds the rate table bound {rates.b_max}")
    buf = BufferedDraws(rng)
    b = n0
    t = 0.0
    times: list[float] = []
    counts: list[int] = []
    while b >= 2:
        t_next = t + buf.exponential() / rates.total_rate[b]
        if t_next > t_end:
            break
        t = t_next
        k = rates.sample_k(b, buf.uniform(), rng)
        b -= k - 1
        times.append(t)
        counts.append(b)
    return CoalescentPath(n0=n0, times=np.asarray(times), counts=np.asarray(counts, dtype=np.int64),
                          t_end=t_end, spec_label=spec.label(), backend="chain",
                          seed=seed_info)


# ---------------------------------------------------------------------------
# backend B: Poisson coloring

def default_coloring_delta(b: int, miss_tol: float = 1e-4) -> float:
    """Largest threshold keeping the per-event multi-merge error below
    ``miss_tol``: a sub-threshold atom changes the count with probability
    at most ``(b*y)**2 / 2``."""
    return math.sqrt(2.0 * miss_tol) / b


def simulate_poisson_coloring(spec: LambdaSpec, n0: int, t_end: float,
                              rng: np.random.Generator,
                              delta: float | None = None,
                              miss_tol: float = 1e-4,
                              seed_info: tuple | None = None,
                              max_draws: float = 5e8) -> CoalescentPath:
    """Backend B: the Poisson coloring construction above a threshold.

    Atoms with ``y > delta`` are generated explicitly and colored with a
    Binomial(b, y) draw; atoms below are restored as the analytic
    pairwise channel.  ``delta`` defaults adaptively to
    ``sqrt(2 * miss_tol) / b`` and is rebuilt whenever ``b`` halves.
    """
    n0 = int(n0)
    t_end = float(t_end)
    if n0 < 2:
        raise DomainError(f"need n0 >= 2, got {n0}")
    if t_end <= 0.0:
        raise DomainError(f"need t_end > 0, got {t_end}")
    if n0 > measure.DEFAULT_MAX_BLOCKS:
        raise CapacityError(f"n0={n0} exceeds the block limit")
    if delta is not None:
        bound = default_coloring_delta(n0, miss_tol)
        if delta > bound * (1.0 + 1e-12):
            raise PreconditionError(
                f"delta={delta:g} too coarse for n0={n0}: sub-threshold events "
                f"would merge >2 blocks too often; use delta <= {bound:g}")

    b = n0
    t = 0.0
    times: list[float] = []
    counts: list[int] = []
    b_ref = 0
    sampler = None
    lam_below = 0.0
    batch = 128
    draws = 0.0
    while b >= 2 and t < t_end:
        if sampler is None or (delta is None and b < 0.5 * b_ref):
            b_ref = b
            cur_delta = delta if delta is not None else \
                default_coloring_delta(b_ref, miss_tol)
            sampler = NuSampler(spec, cur_delta)
            lam_below = measure.mass_below(spec, cur_delta)
        rate = sampler.total_rate
        pair_rate = 0.5 * b * (b - 1.0) * lam_below
        t_pair = t + rng.exponential(1.0 / pair_rate) if pair_rate > 0.0 else math.inf

        gaps = rng.exponential(1.0 / rate, batch)
        t_events = t + np.cumsum(gaps)
        ys = sampler.sample(rng, batch)
        xs = rng.binomial(b, ys)
        draws += batch
        if draws > max_draws:
            raise CapacityError(
                "coloring backend exceeded its draw budget; "
                "raise miss_tol or use the chain backend")
        eff = np.nonzero(xs >= 2)[0]
        t_eff = float(t_events[eff[0]]) if eff.size else math.inf
        t_window = float(t_events[-1])

        t_merge = min(t_pair, t_eff)
        if t_merge <= min(t_window, t_end):
            t = t_merge
            if t_pair <= t_eff:
                b -= 1
            else:
                b -= int(xs[eff[0]]) - 1
            times.append(t)
            counts.append(b)
            if eff.size:
                batch = int(min(max(2 * (eff[0] + 1), 64), 1 << 16))
        elif t_window >= t_end:
            break
        else:
            t = t_window
            batch = int(min(batch * 2, 1 << 16))
    return CoalescentPath(n0=n0, times=np.asarray(times),
                          counts=np.asarray(counts, dtype=np.int64),
                          t_end=t_end, spec_label=spec.label(),
                          backend="poisson", seed=seed_info)
