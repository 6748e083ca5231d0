"""End-to-end verification experiments.

The central object is the rescaled fluctuation ``X_eps(t) =
eps**(-1/(1+beta)) * (N(eps t) / v(eps t) - 1)`` whose law, for small
``eps``, should match the totally left-skewed stable limit process.
Experiments simulate the coalescent at desk scale, rescale with a chosen
speed (``v``, ``v_star`` or the power-law proxy ``w``), and compare
against direct draws of the limit marginals with a two-sample
Kolmogorov-Smirnov distance: the limit sampler is an independent oracle
(different code path, different randomness).

Starting "from infinity" is approximated by a finite ``n0``: a process
started from ``n0`` blocks behaves like the infinite-start process
shifted by the time at which the speed passes ``n0``, so simulations run
on the shifted clock and every experiment is guarded by ``v(eps * max
probe) <= n0 / 10``; configurations violating the guard are refused,
never silently run.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__ as _version
from .coalescent import (ChainRateTable, evaluate_N, simulate_block_chain,
                         simulate_poisson_coloring)
from .errors import DomainError, GuardError, PreconditionError
from .measure import LambdaSpec, perturbed_power, to_json as spec_to_json
from .psi import asymptotic_constants
from .speed import SpeedCalculator, build_speed_table
from .stable import StableParams, _cell_scales, sample_skewed_stable
from .streams import LIMIT_STREAM, replica_rng

_BACKENDS = ("chain", "poisson")
_SPEEDS = ("v", "v_star", "w")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one fluctuation experiment."""

    spec: LambdaSpec
    n0: int
    eps: float
    probe_times: tuple[float, ...]
    replicas: int
    backend: str = "chain"
    speed: str = "v"
    seed: int = 0
    workers: int = 1

    def echo(self) -> dict:
        return {
            "spec": json.loads(spec_to_json(self.spec)),
            "n0": self.n0, "eps": self.eps,
            "probe_times": list(self.probe_times),
            "replicas": self.replicas, "backend": self.backend,
            "speed": self.speed, "seed": self.seed, "workers": self.workers,
        }


@dataclass
class FluctuationReport:
    """Samples, oracle samples and distances for one experiment."""

    config: dict
    probe_times: list[float]
    speeds: list[float]
    time_shift: float
    guard_ratios: list[float]
    x_samples: dict[float, np.ndarray]
    z_samples: dict[float, np.ndarray]
    ks: dict[float, float]
    mean_ratio: dict[float, float]
    mean_abs_deviation: dict[float, float]
    versions: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "config": self.config,
            "probe_times": self.probe_times,
            "speeds": self.speeds,
            "time_shift": self.time_shift,
            "guard_ratios": self.guard_ratios,
            "ks": {repr(t): v for t, v in sorted(self.ks.items())},
            "mean_ratio": {repr(t): v for t, v in sorted(self.mean_ratio.items())},
            "mean_abs_deviation": {repr(t): v for t, v in
                                   sorted(self.mean_abs_deviation.items())},
            "x_samples": {repr(t): [float(x) for x in v]
                          for t, v in sorted(self.x_samples.items())},
            "z_samples": {repr(t): [float(x) for x in v]
                          for t, v in sorted(self.z_samples.items())},
            "versions": self.versions,
        }
        return json.dumps(doc, sort_keys=True)


def two_sample_ks(a, b) -> float:
    """Sup distance between the empirical CDFs of two samples."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise DomainError("KS needs two nonempty samples")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


# ---------------------------------------------------------------------------
# replica execution

def _count_task(args):
    (spec, backend, n0, offsets, t_end, master_seed, indices, rates,
     delta, miss_tol) = args
    out = np.empty((len(indices), len(offsets)), dtype=np.int64)
    for row, idx in enumerate(indices):
        rng = replica_rng(master_seed, idx)
        if backend == "chain":
            path = simulate_block_chain(spec, n0, t_end, rng, rates=rates,
                                        seed_info=(master_seed, idx))
        else:
            path = simulate_poisson_coloring(spec, n0, t_end, rng, delta=delta,
                                             miss_tol=miss_tol,
                                             seed_info=(master_seed, idx))
        out[row] = [evaluate_N(path, off) for off in offsets]
    return out


def _chunk_indices(replicas: int, workers: int):
    chunk = max(1, math.ceil(replicas / max(1, workers * 4)))
    return [list(range(start, min(start + chunk, replicas)))
            for start in range(0, replicas, chunk)]


def _map_tasks(task_fn, arg_list, workers: int):
    if workers <= 1 or len(arg_list) <= 1:
        return [task_fn(a) for a in arg_list]
    try:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(task_fn, arg_list))
    except (OSError, PermissionError):
        # restricted environments without process support fall back inline
        return [task_fn(a) for a in arg_list]


def simulate_replica_counts(spec: LambdaSpec, backend: str, n0: int, offsets,
                            replicas: int, master_seed: int, workers: int = 1,
                            rates: ChainRateTable | None = None,
                            delta: float | None = None,
                            miss_tol: float = 1e-4) -> np.ndarray:
    """Block counts of every replica at the requested path offsets.

    Deterministic given (seed, replicas, backend, parameters); worker
    count only affects wall time.
    """
    offsets = [float(o) for o in offsets]
    t_end = max(offsets) * (1.0 + 1e-12)
    if backend not in _BACKENDS:
        raise DomainError(f"backend must be one of {_BACKENDS}")
    if backend == "chain" and rates is None:
        rates = ChainRateTable(spec, n0)
    chunks = _chunk_indices(replicas, workers)
    args = [(spec, backend, n0, offsets, t_end, master_seed, idxs, rates,
             delta, miss_tol) for idxs in chunks]
    parts = _map_tasks(_count_task, args, workers)
    return np.vstack(parts)


def sample_limit_marginals(beta: float, K: float, probe_times, replicas: int,
                           master_seed: int) -> np.ndarray:
    """Joint draws of the limit process at the probe times, one row per
    replica (direct route, vectorized)."""
    ts = np.concatenate([[0.0], np.asarray(probe_times, dtype=float)])
    if np.any(np.diff(ts) <= 0.0):
        raise DomainError("probe times must be strictly increasing and positive")
    alpha = 1.0 + beta
    scales = _cell_scales(ts, alpha)
    rng = replica_rng(master_seed, 0, stream=LIMIT_STREAM)
    params = StableParams(alpha=alpha, scale=1.0, skew=1.0)
    draws = sample_skewed_stable(params, rng, size=(replicas * scales.size))
    draws = draws.reshape(replicas, scales.size) * scales
    running = np.cumsum(draws, axis=1)
    return -K * running / ts[1:]


# ---------------------------------------------------------------------------
# the main experiment

def validate_config(cfg: ExperimentConfig,
                    calc: SpeedCalculator | None = None) -> dict:
    """Check the guards; returns the derived context or raises GuardError."""
    if cfg.backend not in _BACKENDS:
        raise DomainError(f"backend must be one of {_BACKENDS}")
    if cfg.speed not in _SPEEDS:
        raise DomainError(f"speed must be one of {_SPEEDS}")
    if cfg.replicas < 100:
        raise PreconditionError(f"need at least 100 replicas, got {cfg.replicas}")
    probes = tuple(float(t) for t in cfg.probe_times)
    if len(probes) == 0 or any(t <= 0.0 for t in probes) or \
            list(probes) != sorted(set(probes)):
        raise DomainError("probe times must be positive, strictly increasing")
    if cfg.eps <= 0.0 or cfg.n0 < 2:
        raise DomainError("need eps > 0 and n0 >= 2")
    calc = calc or SpeedCalculator(cfg.spec)
    v_probe = np.array([calc.speed_at(cfg.eps * t) for t in probes])
    v_max_probe = float(v_probe[-1])
    if v_max_probe > cfg.n0 / 10.0:
        minimal = int(math.ceil(10.0 * v_max_probe))
        raise GuardError(
            f"finite-size guard failed: v(eps * max probe) = {v_max_probe:.1f} "
            f"> n0/10 = {cfg.n0 / 10.0:.1f}; needs n0 >= {minimal}",
            suggestion=minimal)
    if np.any(v_probe >= cfg.n0):
        raise GuardError(
            "a probe time falls before the simulation window: the speed still "
            f"exceeds n0 there (v = {float(v_probe.max()):.1f} >= {cfg.n0})",
            suggestion=int(math.ceil(10.0 * float(v_probe.max()))))
    t_shift = calc.time_at(cfg.n0)
    return {"calc": calc, "probes": probes, "v_probe": v_probe,
            "t_shift": t_shift, "constants": calc.constants}


def run_fluctuation_experiment(cfg: ExperimentConfig,
                               calc: SpeedCalculator | None = None) -> FluctuationReport:
    """Simulate, rescale with the chosen speed, compare to the limit law."""
    ctx = validate_config(cfg, calc)
    calc = ctx["calc"]
    probes = ctx["probes"]
    c = ctx["constants"]
    beta = c.beta
    if cfg.speed == "v":
        speeds = ctx["v_probe"]
    elif cfg.speed == "v_star":
        star = SpeedCalculator(cfg.spec, use_star=True, rel_tol=1e-8)
        speeds = np.array([star.speed_at(cfg.eps * t) for t in probes])
    else:
        speeds = np.array([c.K1 * (cfg.eps * t) ** (-1.0 / beta) for t in probes])

    t_shift = ctx["t_shift"]
    offsets = [cfg.eps * t - t_shift for t in probes]
    counts = simulate_replica_counts(cfg.spec, cfg.backend, cfg.n0, offsets,
                                     cfg.replicas, cfg.seed, cfg.workers)
    scale = cfg.eps ** (-1.0 / (1.0 + beta))
    ratios = counts / speeds[None, :]
    x = scale * (ratios - 1.0)
    z = sample_limit_marginals(beta, c.K, probes, cfg.replicas, cfg.seed)

    x_samples, z_samples, ks, mean_ratio, mean_abs = {}, {}, {}, {}, {}
    for j, t in enumerate(probes):
        x_samples[t] = np.sort(x[:, j])
        z_samples[t] = np.sort(z[:, j])
        ks[t] = two_sample_ks(x[:, j], z[:, j])
        mean_ratio[t] = float(np.mean(ratios[:, j]))
        mean_abs[t] = float(np.mean(np.abs(ratios[:, j] - 1.0)))
    versions = {"coalfluct": _version, "numpy": np.__version__}
    return FluctuationReport(
        config=cfg.echo(), probe_times=list(probes),
        speeds=[float(s) for s in speeds], time_shift=float(t_shift),
        guard_ratios=[float(cfg.n0 / v) for v in ctx["v_probe"]],
        x_samples=x_samples, z_samples=z_samples, ks=ks,
        mean_ratio=mean_ratio, mean_abs_deviation=mean_abs,
        versions=versions)


# ---------------------------------------------------------------------------
# sup-deviation scaling

def _supdev_task(args):
    (spec, n0, t_shift, t_list, t_end_sim, master_seed, indices, rates,
     table) = args
    out = np.empty((len(indices), len(t_list)))
    t_arr = np.asarray(t_list)
    for row, idx in enumerate(indices):
        rng = replica_rng(master_seed, idx)
        path = simulate_block_chain(spec, n0, t_end_sim, rng, rates=rates,
                                    seed_info=(master_seed, idx))
        s_abs = path.times + t_shift
        v_at = table.v(s_abs) if s_abs.size else np.empty(0)
        post = path.counts / v_at if s_abs.size else np.empty(0)
        pre_counts = np.concatenate([[n0], path.counts[:-1]]) if s_abs.size \
            else np.empty(0)
        pre = pre_counts / v_at if s_abs.size else np.empty(0)
        dev = np.maximum(np.abs(post - 1.0), np.abs(pre - 1.0))
        running = np.maximum.accumulate(dev) if dev.size else np.empty(0)
        pos = np.searchsorted(s_abs, t_arr, side="right")
        for k, t_k in enumerate(t_arr):
            m = running[pos[k] - 1] if pos[k] > 0 else 0.0
            n_here = path.counts[pos[k] - 1] if pos[k] > 0 else n0
            m = max(m, abs(n_here / table.v(float(t_k)) - 1.0))
            out[row, k] = m * m
    return out


def sup_deviation_scaling(spec: LambdaSpec, n0: int, t_list, replicas: int,
                          seed: int = 0, workers: int = 1,
                          calc: SpeedCalculator | None = None) -> dict:
    """Monte Carlo ``E sup_{s<=t} |N_s/v_s - 1|**2`` against ``t``.

    Returns the per-time estimates and the log-log slope; the second
    moment of the sup should grow linearly in ``t``.
    """
    t_list = sorted(float(t) for t in t_list)
    if len(t_list) < 2:
        raise DomainError("need at least two probe times for a slope")
    calc = calc or SpeedCalculator(spec)
    v_min_t = calc.speed_at(t_list[0])
    if v_min_t > n0 / 10.0:
        raise GuardError(
            f"finite-size guard failed: v(min t) = {v_min_t:.1f} > n0/10",
            suggestion=int(math.ceil(10.0 * v_min_t)))
    t_shift = calc.time_at(n0)
    t_end_sim = (t_list[-1] - t_shift) * (1.0 + 1e-9)
    table = build_speed_table(spec, t_min=t_shift / 4.0, t_max=t_list[-1] * 1.01,
                              n=160, calculator=calc)
    rates = ChainRateTable(spec, n0)
    chunks = _chunk_indices(replicas, workers)
    args = [(spec, n0, t_shift, t_list, t_end_sim, seed, idxs, rates, table)
            for idxs in chunks]
    parts = _map_tasks(_supdev_task, args, workers)
    sup2 = np.vstack(parts)
    means = sup2.mean(axis=0)
    slope, intercept = np.polyfit(np.log(t_list), np.log(means), 1)
    return {"t": list(t_list), "msd": [float(m) for m in means],
            "slope": float(slope), "intercept": float(intercept),
            "replicas": int(replicas), "time_shift": float(t_shift)}


# ---------------------------------------------------------------------------
# robustness counterexample

def counterexample_ratio(alpha: float, beta: float, t_grid,
                         allow_regular: bool = False) -> np.ndarray:
    """``r(t) = t**(-1/(1+beta)) * (w_t / v_t - 1)`` for the perturbed
    power measure ``y**-beta * (1 + y**alpha)``.

    With ``alpha < beta/(1+beta)`` the ratio is unbounded as ``t -> 0``
    (the power-law proxy is not a valid speed for second-order purposes);
    above that threshold it stays bounded, which callers must request
    explicitly via ``allow_regular``.
    """
    alpha = float(alpha)
    beta = float(beta)
    critical = beta / (1.0 + beta)
    if not 0.0 < alpha < beta:
        raise PreconditionError(
            f"need 0 < alpha < beta, got alpha={alpha}, beta={beta}")
    if alpha >= critical and not allow_regular:
        raise PreconditionError(
            f"alpha={alpha} >= beta/(1+beta)={critical:.6f}: the proxy speed is "
            "valid there; pass allow_regular=True to evaluate anyway")
    spec = perturbed_power(beta, alpha, 1.0, 1.0)
    calc = SpeedCalculator(spec)
    c = calc.constants
    ts = np.asarray(t_grid, dtype=float)
    if np.any(ts <= 0.0):
        raise DomainError("t grid must be positive")
    out = np.empty(ts.size)
    for i, t in enumerate(ts.ravel()):
        v = calc.speed_at(float(t))
        w = c.K1 * float(t) ** (-1.0 / beta)
        out[i] = float(t) ** (-1.0 / (1.0 + beta)) * (w / v - 1.0)
    return out.reshape(ts.shape)
