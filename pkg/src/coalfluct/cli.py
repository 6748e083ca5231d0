"""Command-line entry point.

Every subcommand resolves its configuration (JSON file plus flag
overrides), writes machine-readable outputs (CSV for bulk numbers, JSON
for reports) into the output directory, and records a run manifest with
content digests.  Outputs are a pure function of (subcommand, config,
seed, version); the manifest additionally carries wall-clock timestamps
and is therefore excluded from byte-for-byte comparisons.

Exit codes: 0 success, 1 numeric failure, 2 precondition/guard refusal
or usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .coalescent import simulate_block_chain, simulate_poisson_coloring
from .errors import DomainError, NumericError, PreconditionError
from .harness import (ExperimentConfig, counterexample_ratio,
                      run_fluctuation_experiment, sup_deviation_scaling)
from .measure import from_json as spec_from_json
from .measure import to_json as spec_to_json
from .psi import PsiEvaluator
from .speed import SpeedCalculator, build_speed_table, speed_v_star, speed_w
from .stable import (StableParams, sample_skewed_stable, simulate_Z_direct,
                     simulate_Z_sde)
from .streams import replica_rng


def _fmt(x) -> str:
    """Full round-trip decimal text for one number."""
    return repr(float(x))


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, (int, float, np.floating))
                              and not isinstance(v, bool) else str(v)
                              for v in row) + "\n")


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(";", ",").split(",") if tok.strip()]


def _load_spec(arg: str):
    if os.path.exists(arg):
        with open(arg, "r", encoding="utf-8") as fh:
            return spec_from_json(fh.read())
    return spec_from_json(arg)


class _Manifest:
    def __init__(self, out_dir: str, subcommand: str, config: dict, seed):
        self.doc = {
            "subcommand": subcommand,
            "config": config,
            "master_seed": seed,
            "tool_version": __version__,
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "finished_at": None,
            "outputs": [],
            "status": "running",
            "error": None,
        }
        self.out_dir = out_dir
        self.path = os.path.join(out_dir, f"manifest-{subcommand}.json")

    def add_output(self, path: str) -> None:
        with open(path, "rb") as fh:
            blob = fh.read()
        self.doc["outputs"].append({
            "path": os.path.basename(path),
            "sha256": hashlib.sha256(blob).hexdigest(),
            "bytes": len(blob),
        })

    def finish(self, status: str, error: str | None = None) -> None:
        self.doc["status"] = status
        self.doc["error"] = error
        self.doc["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        with open(self.path, "w", encoding="utf-8") as fh:
            json.dump(self.doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _out_dir(args) -> str:
    out = args.out or os.environ.get("COALFLUCT_OUTDIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommand bodies; each returns a list of output file paths

def _cmd_psi_eval(args, out_dir: str) -> list[str]:
    spec = _load_spec(args.spec)
    ev = PsiEvaluator(spec)
    qs = _parse_floats(args.q)
    rows = []
    for q in qs:
        psi = ev.psi(q)
        star = ev.psi_star(q)
        h = psi / q
        hp = ev.h_prime(q) if q > 1.0 else float("nan")
        rows.append((q, psi, star, h, hp))
    path = os.path.join(out_dir, "psi-eval.csv")
    _write_csv(path, ["q", "psi", "psi_star", "h", "h_prime"], rows)
    return [path]


def _cmd_speed_table(args, out_dir: str) -> list[str]:
    spec = _load_spec(args.spec)
    calc = SpeedCalculator(spec)
    table = build_speed_table(spec, args.tmin, args.tmax, args.n, calculator=calc)
    star = SpeedCalculator(spec, use_star=True)
    rows = []
    for t, v in zip(table.ts, table.vs):
        rows.append((t, v, star.speed_at(float(t)), speed_w(spec, float(t))))
    path = os.path.join(out_dir, "speed-table.csv")
    _write_csv(path, ["t", "v", "v_star", "w"], rows)
    return [path]


def _cmd_simulate(args, out_dir: str) -> list[str]:
    spec = _load_spec(args.spec)
    rows = []
    quantiles = [0.05, 0.25, 0.5, 0.75, 0.95]
    finals = []
    for idx in range(args.replicas):
        rng = replica_rng(args.seed, idx)
        if args.backend == "chain":
            path = simulate_block_chain(spec, args.n0, args.t_end, rng,
                                        seed_info=(args.seed, idx))
        else:
            path = simulate_poisson_coloring(spec, args.n0, args.t_end, rng,
                                             seed_info=(args.seed, idx))
        finals.append(path.counts[-1] if path.counts.size else args.n0)
        if not args.summary:
            for t, n in zip(path.times, path.counts):
                rows.append((idx, t, int(n)))
    out = os.path.join(out_dir, "simulate.csv")
    if args.summary:
        finals = np.asarray(finals, dtype=float)
        rows = [(q, float(np.quantile(finals, q))) for q in quantiles]
        _write_csv(out, ["quantile", "final_N"], rows)
    else:
        _write_csv(out, ["replica", "jump_time", "N"], rows)
    return [out]


def _cmd_stable_sample(args, out_dir: str) -> list[str]:
    params = StableParams(alpha=args.alpha, scale=args.scale, skew=args.skew)
    rng = replica_rng(args.seed, 0)
    draws = sample_skewed_stable(params, rng, size=args.n)
    path = os.path.join(out_dir, "stable-sample.csv")
    _write_csv(path, ["x"], [(v,) for v in draws])
    return [path]


def _cmd_simulate_z(args, out_dir: str) -> list[str]:
    grid = _parse_floats(args.grid)
    rows = []
    for idx in range(args.replicas):
        rng = replica_rng(args.seed, idx)
        if args.route == "direct":
            p = simulate_Z_direct(args.beta, args.K, grid, rng)
        else:
            p = simulate_Z_sde(args.beta, args.K, grid, rng)
        for t, z in zip(p.times, p.values):
            rows.append((idx, t, z))
    path = os.path.join(out_dir, "simulate-z.csv")
    _write_csv(path, ["replica", "t", "z"], rows)
    return [path]


def _cmd_fluctuations(args, out_dir: str) -> list[str]:
    cfg_doc = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg_doc = json.load(fh)
    overrides = {
        "n0": args.n0, "eps": args.eps, "replicas": args.replicas,
        "seed": args.seed_opt, "backend": args.backend, "speed": args.speed,
        "workers": args.workers,
    }
    for key, val in overrides.items():
        if val is not None:
            cfg_doc[key] = val
    if args.probes is not None:
        cfg_doc["probe_times"] = _parse_floats(args.probes)
    if args.spec is not None:
        cfg_doc["spec"] = json.loads(spec_to_json(_load_spec(args.spec)))
    spec_doc = cfg_doc.get("spec")
    if spec_doc is None:
        raise PreconditionError("fluctuations needs a measure ('spec' in the "
                                "config file or --spec)")
    cfg = ExperimentConfig(
        spec=spec_from_json(spec_doc if isinstance(spec_doc, dict)
                            else json.loads(spec_doc)),
        n0=int(cfg_doc["n0"]), eps=float(cfg_doc["eps"]),
        probe_times=tuple(float(t) for t in cfg_doc["probe_times"]),
        replicas=int(cfg_doc["replicas"]),
        backend=cfg_doc.get("backend", "chain"),
        speed=cfg_doc.get("speed", "v"),
        seed=int(cfg_doc.get("seed", 0)),
        workers=int(cfg_doc.get("workers", 1)))
    report = run_fluctuation_experiment(cfg)
    report_path = os.path.join(out_dir, "fluctuations-report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    csv_path = os.path.join(out_dir, "fluctuations-samples.csv")
    rows = []
    for t in report.probe_times:
        xs = report.x_samples[t]
        zs = report.z_samples[t]
        for i in range(len(xs)):
            rows.append((t, i, xs[i], zs[i]))
    _write_csv(csv_path, ["probe_t", "rank", "x", "z"], rows)
    return [report_path, csv_path]


def _cmd_sup_scaling(args, out_dir: str) -> list[str]:
    spec = _load_spec(args.spec)
    result = sup_deviation_scaling(spec, args.n0, _parse_floats(args.t_list),
                                   args.replicas, seed=args.seed,
                                   workers=args.workers)
    csv_path = os.path.join(out_dir, "sup-scaling.csv")
    _write_csv(csv_path, ["t", "msd"],
               list(zip(result["t"], result["msd"])))
    json_path = os.path.join(out_dir, "sup-scaling.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(result, fh, sort_keys=True)
        fh.write("\n")
    return [csv_path, json_path]


def _cmd_counterexample(args, out_dir: str) -> list[str]:
    grid = _parse_floats(args.tgrid)
    values = counterexample_ratio(args.alpha, args.beta, grid,
                                  allow_regular=args.allow_regular)
    path = os.path.join(out_dir, "counterexample.csv")
    _write_csv(path, ["t", "r"], list(zip(grid, values)))
    return [path]


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coalfluct",
        description="Speed and fluctuation experiments for coalescents "
                    "coming down from infinity")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, seed_default=0):
        p.add_argument("--out", default=None, help="output directory "
                       "(default: $COALFLUCT_OUTDIR or '.')")
        p.add_argument("--seed", type=int, default=seed_default)

    p = sub.add_parser("psi-eval", help="evaluate the drift functionals")
    p.add_argument("--spec", required=True, help="measure JSON (file or inline)")
    p.add_argument("--q", required=True, help="comma-separated q values")
    common(p)

    p = sub.add_parser("speed-table", help="tabulate v, v*, w")
    p.add_argument("--spec", required=True)
    p.add_argument("--tmin", type=float, required=True)
    p.add_argument("--tmax", type=float, required=True)
    p.add_argument("--n", type=int, default=64)
    common(p)

    p = sub.add_parser("simulate", help="simulate block-count paths")
    p.add_argument("--spec", required=True)
    p.add_argument("--n0", type=int, required=True)
    p.add_argument("--t-end", dest="t_end", type=float, required=True)
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--backend", choices=["chain", "poisson"], default="chain")
    p.add_argument("--summary", action="store_true",
                   help="emit final-count quantiles instead of full paths")
    common(p)

    p = sub.add_parser("stable-sample", help="draw skewed stable variables")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--skew", type=float, choices=[-1.0, 1.0], default=1.0)
    p.add_argument("--n", type=int, required=True)
    common(p)

    p = sub.add_parser("simulate-z", help="simulate the limit process")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--K", type=float, required=True)
    p.add_argument("--grid", required=True, help="comma-separated time grid")
    p.add_argument("--route", choices=["direct", "sde"], default="direct")
    p.add_argument("--replicas", type=int, default=1)
    common(p)

    p = sub.add_parser("fluctuations", help="rescaled-fluctuation experiment")
    p.add_argument("--config", default=None, help="experiment config JSON")
    p.add_argument("--spec", default=None)
    p.add_argument("--n0", type=int, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--probes", default=None, help="comma-separated probe times")
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--backend", choices=["chain", "poisson"], default=None)
    p.add_argument("--speed", choices=["v", "v_star", "w"], default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", dest="seed_opt", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("sup-scaling", help="sup-deviation second-moment scaling")
    p.add_argument("--spec", required=True)
    p.add_argument("--n0", type=int, required=True)
    p.add_argument("--t-list", dest="t_list", required=True)
    p.add_argument("--replicas", type=int, default=200)
    p.add_argument("--workers", type=int, default=1)
    common(p)

    p = sub.add_parser("counterexample", help="proxy-speed ratio r(t)")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--tgrid", required=True)
    p.add_argument("--allow-regular", action="store_true")
    common(p)
    return parser


_BODIES = {
    "psi-eval": _cmd_psi_eval,
    "speed-table": _cmd_speed_table,
    "simulate": _cmd_simulate,
    "stable-sample": _cmd_stable_sample,
    "simulate-z": _cmd_simulate_z,
    "fluctuations": _cmd_fluctuations,
    "sup-scaling": _cmd_sup_scaling,
    "counterexample": _cmd_counterexample,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    out_dir = _out_dir(args)
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = getattr(args, "seed_opt", None)
    config_echo = {k: v for k, v in vars(args).items() if k != "subcommand"}
    manifest = _Manifest(out_dir, args.subcommand, config_echo, seed)
    try:
        outputs = _BODIES[args.subcommand](args, out_dir)
        for path in outputs:
            manifest.add_output(path)
        manifest.finish("ok")
        return 0
    except (PreconditionError, DomainError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        manifest.finish("refused", str(exc))
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        manifest.finish("numeric-failure", str(exc))
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        manifest.finish("error", str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
