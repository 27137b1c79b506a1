"""Command line front end: ``stablab {experiment,tails,verify-stab,bounds} CONFIG``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .bounds import (
    ChenShaoInput,
    RateParameters,
    chen_shao_bound,
    rho_exponential,
    rho_polynomial,
    theorem1_rhs,
    theorem2_exponent,
)
from .config import ConfigError, parse_config
from .geometry import ComponentTooLarge
from .clt_harness import ExperimentFailed, run_experiment
from .point_process import sample_poisson, stream
from .stabilization import (
    classify_decay,
    default_points,
    empirical_tau,
    negative_control,
    radius_at,
    rule_for,
    verify_stabilization,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("stablab")

# Kolmogorov limit law spread, for KS plot error bars
_KS_SD = float(stats.kstwobign.std())


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _write_triples(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else repr(float(v)) for v in row])


def run_experiment_job(cfg, out: Path, threads) -> dict:
    result = run_experiment(cfg, threads=threads)
    result.write_raw_csv(out / "raw.csv")
    m = cfg.replicates
    _write_triples(out / "var_scaling.csv", ["lambda", "variance", "stderr"],
                   [(s.lam, s.variance, s.variance * math.sqrt(2 / (s.n_ok - 1))) for s in result.per_lambda])
    _write_triples(out / "ks_vs_lambda.csv", ["lambda", "ks_distance", "stderr"],
                   [(s.lam, s.ks, _KS_SD / math.sqrt(m) if s.ks is not None else None) for s in result.per_lambda])
    return result.summary()


def run_tails_job(job, out: Path) -> dict:
    rule = rule_for(job.descriptor, job.rule, job.probe)
    points = job.points or default_points(job.density)
    tail = empirical_tau(job.descriptor, rule, job.lambdas, points, job.replicates, job.t, job.seed, job.density)
    tail.to_csv(out / "tail.csv")
    decay = classify_decay(tail)
    return {
        "kind": job.descriptor.kind,
        "rule": job.rule,
        "seed": job.seed,
        "replicates": job.replicates,
        "grid": {"lambdas": tail.lambdas, "points": tail.points},
        "tail": {"t": tail.t, "tau_hat": tail.tau_hat, "stderr": tail.stderr},
        "decay": decay.__dict__,
    }


def run_verify_job(job, out: Path) -> dict:
    rule = rule_for(job.descriptor, job.rule, job.probe)
    rows = []
    density = job.density
    for inst in range(job.instances):
        if job.negative_control:
            # crafted pair instance, already carrying the halved radius
            nc = negative_control(stream(job.seed, inst, 0), job.lam, job.descriptor.b)
            cfg, index, radius, density = nc.config, nc.index, nc.radius, nc.density
        else:
            cfg = sample_poisson(job.lam, density, stream(job.seed, inst, 0))
            center = (density.domain.lower + density.domain.upper) / 2
            cfg, index = cfg.insert(center, float(np.random.default_rng(stream(job.seed, inst, 1)).random()))
            radius = radius_at(cfg, job.lam, index, rule, b=job.descriptor.b)
            if job.halve_radius:
                radius /= 2
        violations = verify_stabilization(job.descriptor, job.lam, cfg, index, radius, job.trials,
                                          stream(job.seed, inst, 2).generate_state(1)[0], density)
        rows.append({"instance": inst, "points": len(cfg), "radius": radius, "violations": violations})
    with open(out / "violations.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "points", "radius", "violations"])
        for r in rows:
            w.writerow([r["instance"], r["points"], repr(r["radius"]), r["violations"]])
    return {"kind": job.descriptor.kind, "rule": job.rule, "lambda": job.lam, "trials": job.trials,
            "halve_radius": job.halve_radius, "negative_control": job.negative_control, "instances": rows,
            "total_violations": sum(r["violations"] for r in rows)}


def run_bounds_job(job) -> dict:
    v = job.values
    out = {}
    if all(k in v for k in ("q", "D", "V", "theta")):
        out["chen_shao"] = chen_shao_bound(ChenShaoInput(v["q"], v["D"], v["V"], v["theta"]))
    if "lambda" in v and "alpha" in v:
        out["rho_exponential"] = rho_exponential(v["lambda"], v["alpha"])
    if all(k in v for k in ("p", "gamma", "d")):
        if "lambda" in v:
            a, rho, check = rho_polynomial(v["lambda"], v["p"], v["gamma"], v["d"], v.get("C", 1.0))
            out["rho_polynomial"] = {"a": a, "rho": rho, "check": check}
        if v["gamma"] > v["d"] * (150 + 6 / v["p"]):
            out["theorem2_exponent"] = theorem2_exponent(v["p"], v["gamma"], v["d"])
    if all(k in v for k in ("d", "q", "lambda", "variance")):
        rp = RateParameters(v["d"], v.get("p", math.inf), v["q"], v.get("gamma", math.inf), v["lambda"], v["variance"])
        out["theorem1_rhs"] = theorem1_rhs(rp, v.get("C", 1.0))
    return {"inputs": v, "bounds": out}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stablab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"stablab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("experiment", "Monte Carlo CLT experiment over a lambda grid"),
                            ("tails", "empirical tail of the stabilization radius"),
                            ("verify-stab", "perturbation check of a stabilization radius"),
                            ("bounds", "evaluate the explicit bound formulas")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", type=Path)
        p.add_argument("--out", type=Path, default=Path("stablab-out"))
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, help="worker threads (default: $STABLAB_THREADS or 1)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    t0 = time.perf_counter()
    try:
        text = args.config.read_text()
        job = parse_config(text, args.command, base=args.config.parent)
        if args.seed is not None:
            if args.command == "bounds":
                raise ConfigError("--seed does not apply to bounds")
            job = replace(job, seed=args.seed)
    except (OSError, ConfigError) as exc:
        print(f"stablab: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "experiment":
            summary = run_experiment_job(job, out, args.threads)
        elif args.command == "tails":
            summary = run_tails_job(job, out)
        elif args.command == "verify-stab":
            summary = run_verify_job(job, out)
        else:
            summary = run_bounds_job(job)
    except ValueError as exc:
        # parameter combinations that only fail once the job is assembled
        print(f"stablab: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExperimentFailed, ComponentTooLarge, OSError, RuntimeError) as exc:
        print(f"stablab: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    summary["version"] = __version__
    _write_json(out / "summary.json", summary)
    manifest = {
        "config": str(args.config),
        "output_dir": str(out),
        "suite": args.command,
        "version": __version__,
        "started": started,
        "wall_seconds": time.perf_counter() - t0,
        "artifacts": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
    }
    _write_json(out / "manifest.json", manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
