"""Monte Carlo experiments over lambda grids.

Replicate ``j`` at lambda index ``i`` draws from
``SeedSequence(seed, spawn_key=(i, j))``, so results do not depend on the
order or thread in which replicates run.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .bounds import RateParameters, build_dependency_graph, rho_exponential, theorem1_rhs
from .functionals import FunctionalDescriptor
from .geometry import ComponentTooLarge
from .measures import TestFunction, build_measure, integrate
from .point_process import Density, build_cube_partition, sample_poisson, stream

log = logging.getLogger(__name__)

MAX_FAILED_FRACTION = 0.01


class ExperimentFailed(RuntimeError):
    pass


def normal_cdf(t: float) -> float:
    return 0.5 * math.erfc(-t / math.sqrt(2.0))


def ks_distance(samples) -> float:
    """Kolmogorov distance between the empirical CDF of ``samples`` and Phi."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("ks_distance needs at least one sample")
    cdf = np.array([normal_cdf(v) for v in x.tolist()])
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(n) / n
    return float(max(upper.max(), lower.max()))


def standardize(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return (v - v.mean()) / v.std(ddof=1)


def fit_scaling(xs, ys) -> tuple[float, float, float]:
    """Least squares of log y on log x: (slope, intercept, R^2)."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if len(xs) < 3 or len(xs) != len(ys):
        raise ValueError("need at least 3 paired points")
    if np.any(ys <= 0) or np.any(xs <= 0):
        raise ValueError("fit_scaling needs positive values")
    fit = stats.linregress(np.log(xs), np.log(ys))
    return float(fit.slope), float(fit.intercept), float(fit.rvalue**2)


@dataclass
class ExperimentConfig:
    descriptor: FunctionalDescriptor
    density: Density
    test_function: TestFunction
    lambdas: list[float]
    replicates: int
    seed: int
    rho_alpha: float | None = None

    def __post_init__(self):
        self.lambdas = [float(v) for v in self.lambdas]
        if not self.lambdas:
            raise ValueError("lambda grid is empty")
        if any(b <= a for a, b in zip(self.lambdas, self.lambdas[1:])):
            raise ValueError("lambda grid must be strictly increasing")
        if self.lambdas[0] < 2:
            raise ValueError("lambda values must be >= 2")
        if self.replicates < 2:
            raise ValueError("need at least 2 replicates")


@dataclass
class LambdaSummary:
    lam: float
    values: np.ndarray  # nan where the replicate failed
    status: list[str]
    mean: float
    variance: float
    ks: float | None
    degenerate: bool

    @property
    def n_ok(self) -> int:
        return int(np.isfinite(self.values).sum())


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    per_lambda: list[LambdaSummary]
    variance_fit: tuple[float, float, float] | None
    ks_fit: tuple[float, float, float] | None
    bounds: list[dict] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def sigma2(self) -> float | None:
        return None if self.variance_fit is None else math.exp(self.variance_fit[1])

    def raw_rows(self):
        for s in self.per_lambda:
            for j, (v, st) in enumerate(zip(s.values.tolist(), s.status)):
                yield s.lam, j, v, st

    def write_raw_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda", "replicate", "value", "status"])
            for lam, j, v, st in self.raw_rows():
                w.writerow([repr(lam), j, repr(v) if st == "ok" else "", st])

    def summary(self) -> dict:
        out = {
            "kind": self.config.descriptor.kind,
            "seed": self.config.seed,
            "replicates": self.config.replicates,
            "lambdas": [],
            "variance_fit": None,
            "ks_fit": None,
            "sigma2_estimate": self.sigma2,
            "bounds": self.bounds,
        }
        for s in self.per_lambda:
            out["lambdas"].append({
                "lambda": s.lam,
                "n_ok": s.n_ok,
                "n_failed": len(s.status) - s.n_ok,
                "mean": s.mean,
                "variance": s.variance,
                "ks_distance": s.ks,
                "degenerate": s.degenerate,
            })
        if self.variance_fit:
            out["variance_fit"] = dict(zip(("slope", "intercept", "r2"), self.variance_fit))
        if self.ks_fit:
            out["ks_fit"] = dict(zip(("slope", "intercept", "r2"), self.ks_fit))
        return out


def _replicate(config: ExperimentConfig, li: int, j: int) -> tuple[float, str]:
    lam = config.lambdas[li]
    cfg = sample_poisson(lam, config.density, stream(config.seed, li, j))
    try:
        measure = build_measure(config.descriptor, lam, cfg, config.density.domain)
    except (ValueError, ComponentTooLarge) as exc:
        log.debug("replicate (%d, %d) failed: %s", li, j, exc)
        return math.nan, "failed"
    return integrate(measure, config.test_function), "ok"


def _summarize(lam: float, results: list[tuple[float, str]]) -> LambdaSummary:
    values = np.array([v for v, _ in results])
    status = [s for _, s in results]
    ok = values[np.isfinite(values)]
    mean = float(ok.mean()) if len(ok) else math.nan
    var = float(ok.var(ddof=1)) if len(ok) > 1 else math.nan
    degenerate = not (var > 0)
    ks = None if degenerate else ks_distance(standardize(ok))
    return LambdaSummary(lam, values, status, mean, var, ks, degenerate)


def default_threads() -> int:
    env = os.environ.get("STABLAB_THREADS")
    return max(1, int(env)) if env else 1


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> ExperimentResult:
    threads = default_threads() if threads is None else max(1, int(threads))
    start = time.perf_counter()
    per_lambda = []
    m = config.replicates
    for li, lam in enumerate(config.lambdas):
        if threads == 1:
            results = [_replicate(config, li, j) for j in range(m)]
        else:
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(lambda j: _replicate(config, li, j), range(m)))
        summary = _summarize(lam, results)
        failed = len(results) - summary.n_ok
        if failed > MAX_FAILED_FRACTION * m:
            raise ExperimentFailed(f"{failed} of {m} replicates failed at lambda={lam}")
        per_lambda.append(summary)
        log.info("lambda=%g mean=%.6g var=%.6g ks=%s", lam, summary.mean, summary.variance, summary.ks)

    variance_fit = ks_fit = None
    if len(per_lambda) >= 3:
        lams = [s.lam for s in per_lambda]
        variances = [s.variance for s in per_lambda]
        if all(v > 0 for v in variances):
            variance_fit = fit_scaling(lams, variances)
        ks = [s.ks for s in per_lambda]
        if all(k is not None and k > 0 for k in ks):
            ks_fit = fit_scaling(lams, ks)

    bounds = []
    if config.rho_alpha is not None:
        for s in per_lambda:
            rho = rho_exponential(s.lam, config.rho_alpha)
            part = build_cube_partition(s.lam, rho, config.density)
            graph = build_dependency_graph(part)
            entry = {"lambda": s.lam, "rho": rho, "side": part.side, "V": part.V,
                     "max_degree": graph.max_degree, "D": graph.D}
            if s.variance > 0:
                rp = RateParameters(d=config.density.dim, p=math.inf, q=3.0, gamma=math.inf,
                                    lam=s.lam, variance=s.variance)
                entry["theorem1_rhs_C1"] = theorem1_rhs(rp)
            bounds.append(entry)
    return ExperimentResult(config, per_lambda, variance_fit, ks_fit, bounds, time.perf_counter() - start)
