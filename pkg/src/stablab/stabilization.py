"""Radii of stabilization, empirical tails and moment checks.

The supremum over locations and intensities is replaced by a maximum over a
finite sampled grid of ``(lambda, x)`` cells. The grid is kept in the
returned metadata.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .functionals import FunctionalDescriptor, colors_of, evaluate_at
from .geometry import components, distances, geometric_graph
from .point_process import Density, MarkedConfiguration, rescale_about, sample_poisson, stream

RULES = ("nn-distance", "component-extent-plus-2b", "user-supplied-probe")

_COMPATIBLE = {
    # not knn-edge-length: an outside point may adopt x as its nearest neighbor
    "nn-distance": {"two-color-mismatch", "knn-distance-indicator"},
    "component-extent-plus-2b": {"independence-ratio"},
}

# values closer than this count as unchanged
CHANGE_TOL = 1e-12


@dataclass(frozen=True)
class RadiusRule:
    kind: str
    rule: str
    probe: float | None = None

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown radius rule {self.rule!r}")
        if self.rule == "user-supplied-probe":
            if self.probe is None or not self.probe > 0:
                raise ValueError("user-supplied-probe needs a positive probe radius")
        elif self.kind not in _COMPATIBLE[self.rule]:
            raise ValueError(f"rule {self.rule!r} is not a stabilization radius for {self.kind!r}")


def rule_for(desc: FunctionalDescriptor, rule: str, probe: float | None = None) -> RadiusRule:
    rr = RadiusRule(desc.kind, rule, probe)
    if rule == "nn-distance" and desc.kind != "two-color-mismatch" and desc.k != 1:
        raise ValueError("the nearest-neighbor radius only covers k = 1")
    return rr


def radius_at(config: MarkedConfiguration, lam: float, index: int, rule: RadiusRule, b: float | None = None) -> float:
    """Radius of stabilization in rescaled units; ``inf`` when no neighbor exists."""
    n, d = len(config), config.dim
    if not 0 <= index < n:
        raise ValueError(f"point index {index} not in configuration of size {n}")
    if rule.rule == "user-supplied-probe":
        return float(rule.probe)
    scaled = config.positions * lam ** (1.0 / d)
    x = scaled[index]
    if rule.rule == "nn-distance":
        if n < 2:
            return math.inf
        dist = distances(scaled, x)
        dist[index] = np.inf
        return float(dist.min())
    if b is None:
        raise ValueError("component rule needs b")
    comp = _component_of(scaled, index, b)
    return float(distances(scaled[comp], x).max()) + 2 * b


def _component_of(points: np.ndarray, index: int, b: float) -> list[int]:
    graph = geometric_graph(points, b)
    for comp in components(graph):
        if index in comp:
            return comp
    raise AssertionError("index missing from components")


def _xi_at(desc: FunctionalDescriptor, lam: float, config: MarkedConfiguration, index: int, colors=None) -> float:
    """Rescaled score at one point, nan where the configuration is too small to score."""
    scaled = rescale_about(config.positions[index], lam ** (1.0 / config.dim), config)
    try:
        return evaluate_at(desc, scaled, index, colors)
    except ValueError:
        return math.nan


def verify_stabilization(desc: FunctionalDescriptor, lam: float, config: MarkedConfiguration, index: int,
                         radius: float, trials: int, seed, density: Density) -> int:
    """Count perturbations outside the ball that change the rescaled score at ``index``.

    The ball has radius ``lam**(-1/d) * radius`` in original units. Each
    trial keeps the points inside it, keeps each outside point with
    probability 1/2, and adds a fresh Poisson sample of intensity ``lam / 2``
    restricted to the domain minus the ball, so the outside stays Poisson
    with the original intensity. The result is compared with
    the value on the inside points alone.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    d = config.dim
    x = config.positions[index]
    # closed ball; the slack keeps a point that defines the radius inside after rounding
    ball = lam ** (-1.0 / d) * radius * (1 + 1e-12)
    inside = distances(config.positions, x) <= ball
    core_idx = np.flatnonzero(inside)
    outside_idx = np.flatnonzero(~inside)
    core = config.subset(core_idx)
    pos_in_core = int(np.flatnonzero(core_idx == index)[0])
    two_color = desc.kind == "two-color-mismatch"

    def value(cfg, i):
        return _xi_at(desc, lam, cfg, i, colors_of(cfg, desc.q) if two_color else None)

    base = value(core, pos_in_core)
    violations = 0
    for t in range(trials):
        rng = np.random.default_rng(stream(seed, t))
        keep = outside_idx[rng.random(len(outside_idx)) < 0.5]
        fresh = sample_poisson(lam / 2, density, rng.integers(2**63))
        far = distances(fresh.positions, x) > ball if len(fresh) else np.zeros(0, dtype=bool)
        fresh = fresh.subset(np.flatnonzero(far))
        pos = np.vstack([core.positions, config.positions[keep], fresh.positions])
        marks = np.concatenate([core.marks, config.marks[keep], fresh.marks])
        perturbed = MarkedConfiguration(pos, marks, check=False)
        got = value(perturbed, pos_in_core)
        same = (math.isnan(got) and math.isnan(base)) or abs(got - base) <= CHANGE_TOL
        violations += not same
    return violations


@dataclass(frozen=True)
class NegativeControl:
    descriptor: FunctionalDescriptor
    lam: float
    config: MarkedConfiguration
    index: int
    radius: float  # half the true radius
    density: Density


def negative_control(seed=0, lam: float = 400.0, b: float = 0.7, gap: float = 0.6) -> NegativeControl:
    """Independence-ratio instance whose halved radius is not a stabilization radius.

    x sits at the center of the unit square with one neighbor at scaled
    distance ``gap`` < b; every other point of a Poisson sample within
    scaled distance 3 of x is removed, so the component of x is that pair
    and the true radius is gap + 2b. Points added between half that radius and
    the neighbor's reach join the component and change the ratio at x.
    """
    density = Density.uniform()
    scale = lam ** 0.5
    x = np.array([0.5, 0.5])
    y = x + np.array([gap / scale, 0.0])
    cfg = sample_poisson(lam, density, seed)
    far = distances(cfg.positions, x) * scale > 3.0
    pos = np.vstack([x, y, cfg.positions[far]])
    marks = np.concatenate([[0.5, 0.5], cfg.marks[far]])
    cfg = MarkedConfiguration(pos, marks)
    if not gap < b < 1.5 - gap / 2:
        raise ValueError("need gap < b and the pair isolated within scaled distance 3")
    desc = FunctionalDescriptor("independence-ratio", b=b)
    radius = radius_at(cfg, lam, 0, RadiusRule(desc.kind, "component-extent-plus-2b"), b=b)
    return NegativeControl(desc, lam, cfg, 0, radius / 2, density)


@dataclass
class TailEstimate:
    t: np.ndarray
    tau_hat: np.ndarray
    stderr: np.ndarray
    n: int
    lambdas: list[float]
    points: list[list[float]]
    cell_fractions: np.ndarray = field(repr=False, default=None)  # (cells, len(t))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "tau_hat", "stderr", "n"])
            for row in zip(self.t.tolist(), self.tau_hat.tolist(), self.stderr.tolist()):
                w.writerow([repr(v) for v in row] + [self.n])


def _nn_radius_inserted(lam: float, density: Density, x: np.ndarray, seq) -> float:
    cfg = sample_poisson(lam, density, seq)
    if len(cfg) == 0:
        return math.inf
    return float(distances(cfg.positions, x).min()) * lam ** (1.0 / len(x))


def sample_radius(desc: FunctionalDescriptor, rule: RadiusRule, lam: float, density: Density, x, seq,
                  ) -> float:
    """R(x, lambda) for x inserted into one fresh Poisson sample."""
    x = np.asarray(x, dtype=float)
    if rule.rule == "nn-distance":
        return _nn_radius_inserted(lam, density, x, seq)
    cfg = sample_poisson(lam, density, seq)
    cfg, i = cfg.insert(x, 0.5)
    return radius_at(cfg, lam, i, rule, b=desc.b)


def empirical_tau(desc: FunctionalDescriptor, rule: RadiusRule, lambdas, points, replicates: int, t_grid, seed,
                  density: Density) -> TailEstimate:
    """Exceedance fractions P[R > t], maximized over the (lambda, x) cells."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    lambdas, points = list(lambdas), [list(map(float, p)) for p in points]
    t = np.asarray(sorted(t_grid), dtype=float)
    if not len(lambdas) or not len(points) or not len(t):
        raise ValueError("lambda, point and t grids must be nonempty")
    fractions = []
    for li, lam in enumerate(lambdas):
        for xi, x in enumerate(points):
            radii = np.array([sample_radius(desc, rule, lam, density, x, stream(seed, li, xi, r))
                              for r in range(replicates)])
            # inf radii exceed every t
            fractions.append((radii[:, None] > t[None, :]).mean(axis=0))
    fractions = np.array(fractions)
    tau = fractions.max(axis=0)
    se = np.sqrt(tau * (1 - tau) / replicates)
    return TailEstimate(t, tau, se, replicates, lambdas, points, fractions)


@dataclass(frozen=True)
class DecayClass:
    kind: str  # exponential-consistent | polynomial | inconclusive
    rate: float | None  # decay rate (exponential) or gamma (polynomial)
    r2_exponential: float | None = None
    r2_polynomial: float | None = None
    slope_exponential: float | None = None
    slope_polynomial: float | None = None


def classify_decay(tail: TailEstimate, r2_min: float = 0.95) -> DecayClass:
    """Compare log-linear and log-log fits of the positive part of the tail."""
    pos = tail.tau_hat > 0
    if pos.sum() < 4:
        return DecayClass("inconclusive", None)
    t, logtau = tail.t[pos], np.log(tail.tau_hat[pos])
    if np.all(logtau == logtau[0]):
        return DecayClass("inconclusive", None)
    fit_e = stats.linregress(t, logtau)
    r2_e = fit_e.rvalue ** 2
    if np.all(t > 0):
        fit_p = stats.linregress(np.log(t), logtau)
        r2_p = fit_p.rvalue ** 2
        slope_p = fit_p.slope
    else:
        r2_p, slope_p = -math.inf, None
    info = dict(r2_exponential=r2_e, r2_polynomial=r2_p if slope_p is not None else None,
                slope_exponential=fit_e.slope, slope_polynomial=slope_p)
    if max(r2_e, r2_p) < r2_min:
        return DecayClass("inconclusive", None, **info)
    if r2_e >= r2_p and fit_e.slope < 0:
        return DecayClass("exponential-consistent", -fit_e.slope, **info)
    if slope_p is not None and slope_p < 0:
        return DecayClass("polynomial", -slope_p, **info)
    return DecayClass("inconclusive", None, **info)


@dataclass(frozen=True)
class MomentEstimate:
    value: float  # max over cells
    stderr: float
    cells: list[tuple[float, tuple[float, ...], float, float]]  # (lambda, x, mean, stderr)


def empirical_moment(desc: FunctionalDescriptor, p: float, lambdas, points, replicates: int, seed,
                     density: Density) -> MomentEstimate:
    """Monte Carlo E|score_lambda((x, U); Poisson sample)|^p, maximized over the cells."""
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    cells = []
    for li, lam in enumerate(lambdas):
        for xi, x in enumerate(points):
            vals = np.empty(replicates)
            for r in range(replicates):
                seq = stream(seed, li, xi, r)
                mark = float(np.random.default_rng(stream(seed, li, xi, r, 1)).random())
                cfg, i = sample_poisson(lam, density, seq).insert(x, mark)
                colors = colors_of(cfg, desc.q) if desc.kind == "two-color-mismatch" else None
                vals[r] = abs(_xi_at(desc, lam, cfg, i, colors)) ** p
            if np.isnan(vals).any():
                raise ValueError(f"functional undefined on some replicate at lambda={lam}, x={x}")
            cells.append((float(lam), tuple(map(float, x)), float(vals.mean()),
                          float(vals.std(ddof=1) / math.sqrt(replicates))))
    best = max(cells, key=lambda c: c[2])
    return MomentEstimate(best[2], best[3], cells)


def fit_log_lambda_trend(est: MomentEstimate) -> tuple[float, float]:
    """Weighted least-squares slope of the cell means against log lambda, with its standard error.

    Cells at the same lambda are pooled by their weights; a slope within a
    few standard errors of zero means no visible growth in lambda.
    """
    x = np.log([c[0] for c in est.cells])
    y = np.array([c[2] for c in est.cells])
    se = np.array([c[3] for c in est.cells])
    if len(set(x.tolist())) < 2:
        raise ValueError("need at least two distinct lambda values")
    w = 1.0 / np.maximum(se, 1e-300) ** 2
    xbar = np.sum(w * x) / w.sum()
    sxx = np.sum(w * (x - xbar) ** 2)
    slope = float(np.sum(w * (x - xbar) * y) / sxx)
    return slope, float(math.sqrt(1.0 / sxx))


def default_points(density: Density, margin: float = 0.05) -> list[list[float]]:
    """Center of the box plus one point near its lower corner."""
    lo, hi = density.domain.lower, density.domain.upper
    center = (lo + hi) / 2
    near = lo + margin * (hi - lo)
    return [center.tolist(), near.tolist()]
