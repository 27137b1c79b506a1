"""Per-point score functions xi(x; X) and their global sums.

Each functional is computed for all points in one pass over a shared
structure (one nearest-neighbor graph, one diagram, one component split).
A point is always part of the structure it is scored in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import (
    DEFAULT_COMPONENT_CAP,
    NeighborIndex,
    components,
    geometric_graph,
    independence_number,
    pair_distances,
    voronoi_cells,
)
from .point_process import MarkedConfiguration, rescale_about

KINDS = (
    "knn-edge-length",
    "knn-distance-indicator",
    "two-color-mismatch",
    "voronoi-half-length",
    "sig-half-degree",
    "sig-degree-indicator",
    "rsa-packing",
    "independence-ratio",
)

# parameters each kind takes; the first tuple is required, the second defaulted
_PARAMS = {
    "knn-edge-length": ((), {"k": 1}),
    "knn-distance-indicator": (("s",), {"k": 1}),
    "two-color-mismatch": (("q",), {}),
    "voronoi-half-length": ((), {}),
    "sig-half-degree": ((), {}),
    "sig-degree-indicator": (("delta",), {}),
    "rsa-packing": (("r",), {}),
    "independence-ratio": (("b",), {}),
}

TRANSLATION_INVARIANT = frozenset(KINDS) - {"two-color-mismatch"}


@dataclass(frozen=True)
class ColorThreshold:
    """q(x) = clip(intercept + coef . x, 0, 1)."""

    intercept: float = 0.0
    coef: tuple[float, ...] = ()

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        val = np.full(len(x), float(self.intercept))
        if self.coef:
            val = val + x[:, : len(self.coef)] @ np.asarray(self.coef, dtype=float)
        return np.clip(val, 0.0, 1.0)


@dataclass(frozen=True)
class FunctionalDescriptor:
    kind: str
    k: int | None = None
    s: float | None = None
    delta: int | None = None
    b: float | None = None
    r: float | None = None
    q: Callable | None = None

    def __post_init__(self):
        if self.kind not in _PARAMS:
            raise ValueError(f"unknown functional kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        required, defaults = _PARAMS[self.kind]
        allowed = set(required) | set(defaults)
        for name in ("k", "s", "delta", "b", "r", "q"):
            val = getattr(self, name)
            if name in defaults and val is None:
                object.__setattr__(self, name, defaults[name])
            elif name in required and val is None:
                raise ValueError(f"{self.kind}: parameter {name!r} is required")
            elif name not in allowed and val is not None:
                raise ValueError(f"{self.kind}: parameter {name!r} does not apply")
        if self.k is not None and (int(self.k) != self.k or self.k < 1):
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if self.delta is not None and (int(self.delta) != self.delta or self.delta < 0):
            raise ValueError(f"delta must be a nonnegative integer, got {self.delta}")
        for name in ("s", "b", "r"):
            val = getattr(self, name)
            if val is not None and not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive, got {val}")
        if self.q is not None and not callable(self.q):
            raise ValueError("q must be callable")

    @property
    def translation_invariant(self) -> bool:
        return self.kind in TRANSLATION_INVARIANT

    @property
    def indicator_valued(self) -> bool:
        return self.kind in ("knn-distance-indicator", "two-color-mismatch", "sig-degree-indicator",
                             "rsa-packing", "independence-ratio")


@dataclass(frozen=True)
class XiValue:
    values: np.ndarray
    total: float

    @classmethod
    def of(cls, values) -> "XiValue":
        v = np.asarray(values, dtype=float)
        return cls(v, math.fsum(v.tolist()))


def _need(config: MarkedConfiguration, n: int, what: str) -> None:
    if len(config) < n:
        raise ValueError(f"{what} needs at least {n} points, got {len(config)}")


def knn_edges(config: MarkedConfiguration, k: int) -> np.ndarray:
    """Undirected kNG edges (i < j), each once."""
    idx, _ = NeighborIndex(config.positions).knn_all(k)
    src = np.repeat(np.arange(len(config)), k)
    pairs = np.sort(np.stack([src, idx.ravel()], axis=1), axis=1)
    return np.unique(pairs, axis=0)


def knn_xi(config: MarkedConfiguration, k: int = 1) -> XiValue:
    """Half the total length of kNG edges at each point."""
    _need(config, k + 1, "knn_xi")
    edges = knn_edges(config, k)
    lengths = pair_distances(config.positions, edges[:, 0], edges[:, 1])
    n = len(config)
    vals = 0.5 * (np.bincount(edges[:, 0], lengths, n) + np.bincount(edges[:, 1], lengths, n))
    return XiValue.of(vals)


def knn_distance_indicator(config: MarkedConfiguration, s: float, k: int = 1) -> XiValue:
    """1 where the k-th nearest neighbor is closer than ``s`` (strict)."""
    _need(config, k + 1, "knn_distance_indicator")
    _, dist = NeighborIndex(config.positions).knn_all(k)
    return XiValue.of((dist[:, k - 1] < s).astype(float))


def colors_of(config: MarkedConfiguration, q: Callable) -> np.ndarray:
    """True for red (mark <= q(x)), False for green."""
    return config.marks <= np.asarray(q(config.positions), dtype=float)


def two_color_mismatch(config: MarkedConfiguration, q: Callable | None = None, colors=None) -> XiValue:
    """1 where a point's nearest neighbor has the other color.

    Colors come from ``q`` evaluated at the configuration's own positions,
    unless precomputed ``colors`` are passed.
    """
    _need(config, 2, "two_color_mismatch")
    if colors is None:
        if q is None:
            raise ValueError("two_color_mismatch needs q or colors")
        colors = colors_of(config, q)
    colors = np.asarray(colors, dtype=bool)
    nn, _ = NeighborIndex(config.positions).knn_all(1)
    return XiValue.of((colors != colors[nn[:, 0]]).astype(float))


def voronoi_half_length_xi(config: MarkedConfiguration) -> XiValue:
    if config.dim != 2:
        raise ValueError(f"Voronoi functional needs d = 2, got d = {config.dim}")
    _need(config, 2, "voronoi_half_length_xi")
    cells = voronoi_cells(config.positions)
    return XiValue.of([0.5 * c.finite_length for c in cells])


def sig_edges(config: MarkedConfiguration) -> np.ndarray:
    """Sphere-of-influence edges: |x - y| <= r_x + r_y, r = nearest-neighbor distance."""
    index = NeighborIndex(config.positions)
    _, nn = index.knn_all(1)
    r = nn[:, 0]
    cand = index.pairs_within_each(r + r.max())
    if len(cand) == 0:
        return cand
    d = pair_distances(config.positions, cand[:, 0], cand[:, 1])
    return cand[d <= r[cand[:, 0]] + r[cand[:, 1]]]


def sig_xi(config: MarkedConfiguration, mode: str = "half-degree", delta: int | None = None) -> XiValue:
    _need(config, 2, "sig_xi")
    edges = sig_edges(config)
    deg = np.bincount(edges.ravel(), minlength=len(config))
    if mode == "half-degree":
        return XiValue.of(0.5 * deg)
    if mode == "degree-indicator":
        if delta is None:
            raise ValueError("degree-indicator mode needs delta")
        return XiValue.of((deg == delta).astype(float))
    raise ValueError(f"unknown SIG mode {mode!r}")


def rsa_packing_xi(config: MarkedConfiguration, r: float) -> XiValue:
    """Acceptance indicators of sequential packing in increasing mark order.

    A ball is rejected when an accepted center lies at distance < 2r.
    """
    n = len(config)
    if n == 0:
        return XiValue.of([])
    order = np.argsort(config.marks, kind="stable")
    sm = config.marks[order]
    dup = np.flatnonzero(sm[1:] == sm[:-1])
    if len(dup):
        a, b = order[dup[0]], order[dup[0] + 1]
        raise ValueError(f"points {a} and {b} share the arrival mark {sm[dup[0]]}")
    pairs = NeighborIndex(config.positions).pairs_within(2 * r)
    if len(pairs):
        close = pair_distances(config.positions, pairs[:, 0], pairs[:, 1]) < 2 * r
        pairs = pairs[close]
    neighbors: list[list[int]] = [[] for _ in range(n)]
    for i, j in pairs.tolist():
        neighbors[i].append(j)
        neighbors[j].append(i)
    accepted = np.zeros(n, dtype=bool)
    for i in order.tolist():
        if not any(accepted[j] for j in neighbors[i]):
            accepted[i] = True
    return XiValue.of(accepted.astype(float))


def independence_ratio_xi(config: MarkedConfiguration, b: float, cap: int = DEFAULT_COMPONENT_CAP) -> XiValue:
    """Independence number of each point's component in G(X, b), over its size."""
    vals = np.zeros(len(config))
    if len(config) == 0:
        return XiValue.of(vals)
    graph = geometric_graph(config.positions, b)
    for comp in components(graph):
        vals[comp] = independence_number(graph, comp, cap) / len(comp)
    return XiValue.of(vals)


def evaluate(desc: FunctionalDescriptor, config: MarkedConfiguration, colors=None) -> XiValue:
    """All per-point values of ``desc`` on ``config``."""
    kind = desc.kind
    if kind == "knn-edge-length":
        return knn_xi(config, desc.k)
    if kind == "knn-distance-indicator":
        return knn_distance_indicator(config, desc.s, desc.k)
    if kind == "two-color-mismatch":
        return two_color_mismatch(config, desc.q, colors=colors)
    if kind == "voronoi-half-length":
        return voronoi_half_length_xi(config)
    if kind == "sig-half-degree":
        return sig_xi(config, "half-degree")
    if kind == "sig-degree-indicator":
        return sig_xi(config, "degree-indicator", desc.delta)
    if kind == "rsa-packing":
        return rsa_packing_xi(config, desc.r)
    if kind == "independence-ratio":
        return independence_ratio_xi(config, desc.b)
    raise AssertionError(kind)


def evaluate_at(desc: FunctionalDescriptor, config: MarkedConfiguration, index: int, colors=None) -> float:
    """Value of ``desc`` at one point.

    The independence ratio only looks at the component of that point, so
    unrelated large components elsewhere do not trip the size cap.
    """
    if not 0 <= index < len(config):
        raise ValueError(f"point index {index} not in configuration of size {len(config)}")
    if desc.kind == "independence-ratio":
        graph = geometric_graph(config.positions, desc.b)
        comp = next(c for c in components(graph) if index in c)
        return independence_number(graph, comp) / len(comp)
    return float(evaluate(desc, config, colors=colors).values[index])


def evaluate_scaled(desc: FunctionalDescriptor, lam: float, config: MarkedConfiguration) -> XiValue:
    """Rescaled score at every point of ``config`` in one pass.

    Translation-invariant kinds are evaluated on the globally dilated
    configuration lambda^(1/d) X. The two-color kind keeps the colors fixed
    at the original positions, and dilation does not change which point is
    nearest, so its rescaled values are the unscaled ones.
    """
    if desc.kind == "two-color-mismatch":
        return evaluate(desc, config)
    factor = lam ** (1.0 / config.dim)
    return evaluate(desc, rescale_about(np.zeros(config.dim), factor, config))


def evaluate_rescaled(desc: FunctionalDescriptor, lam: float, config: MarkedConfiguration, index: int) -> float:
    """Rescaled score at point ``index``: the score on the dilation of ``config`` about that point."""
    if not 0 <= index < len(config):
        raise ValueError(f"point index {index} not in configuration of size {len(config)}")
    center = config.positions[index]
    scaled = rescale_about(center, lam ** (1.0 / config.dim), config)
    colors = colors_of(config, desc.q) if desc.kind == "two-color-mismatch" else None
    return evaluate_at(desc, scaled, index, colors)


def unit_volume_radius(d: int) -> float:
    """Radius of the d-ball of volume one (the packing ball after rescaling)."""
    return (math.gamma(d / 2 + 1) / math.pi ** (d / 2)) ** (1.0 / d)
