"""Dependency graphs over the cube partition and the explicit rate formulas."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .point_process import CubePartition

# Cubes are joined when their set distance is at most this many sides.
THRESHOLD_SIDES = 2


@dataclass(frozen=True)
class DependencyGraph:
    partition: CubePartition
    adjacency: list[list[int]]
    max_degree: int
    threshold: float

    @property
    def D(self) -> int:
        """Degree term for the Chen-Shao bound: max degree plus the vertex itself."""
        return self.max_degree + 1


def neighbor_offsets(d: int) -> np.ndarray:
    """Nonzero index offsets whose cubes lie within set distance 2 sides.

    Two unit-index cubes with offset ``o`` have set distance
    ``side * sqrt(sum(max(0, |o_j| - 1)**2))``; comparing the integer sum
    against 4 keeps the rule exact.
    """
    span = range(-(THRESHOLD_SIDES + 1), THRESHOLD_SIDES + 2)
    out = []
    for off in itertools.product(span, repeat=d):
        gaps = sum(max(0, abs(o) - 1) ** 2 for o in off)
        if any(off) and gaps <= THRESHOLD_SIDES**2:
            out.append(off)
    return np.array(out, dtype=np.int64).reshape(-1, d)


def build_dependency_graph(partition: CubePartition) -> DependencyGraph:
    idx = partition.indices.astype(np.int64)
    V, d = idx.shape
    if V == 0:
        return DependencyGraph(partition, [], 0, THRESHOLD_SIDES * partition.side)
    pad = THRESHOLD_SIDES + 1
    base = idx.min(axis=0) - pad
    dims = idx.max(axis=0) - base + pad + 1
    keys = np.ravel_multi_index(tuple((idx - base).T), tuple(dims))
    order = np.argsort(keys)
    sorted_keys = keys[order]
    rows, cols = [], []
    for off in neighbor_offsets(d):
        nk = np.ravel_multi_index(tuple((idx + off - base).T), tuple(dims))
        pos = np.searchsorted(sorted_keys, nk)
        pos = np.minimum(pos, V - 1)
        hit = sorted_keys[pos] == nk
        rows.append(np.flatnonzero(hit))
        cols.append(order[pos[hit]])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    srt = np.lexsort((cols, rows))
    rows, cols = rows[srt], cols[srt]
    splits = np.searchsorted(rows, np.arange(1, V))
    adjacency = [c.tolist() for c in np.split(cols, splits)]
    max_degree = max(len(a) for a in adjacency)
    return DependencyGraph(partition, adjacency, max_degree, THRESHOLD_SIDES * partition.side)


@dataclass(frozen=True)
class ChenShaoInput:
    q: float
    D: int
    V: int
    theta: float

    def __post_init__(self):
        if not 2 < self.q <= 3:
            raise ValueError(f"q must lie in (2, 3], got {self.q}")
        if self.D < 1 or self.V < 1:
            raise ValueError(f"D and V must be >= 1, got D={self.D}, V={self.V}")
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")


def chen_shao_bound(inp: ChenShaoInput) -> float:
    """75 D^(5(q-1)) |V| theta^q."""
    return 75.0 * inp.D ** (5 * (inp.q - 1)) * inp.V * inp.theta**inp.q


def rho_exponential(lam: float, alpha: float) -> float:
    if lam < 2 or not alpha > 0:
        raise ValueError(f"need lambda >= 2 and alpha > 0, got {lam}, {alpha}")
    return alpha * math.log(lam)


def rho_polynomial(lam: float, p: float, gamma: float, d: int, C: float = 1.0) -> tuple[float, float, float]:
    """Exponent a = 25p/(p gamma - 6d), rho = C lam^a and the check a(gamma/6 - d/p).

    The check value is 25/6 for all valid inputs.
    """
    if not p * gamma > 6 * d:
        raise ValueError(f"need p*gamma > 6d, got p={p}, gamma={gamma}, d={d}")
    a = 25 * p / (p * gamma - 6 * d)
    return a, C * lam**a, a * (gamma / 6 - d / p)


@dataclass(frozen=True)
class RateParameters:
    d: int
    p: float
    q: float
    gamma: float
    lam: float
    variance: float


def theorem1_rhs(params: RateParameters, C: float = 1.0) -> float:
    """C (log lam)^(dq) lam Var^(-q/2)."""
    if not params.variance > 0:
        raise ValueError("variance must be positive")
    if params.lam < 2:
        raise ValueError("lambda must be >= 2")
    lam, q = params.lam, params.q
    return C * math.log(lam) ** (params.d * q) * lam * params.variance ** (-q / 2)


def _rate_ratio(p: float, gamma: float, d: float) -> float:
    return (150 * p * d + 6 * d - p * gamma) / (2 * (p * gamma - 6 * d))


def theorem2_exponent(p: float, gamma: float, d: int) -> float:
    """Exponent of lam in the polynomial-stabilization rate; negative when valid."""
    floor = d * (150 + 6 / p)
    if not gamma > floor:
        raise ValueError(f"gamma must exceed d(150 + 6/p) = {floor}, got {gamma}")
    return _rate_ratio(p, gamma, d)
