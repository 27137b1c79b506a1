"""Domains, densities, marked Poisson sampling and the cube partition.

Every configuration carries one mark per point in [0, 1]. Unmarked
functionals simply ignore the marks.

Seeds: ``sample_poisson`` feeds its seed (an int or a
``numpy.random.SeedSequence``) straight to ``numpy.random.default_rng``,
so the stream is PCG64 keyed by ``SeedSequence(seed)``. The draw order is
count, then positions, then marks.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# Per-axis overlaps below this fraction of the cube side are float slivers.
_SLIVER = 1e-12


@dataclass(frozen=True)
class Domain:
    """Axis-aligned bounding box plus an optional support predicate."""

    lower: np.ndarray
    upper: np.ndarray
    support: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if not np.all(hi > lo):
            raise ValueError(f"bounding box has non-positive extent: {lo} .. {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, x) -> np.ndarray:
        """Membership of each row of ``x`` in the (closed) support."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = np.all((x >= self.lower) & (x <= self.upper), axis=1)
        if self.support is not None and inside.any():
            inside[inside] = self.support(x[inside])
        return inside


def unit_cube(d: int = 2) -> Domain:
    return Domain(np.zeros(d), np.ones(d))


class Density:
    """A probability density on a compact domain.

    Two kinds are supported, both with exact cell integrals:

    * ``uniform``: constant on the domain's bounding box.
    * ``grid``: piecewise constant on a regular grid over the bounding box,
      ``weights[i0, i1, ...]`` being the probability mass of each cell.
    """

    def __init__(self, domain: Domain, weights: np.ndarray | None = None):
        self.domain = domain
        self.source = None  # file the grid was read from, if any
        if weights is None:
            self.kind = "uniform"
            self.weights = None
        else:
            w = np.asarray(weights, dtype=float)
            if w.ndim != domain.dim:
                raise ValueError(f"weight grid has {w.ndim} axes, domain has {domain.dim}")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("grid weights must be finite and nonnegative")
            total = w.sum()
            if total <= 0:
                raise ValueError("grid weights sum to zero")
            self.kind = "grid"
            self.weights = w / total
            self.weights.setflags(write=False)

    @classmethod
    def uniform(cls, lower: Sequence[float] = (0.0, 0.0), upper: Sequence[float] = (1.0, 1.0)) -> "Density":
        return cls(Domain(np.asarray(lower, float), np.asarray(upper, float)))

    @classmethod
    def grid(cls, lower, upper, weights) -> "Density":
        w = np.asarray(weights, dtype=float)
        dens = cls(Domain(np.asarray(lower, float), np.asarray(upper, float)), w)
        positive = dens.weights > 0

        def support(x):
            idx = dens._cell_index(x)
            ok = np.all((idx >= 0) & (idx < np.array(positive.shape)), axis=1)
            out = np.zeros(len(x), dtype=bool)
            out[ok] = positive[tuple(idx[ok].T)]
            return out

        dens.domain = Domain(dens.domain.lower, dens.domain.upper, support)
        return dens

    @property
    def dim(self) -> int:
        return self.domain.dim

    def __eq__(self, other) -> bool:
        if not isinstance(other, Density) or self.kind != other.kind:
            return NotImplemented if not isinstance(other, Density) else False
        same_box = (np.array_equal(self.domain.lower, other.domain.lower)
                    and np.array_equal(self.domain.upper, other.domain.upper))
        if self.kind == "uniform":
            return same_box
        return same_box and np.array_equal(self.weights, other.weights)

    __hash__ = None

    def __repr__(self) -> str:
        return f"Density({self.kind}, lower={self.domain.lower.tolist()}, upper={self.domain.upper.tolist()})"

    @property
    def _cell_widths(self) -> np.ndarray:
        return (self.domain.upper - self.domain.lower) / np.array(self.weights.shape)

    @property
    def _edges(self) -> list[np.ndarray]:
        lo, hi = self.domain.lower, self.domain.upper
        return [np.linspace(lo[j], hi[j], n + 1) for j, n in enumerate(self.weights.shape)]

    def _cell_index(self, x: np.ndarray) -> np.ndarray:
        shape = np.array(self.weights.shape)
        idx = np.floor((x - self.domain.lower) / self._cell_widths).astype(int)
        # the closed upper face belongs to the last cell
        on_top = x >= self.domain.upper
        idx[on_top] = np.broadcast_to(shape - 1, idx.shape)[on_top]
        return idx

    @property
    def sup_norm(self) -> float:
        vol = float(np.prod(self.domain.upper - self.domain.lower))
        if self.kind == "uniform":
            return 1.0 / vol
        return float(self.weights.max() / np.prod(self._cell_widths))

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = np.all((x >= self.domain.lower) & (x <= self.domain.upper), axis=1)
        out = np.zeros(len(x))
        if self.kind == "uniform":
            out[inside] = self.sup_norm
            return out
        cell_vol = float(np.prod(self._cell_widths))
        idx = self._cell_index(x[inside])
        out[inside] = self.weights[tuple(idx.T)] / cell_vol
        return out

    def total_mass(self) -> float:
        if self.kind == "uniform":
            return 1.0
        return math.fsum(self.weights.ravel())

    def box_masses(self, axis_intervals: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        """Exact mass of every box in a tensor grid of boxes.

        ``axis_intervals[j] = (a_j, b_j)`` lists the box intervals along axis
        ``j``; the result has shape ``(len(a_0), len(a_1), ...)``.
        """
        lo, hi = self.domain.lower, self.domain.upper
        if self.kind == "uniform":
            out = np.ones(())
            for j, (a, b) in enumerate(axis_intervals):
                frac = _overlap(a, b, np.array([lo[j]]), np.array([hi[j]]))[:, 0] / (hi[j] - lo[j])
                out = np.multiply.outer(out, frac)
            return out
        out = self.weights
        for j, e in enumerate(self._edges):
            a, b = axis_intervals[j]
            # fraction of each grid cell (along axis j) covered by each box interval
            frac = _overlap(a, b, e[:-1], e[1:]) / (e[1:] - e[:-1])
            out = np.tensordot(out, frac, axes=([0], [1]))
        return out

    def sample_positions(self, n: int, rng: np.random.Generator) -> np.ndarray:
        d = self.dim
        lo, hi = self.domain.lower, self.domain.upper
        if self.kind == "uniform":
            return lo + (hi - lo) * rng.random((n, d))
        flat = self.weights.ravel()
        cells = rng.choice(flat.size, size=n, p=flat)
        idx = np.stack(np.unravel_index(cells, self.weights.shape), axis=1)
        width = self._cell_widths
        return lo + (idx + rng.random((n, d))) * width


def _overlap(a, b, c, e) -> np.ndarray:
    """Lengths of [a_i, b_i) intersected with [c_j, e_j), shape (len(a), len(c))."""
    a, b, c, e = (np.asarray(v, dtype=float) for v in (a, b, c, e))
    return np.maximum(0.0, np.minimum(b[:, None], e[None, :]) - np.maximum(a[:, None], c[None, :]))


def load_density_csv(path) -> Density:
    """Read a grid density.

    Layout::

        d,2
        cells,4,2
        lower,0,0
        upper,1,1
        <row-major cell weights, any number per line>
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    header = {}
    for lineno, row in enumerate(rows[:4], start=1):
        header[row[0].strip()] = row[1:]
        if row[0].strip() not in ("d", "cells", "lower", "upper"):
            raise ValueError(f"{path}: line {lineno}: unexpected header field {row[0]!r}")
    d = int(header["d"][0])
    cells = tuple(int(v) for v in header["cells"])
    lower = [float(v) for v in header["lower"]]
    upper = [float(v) for v in header["upper"]]
    if not (len(cells) == len(lower) == len(upper) == d):
        raise ValueError(f"{path}: header lengths disagree with d={d}")
    weights = [float(v) for row in rows[4:] for v in row if v.strip()]
    if len(weights) != int(np.prod(cells)):
        raise ValueError(f"{path}: expected {int(np.prod(cells))} weights, got {len(weights)}")
    return Density.grid(lower, upper, np.array(weights).reshape(cells))


def save_density_csv(density: Density, path) -> None:
    if density.kind != "grid":
        raise ValueError("only grid densities have a CSV form")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d", density.dim])
        w.writerow(["cells", *density.weights.shape])
        w.writerow(["lower", *map(repr, density.domain.lower.tolist())])
        w.writerow(["upper", *map(repr, density.domain.upper.tolist())])
        flat = density.weights.reshape(-1, density.weights.shape[-1])
        for row in flat:
            w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class MarkedConfiguration:
    """Points in R^d (rows of ``positions``) with marks in [0, 1]."""

    positions: np.ndarray
    marks: np.ndarray = field(default=None)
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos.reshape(-1, 1)
        pos = np.array(pos, dtype=float, order="C")
        marks = np.zeros(len(pos)) if self.marks is None else np.array(self.marks, dtype=float).ravel()
        if len(marks) != len(pos):
            raise ValueError(f"{len(marks)} marks for {len(pos)} points")
        if self.check:
            if np.any((marks < 0) | (marks > 1)):
                raise ValueError("marks must lie in [0, 1]")
            if len(pos) > 1 and len(np.unique(pos, axis=0)) != len(pos):
                raise ValueError("positions must be pairwise distinct")
        pos.setflags(write=False)
        marks.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "marks", marks)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @classmethod
    def empty(cls, d: int) -> "MarkedConfiguration":
        return cls(np.empty((0, d)), np.empty(0))

    def subset(self, idx) -> "MarkedConfiguration":
        return MarkedConfiguration(self.positions[idx], self.marks[idx], check=False)

    def union(self, other: "MarkedConfiguration") -> "MarkedConfiguration":
        return MarkedConfiguration(np.vstack([self.positions, other.positions]),
                                   np.concatenate([self.marks, other.marks]))

    def insert(self, x, mark: float = 0.0) -> tuple["MarkedConfiguration", int]:
        """Append one point; returns the new configuration and its index."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        new = MarkedConfiguration(np.vstack([self.positions, x]), np.append(self.marks, mark))
        return new, len(self)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x_{j + 1}" for j in range(self.dim)] + ["mark"])
            for p, u in zip(self.positions.tolist(), self.marks.tolist()):
                w.writerow([repr(v) for v in p] + [repr(u)])

    @classmethod
    def from_csv(cls, path) -> "MarkedConfiguration":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "mark":
            raise ValueError(f"{path}: last column must be 'mark'")
        d = len(header) - 1
        data = np.array([[float(v) for v in r] for r in body]).reshape(-1, d + 1)
        return cls(data[:, :d], data[:, d])


def sample_poisson(lam: float, density: Density, seed) -> MarkedConfiguration:
    """Marked Poisson process with intensity ``lam * density`` and uniform marks."""
    if not lam >= 0:
        raise ValueError(f"intensity must be nonnegative, got {lam}")
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(lam))
    pos = density.sample_positions(n, rng)
    marks = rng.random(n)
    return MarkedConfiguration(pos, marks, check=False)


def rescale_about(center, factor: float, config: MarkedConfiguration) -> MarkedConfiguration:
    """Dilate ``config`` about ``center``: y -> center + factor * (y - center)."""
    if not (math.isfinite(factor) and factor > 0):
        raise ValueError(f"dilation factor must be finite and positive, got {factor}")
    c = np.asarray(center, dtype=float)
    if factor == 1.0:
        return config
    return MarkedConfiguration(c + factor * (config.positions - c), config.marks, check=False)


@dataclass(frozen=True)
class CubePartition:
    """Half-open cubes prod [j_i s, (j_i + 1) s) carrying positive mass."""

    side: float
    lam: float
    rho: float
    indices: np.ndarray  # (V, d) integer grid indices
    nu: np.ndarray  # (V,) expected point counts

    @property
    def V(self) -> int:
        return len(self.indices)

    @property
    def dim(self) -> int:
        return self.indices.shape[1]

    def lookup(self) -> dict[tuple[int, ...], int]:
        return {tuple(ix): i for i, ix in enumerate(self.indices.tolist())}


def build_cube_partition(lam: float, rho: float, density: Density) -> CubePartition:
    if lam < 1:
        raise ValueError(f"lambda must be >= 1, got {lam}")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    d = density.dim
    s = lam ** (-1.0 / d) * rho
    lo, hi = density.domain.lower, density.domain.upper
    ranges, intervals = [], []
    for j in range(d):
        j0 = math.floor(lo[j] / s)
        j1 = math.ceil(hi[j] / s)
        if j1 - j0 > 10**7:
            raise ValueError("support too large for the requested cube side")
        js = np.arange(j0, j1)
        a, b = js * s, (js + 1) * s
        # drop float slivers before integrating
        ov = _overlap(a, b, [lo[j]], [hi[j]])[:, 0]
        keep = ov > _SLIVER * s
        ranges.append(js[keep])
        intervals.append((a[keep], b[keep]))
    mass = density.box_masses(intervals)
    grid_idx = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, d)
    nu = lam * mass.reshape(-1)
    pos = nu > 0
    return CubePartition(side=s, lam=lam, rho=rho, indices=grid_idx[pos], nu=nu[pos])


def assign_points_to_cubes(config: MarkedConfiguration, partition: CubePartition) -> dict[tuple[int, ...], list[int]]:
    """Map each occupied cube index to the indices of the points it holds."""
    out: dict[tuple[int, ...], list[int]] = {}
    if len(config) == 0:
        return out
    known = partition.lookup()
    idx = np.floor(config.positions / partition.side).astype(np.int64)
    for i, key in enumerate(map(tuple, idx.tolist())):
        if key not in known:
            raise ValueError(f"point {i} at {config.positions[i].tolist()} lies in no cube of the partition")
        out.setdefault(key, []).append(i)
    return out


def stream(master: int, *keys: int) -> np.random.SeedSequence:
    """Stream for one work item: ``SeedSequence(master, spawn_key=keys)``."""
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))
