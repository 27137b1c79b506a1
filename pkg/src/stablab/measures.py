"""Random weighted point measures and their pairings with test functions."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .functionals import FunctionalDescriptor, evaluate_scaled
from .point_process import Domain, MarkedConfiguration

TEST_FUNCTION_KINDS = ("constant", "box", "linear")


@dataclass(frozen=True)
class WeightedMeasure:
    positions: np.ndarray  # (atoms, d)
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def total_variation(self) -> float:
        return math.fsum(np.abs(self.weights).tolist())

    def to_csv(self, path) -> None:
        d = self.positions.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x_{j + 1}" for j in range(d)] + ["weight"])
            for p, wt in zip(self.positions.tolist(), self.weights.tolist()):
                w.writerow([repr(v) for v in p] + [repr(wt)])


@dataclass(frozen=True)
class TestFunction:
    """Bounded test function: a constant, a box indicator, or offset + coef . x."""

    __test__ = False  # not a pytest class

    kind: str = "constant"
    value: float = 1.0
    lower: tuple[float, ...] = ()
    upper: tuple[float, ...] = ()
    coef: tuple[float, ...] = ()
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in TEST_FUNCTION_KINDS:
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if self.kind == "box" and (len(self.lower) != len(self.upper) or not self.lower):
            raise ValueError("box test function needs lower and upper of equal length")
        if self.kind == "linear" and not self.coef:
            raise ValueError("linear test function needs coef")

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "constant":
            return np.full(len(x), float(self.value))
        if self.kind == "box":
            lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
            return np.all((x >= lo) & (x <= hi), axis=1).astype(float)
        return self.offset + x[:, : len(self.coef)] @ np.asarray(self.coef, dtype=float)

    def sup_bound(self, domain: Domain) -> float:
        """An upper bound for |f| on the domain's bounding box."""
        if self.kind == "constant":
            return abs(float(self.value))
        if self.kind == "box":
            return 1.0
        c = np.asarray(self.coef, dtype=float)
        lo, hi = domain.lower[: len(c)], domain.upper[: len(c)]
        return abs(self.offset) + float(np.sum(np.maximum(np.abs(c * lo), np.abs(c * hi))))


def build_measure(desc: FunctionalDescriptor, lam: float, config: MarkedConfiguration,
                  domain: Domain | None = None) -> WeightedMeasure:
    """Atoms at the configuration points lying in the domain, weighted by their rescaled scores."""
    d = config.dim
    if len(config) == 0:
        return WeightedMeasure(np.empty((0, d)), np.empty(0))
    weights = evaluate_scaled(desc, lam, config).values
    keep = np.ones(len(config), dtype=bool) if domain is None else domain.contains(config.positions)
    return WeightedMeasure(config.positions[keep], weights[keep])


def integrate(measure: WeightedMeasure, f: TestFunction) -> float:
    if len(measure) == 0:
        return 0.0
    return math.fsum((f(measure.positions) * measure.weights).tolist())
