"""Paired P/R data in one shape for exact and sample mode.

Exact mode keeps the full domain plus both pmfs; sample mode gives every
sample mass 1/n. Downstream code only ever forms mass-weighted sums, so the
same estimator code runs on both.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptySide
from .prob import DiscreteDistribution, SampleSet, support


@dataclass(frozen=True, eq=False)
class PairData:
    p_x: np.ndarray
    p_m: np.ndarray
    r_x: np.ndarray
    r_m: np.ndarray
    p_dist: DiscreteDistribution | None = None
    r_dist: DiscreteDistribution | None = None

    def __post_init__(self):
        if self.p_x.shape[0] == 0 or self.r_x.shape[0] == 0:
            raise EmptySide("both sides need at least one point of positive mass")
        if self.p_x.shape[1] != self.r_x.shape[1]:
            raise DimensionMismatch(f"P has dimension {self.p_x.shape[1]}, R has {self.r_x.shape[1]}")

    @property
    def exact(self) -> bool:
        return self.p_dist is not None

    @property
    def dim(self) -> int:
        return self.p_x.shape[1]

    @property
    def n(self) -> int:
        """Smaller side's point count; the sample size in sample mode."""
        return int(min(self.p_x.shape[0], self.r_x.shape[0]))

    @classmethod
    def from_exact(cls, p: DiscreteDistribution, r: DiscreteDistribution) -> "PairData":
        if p.domain_size != r.domain_size or not np.array_equal(p.points, r.points):
            raise DimensionMismatch("P and R must share one enumerated domain")
        p_x, p_m = support(p)
        r_x, r_m = support(r)
        return cls(p_x, p_m, r_x, r_m, p, r)

    @classmethod
    def from_samples(cls, p: SampleSet, r: SampleSet) -> "PairData":
        p_x, p_m = support(p)
        r_x, r_m = support(r)
        return cls(p_x, p_m, r_x, r_m)

    @classmethod
    def coerce(cls, p_side, r_side=None) -> "PairData":
        if isinstance(p_side, PairData):
            return p_side
        if isinstance(p_side, DiscreteDistribution):
            return cls.from_exact(p_side, r_side)
        if isinstance(p_side, SampleSet):
            return cls.from_samples(p_side, r_side)
        p_x, p_m = support(p_side)
        r_x, r_m = support(r_side)
        return cls(p_x, p_m / p_m.sum(), r_x, r_m / r_m.sum())

    def subset(self, p_idx, r_idx) -> "PairData":
        """Sample-mode restriction to the given rows, masses renormalized."""
        p_m = self.p_m[p_idx]
        r_m = self.r_m[r_idx]
        return PairData(self.p_x[p_idx], p_m / p_m.sum(), self.r_x[r_idx], r_m / r_m.sum())

    def split(self, fraction: float, seed: int) -> tuple["PairData", "PairData"]:
        """Seeded (train, holdout) split of each side."""
        rng = np.random.default_rng(seed)
        p_perm = rng.permutation(self.p_x.shape[0])
        r_perm = rng.permutation(self.r_x.shape[0])
        kp = int(round(len(p_perm) * (1 - fraction)))
        kr = int(round(len(r_perm) * (1 - fraction)))
        if min(kp, kr) == 0 or kp == len(p_perm) or kr == len(r_perm):
            raise EmptySide("holdout fraction leaves an empty split")
        return (self.subset(np.sort(p_perm[:kp]), np.sort(r_perm[:kr])),
                self.subset(np.sort(p_perm[kp:]), np.sort(r_perm[kr:])))
