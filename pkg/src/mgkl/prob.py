"""Exact and empirical probability primitives.

All arithmetic is done in nats; `LogBase` only converts at the boundary.
Distributions over a finite domain carry the feature vector of every domain
point so that sub-population predicates can be evaluated on them.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (
    AbsoluteContinuityViolation,
    DegenerateReference,
    EmptyConditioningSet,
    NonPositiveWeight,
)

PMF_TOL = 1e-12


class LogBase(enum.Enum):
    NATURAL = "natural"
    TWO = "two"

    @property
    def factor(self) -> float:
        """Multiplier taking a value in nats to this base."""
        return 1.0 if self is LogBase.NATURAL else 1.0 / math.log(2.0)

    def from_nats(self, value):
        return value * self.factor

    def to_nats(self, value):
        return value / self.factor

    @classmethod
    def parse(cls, value) -> "LogBase":
        if isinstance(value, LogBase):
            return value
        key = str(value).lower()
        if key in ("two", "2", "bits", "base2"):
            return cls.TWO
        if key in ("natural", "e", "nats", "ln"):
            return cls.NATURAL
        raise ValueError(f"unknown log base {value!r}")


def binary_points(domain_size: int) -> np.ndarray:
    """Big-endian bit encoding of 0..domain_size-1 (x0 is the most significant bit)."""
    nbits = max(1, int(math.ceil(math.log2(domain_size)))) if domain_size > 1 else 1
    idx = np.arange(domain_size)
    shifts = np.arange(nbits - 1, -1, -1)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(float)


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    pmf: np.ndarray
    points: np.ndarray | None = None

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float)
        if pmf.ndim != 1 or pmf.size == 0:
            raise ValueError("pmf must be a nonempty vector")
        if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
            raise ValueError("pmf entries must be finite and nonnegative")
        if abs(pmf.sum() - 1.0) > PMF_TOL:
            raise ValueError(f"pmf sums to {pmf.sum()!r}, not 1")
        points = binary_points(pmf.size) if self.points is None else np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if points.shape[0] != pmf.size:
            raise ValueError("points and pmf disagree on the domain size")
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "points", points)

    @property
    def domain_size(self) -> int:
        return self.pmf.size

    @classmethod
    def uniform(cls, domain_size: int, points=None) -> "DiscreteDistribution":
        return cls(np.full(domain_size, 1.0 / domain_size), points)

    def mass(self, c) -> float:
        return float(self.pmf[_mask(c, self.points)].sum())

    def to_json(self) -> dict:
        return {"domain_size": int(self.domain_size), "pmf": [float(v) for v in self.pmf]}

    @classmethod
    def from_json(cls, obj: dict, points=None) -> "DiscreteDistribution":
        pmf = np.asarray(obj["pmf"], dtype=float)
        if len(pmf) != obj["domain_size"]:
            raise ValueError("domain_size does not match pmf length")
        return cls(pmf, points)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path, points=None) -> "DiscreteDistribution":
        return cls.from_json(json.loads(Path(path).read_text()), points)


@dataclass(frozen=True, eq=False)
class SampleSet:
    features: np.ndarray
    side: str = "P"
    seed: int = 0

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("a sample set needs at least one row")
        if not np.all(np.isfinite(x)):
            raise ValueError("sample features must be finite")
        if self.side not in ("P", "R"):
            raise ValueError(f"side must be 'P' or 'R', got {self.side!r}")
        object.__setattr__(self, "features", x)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"f{j}" for j in range(self.dim)])
            for row in self.features:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, side="P", seed=0) -> "SampleSet":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != [f"f{j}" for j in range(len(header))]:
                raise ValueError(f"{path}: header must be f0,f1,...")
            rows = [[float(v) for v in row] for row in reader if row]
        return cls(np.array(rows, dtype=float).reshape(len(rows), len(header)), side, seed)


class WeightFunction:
    """Importance weights x -> w(x) of Q relative to P.

    Subclasses implement ``__call__`` on an (n, d) matrix. ``certificate``
    holds E_P[w] once `certify` has been run against some P-side data.
    """

    certificate: float | None = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def certify(self, p_side) -> float:
        x, m = support(p_side)
        self.certificate = float(np.dot(m, self(x)))
        return self.certificate


class ConstantWeight(WeightFunction):
    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, x):
        return np.full(np.asarray(x).shape[0], self.value)


class FunctionWeight(WeightFunction):
    """Wraps a vectorized callable."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn

    def __call__(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)


class TableWeight(WeightFunction):
    """Weights tabulated on the points of a finite domain."""

    def __init__(self, points: np.ndarray, values: np.ndarray):
        points = np.asarray(points, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self._index = {row.tobytes(): i for i, row in enumerate(points)}

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        try:
            idx = [self._index[row.tobytes()] for row in x]
        except KeyError as exc:
            raise KeyError("point outside the tabulated domain") from exc
        return self.values[idx]

    @classmethod
    def ratio(cls, r: DiscreteDistribution, p: DiscreteDistribution) -> "TableWeight":
        """The true ratio w* = R/P (zero where both vanish)."""
        _check_continuity(r.pmf, p.pmf)
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.where(p.pmf > 0, r.pmf / np.where(p.pmf > 0, p.pmf, 1.0), 0.0)
        return cls(p.points, values)


@dataclass(frozen=True)
class InfinityNormReport:
    value: float


def support(side) -> tuple[np.ndarray, np.ndarray]:
    """Points with positive mass and their probabilities.

    Accepts a DiscreteDistribution, a SampleSet (uniform 1/n masses) or an
    explicit ``(points, masses)`` pair.
    """
    if isinstance(side, DiscreteDistribution):
        keep = side.pmf > 0
        return side.points[keep], side.pmf[keep]
    if isinstance(side, SampleSet):
        return side.features, np.full(side.n, 1.0 / side.n)
    x, m = side
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    keep = m > 0
    return x[keep], m[keep]


def _mask(c, points) -> np.ndarray:
    if callable(c):
        return np.asarray(c(points), dtype=bool)
    mask = np.asarray(c, dtype=bool)
    if mask.shape != (points.shape[0],):
        raise ValueError("boolean mask does not match the domain")
    return mask


def _check_continuity(r_pmf, p_pmf):
    bad = (r_pmf > 0) & (p_pmf <= 0)
    if np.any(bad):
        raise AbsoluteContinuityViolation(
            f"R has mass where P has none at domain index {int(np.flatnonzero(bad)[0])}"
        )


def kl_nats(r_pmf: np.ndarray, p_pmf: np.ndarray) -> float:
    r_pmf = np.asarray(r_pmf, dtype=float)
    p_pmf = np.asarray(p_pmf, dtype=float)
    _check_continuity(r_pmf, p_pmf)
    pos = r_pmf > 0
    return float(np.sum(r_pmf[pos] * (np.log(r_pmf[pos]) - np.log(p_pmf[pos]))))


def kl_exact(r: DiscreteDistribution, p: DiscreteDistribution, base=LogBase.TWO) -> float:
    if r.domain_size != p.domain_size:
        raise ValueError("distributions live on different domains")
    return LogBase.parse(base).from_nats(kl_nats(r.pmf, p.pmf))


def bernoulli_kl(p: float, q: float, base=LogBase.TWO) -> float:
    if not 0.0 <= p <= 1.0 or not 0.0 <= q <= 1.0:
        raise ValueError("Bernoulli parameters must lie in [0, 1]")
    total = 0.0
    for a, b in ((p, q), (1.0 - p, 1.0 - q)):
        if a == 0.0:
            continue
        if b == 0.0:
            raise DegenerateReference(f"d({p}, {q}) is infinite")
        total += a * math.log(a / b)
    return LogBase.parse(base).from_nats(total)


def conditional(dist: DiscreteDistribution, c) -> DiscreteDistribution:
    mask = _mask(c, dist.points)
    mass = dist.pmf[mask].sum()
    if mass <= 0:
        raise EmptyConditioningSet("conditioning set has zero probability")
    pmf = np.where(mask, dist.pmf, 0.0) / mass
    # renormalize once more so the sum-to-one invariant survives rounding
    return DiscreteDistribution(pmf / pmf.sum(), dist.points)


def chain_rule_decompose(r: DiscreteDistribution, p: DiscreteDistribution, c, base=LogBase.TWO):
    """Split KL(R||P) into d(R(C),P(C)) + R(C) KL(R|C||P|C) + R(~C) KL(R|~C||P|~C)."""
    base = LogBase.parse(base)
    mask = _mask(c, r.points)
    rc = float(r.pmf[mask].sum())
    pc = float(p.pmf[mask].sum())
    if not 0.0 < rc < 1.0:
        raise EmptyConditioningSet("chain rule needs 0 < R(C) < 1")
    marginal = bernoulli_kl(rc, pc, base)
    cond_c = rc * kl_exact(conditional(r, mask), conditional(p, mask), base)
    cond_cbar = (1.0 - rc) * kl_exact(conditional(r, ~mask), conditional(p, ~mask), base)
    return marginal, cond_c, cond_cbar


def safe_log(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise NonPositiveWeight("importance weight <= 0 (or non-finite) on the support")
    return np.log(w)


def log_weight_expectation(w: WeightFunction, r_side, base=LogBase.TWO) -> float:
    """E_R[log w], a lower bound on KL(R||P) whenever E_P[w] = 1."""
    x, m = support(r_side)
    return LogBase.parse(base).from_nats(float(np.dot(m, safe_log(w(x)))))


def nwj_lower_bound(w: WeightFunction, r_side, p_side, base=LogBase.TWO) -> float:
    """E_R[log w] - E_P[w] + 1, valid for any positive (unnormalized) w."""
    xr, mr = support(r_side)
    xp, mp = support(p_side)
    wp = np.asarray(w(xp), dtype=float)
    if np.any(wp <= 0):
        raise NonPositiveWeight("NWJ bound needs w > 0 on the P support")
    value = float(np.dot(mr, safe_log(w(xr)))) - float(np.dot(mp, wp)) + 1.0
    return LogBase.parse(base).from_nats(value)


def infinity_norm(w: WeightFunction, domain) -> InfinityNormReport:
    """max over points of max(w, 1/w).

    `domain` may be a distribution (its support), a sample set, or a raw
    point matrix.
    """
    if isinstance(domain, (DiscreteDistribution, SampleSet)) or isinstance(domain, tuple):
        x, _ = support(domain)
    else:
        x = np.asarray(domain, dtype=float)
    values = np.asarray(w(x), dtype=float)
    if np.any(values <= 0):
        raise NonPositiveWeight("infinity norm is unbounded for w <= 0")
    return InfinityNormReport(float(max(values.max(), (1.0 / values).max())))
