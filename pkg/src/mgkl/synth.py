"""Seeded generators for benchmark and counterexample instances."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingLabel
from .prob import DiscreteDistribution, LogBase, SampleSet, bernoulli_kl, binary_points
from .subpop import Box, LiteralSet, SubpopulationFamily, subcube_family

BOX_MARGIN = 6.0


@dataclass
class MixtureSpec:
    k: int = 5
    d: int = 2
    n: int = 30000
    seed: int = 0
    mean_variance_scale: float | None = None  # None: 10000 * k
    shift: float | tuple = 2.5

    def __post_init__(self):
        if self.k < 1 or self.d < 1 or self.n < 1:
            raise ValueError("k, d and n must be positive")

    @property
    def shift_vector(self) -> np.ndarray:
        s = np.asarray(self.shift, dtype=float)
        return np.full(self.d, float(s)) if s.ndim == 0 else s

    @property
    def variance(self) -> float:
        return 10000.0 * self.k if self.mean_variance_scale is None else self.mean_variance_scale


def mixture_means(spec: MixtureSpec) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(3)[0])
    return rng.normal(0.0, math.sqrt(spec.variance), size=(spec.k, spec.d))


def gaussian_mixture_pair(spec: MixtureSpec):
    """P: equal-weight identity-covariance mixture; R: the same with every mean shifted.

    Returns (p_side, r_side, pair_boxes); box i spans each pair with a
    6-sigma margin.
    """
    shift = spec.shift_vector
    if shift.shape != (spec.d,):
        raise ValueError("shift must have one entry per dimension")
    means = mixture_means(spec)
    _, seq_p, seq_r = np.random.SeedSequence(spec.seed).spawn(3)
    sides = []
    for side, seq, offset in (("P", seq_p, np.zeros(spec.d)), ("R", seq_r, shift)):
        rng = np.random.default_rng(seq)
        comp = rng.integers(0, spec.k, size=spec.n)
        x = means[comp] + offset + rng.standard_normal((spec.n, spec.d))
        sides.append(SampleSet(x, side, spec.seed))
    lo = np.minimum(means, means + shift) - BOX_MARGIN
    hi = np.maximum(means, means + shift) + BOX_MARGIN
    boxes = [Box(tuple(float(v) for v in lo[i]), tuple(float(v) for v in hi[i]), f"pair{i}")
             for i in range(spec.k)]
    return sides[0], sides[1], SubpopulationFamily(boxes)


def shifted_gaussian_kl(shift_vector, base=LogBase.TWO) -> float:
    """KL between identity-covariance Gaussians whose means differ by `shift_vector`."""
    s = np.asarray(shift_vector, dtype=float)
    return LogBase.parse(base).from_nats(0.5 * float(s @ s))


def min_pairwise_component_kl(means, base=LogBase.TWO) -> float:
    means = np.asarray(means, dtype=float)
    diff = means[:, None, :] - means[None, :, :]
    sq = (diff ** 2).sum(axis=-1)
    sq[np.diag_indices(len(means))] = np.inf
    return LogBase.parse(base).from_nats(0.5 * float(sq.min()))


# -- parity bias -------------------------------------------------------------

@dataclass
class LabeledCorpus:
    """Vectors with a binary label (1 = even class) and optional class ids."""

    features: np.ndarray
    labels: np.ndarray
    classes: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if not set(np.unique(self.labels)) <= {0, 1}:
            raise ValueError("labels must be 0 or 1")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            head = ["label"] + (["class"] if self.classes is not None else [])
            writer.writerow(head + [f"f{j}" for j in range(self.features.shape[1])])
            for i, row in enumerate(self.features):
                lead = [int(self.labels[i])] + ([int(self.classes[i])] if self.classes is not None else [])
                writer.writerow(lead + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "LabeledCorpus":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [row for row in reader if row]
        if not header or header[0] != "label":
            raise ValueError(f"{path}: first column must be 'label'")
        has_class = len(header) > 1 and header[1] == "class"
        start = 2 if has_class else 1
        data = np.array(rows, dtype=float).reshape(len(rows), len(header))
        return cls(data[:, start:], data[:, 0].astype(int),
                   data[:, 1].astype(int) if has_class else None)


@dataclass
class BiasSpec:
    delta: float
    corpus: LabeledCorpus
    n: int = 30000
    seed: int = 0

    def __post_init__(self):
        if not 0.5 < self.delta < 1:
            raise ValueError("delta must lie in (0.5, 1)")


def synthetic_parity_corpus(n_per_class: int = 3000, d: int = 2, n_classes: int = 10,
                            spacing: float = 10.0, seed: int = 0) -> LabeledCorpus:
    """Disjoint-support stand-in for a digit corpus.

    Class j is a unit Gaussian centred at spacing*j on f0; even classes get
    label 1.
    """
    rng = np.random.default_rng(seed)
    classes = np.repeat(np.arange(n_classes), n_per_class)
    x = rng.standard_normal((classes.size, d))
    x[:, 0] += spacing * classes
    return LabeledCorpus(x, (classes % 2 == 0).astype(int), classes)


def parity_bias_pair(spec: BiasSpec):
    """P draws even-labeled vectors w.p. delta, R draws odd-labeled ones w.p. delta.

    The family holds a bounding box per consecutive class pair when class ids
    are present, else one bounding box per label.
    """
    corpus = spec.corpus
    even = np.flatnonzero(corpus.labels == 1)
    odd = np.flatnonzero(corpus.labels == 0)
    if even.size == 0 or odd.size == 0:
        raise MissingLabel("corpus needs both labels")
    _, seq_p, seq_r = np.random.SeedSequence(spec.seed).spawn(3)
    sides = []
    for side, seq, p_even in (("P", seq_p, spec.delta), ("R", seq_r, 1 - spec.delta)):
        rng = np.random.default_rng(seq)
        pick_even = rng.random(spec.n) < p_even
        idx = np.where(pick_even, rng.choice(even, spec.n), rng.choice(odd, spec.n))
        sides.append(SampleSet(corpus.features[idx], side, spec.seed))
    return sides[0], sides[1], SubpopulationFamily(_corpus_boxes(corpus))


def _corpus_boxes(corpus: LabeledCorpus):
    x = corpus.features
    groups = []
    if corpus.classes is not None:
        ids = np.unique(corpus.classes)
        for a, b in zip(ids[:-1], ids[1:]):
            groups.append((f"class{a}+{b}", np.isin(corpus.classes, [a, b])))
    else:
        groups = [("even", corpus.labels == 1), ("odd", corpus.labels == 0)]
    return [Box(tuple(float(v) for v in x[m].min(axis=0)), tuple(float(v) for v in x[m].max(axis=0)), name)
            for name, m in groups]


def parity_marginals(delta: float):
    """Exact (P, R) over the two classes (even, odd)."""
    return (DiscreteDistribution(np.array([delta, 1 - delta])),
            DiscreteDistribution(np.array([1 - delta, delta])))


def parity_target(delta: float, base=LogBase.TWO) -> float:
    return bernoulli_kl(delta, 1 - delta, base)


# -- exact instances ---------------------------------------------------------

@dataclass
class ExactInstance:
    p: DiscreteDistribution
    r: DiscreteDistribution
    family: SubpopulationFamily
    expected: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.p, self.r, self.family))


def gap1_instance() -> ExactInstance:
    """Uniform P on {0,1}^2 and R = (1/4, 1/4, 0, 1/2) on (00, 01, 10, 11)."""
    p = DiscreteDistribution.uniform(4)
    r = DiscreteDistribution(np.array([0.25, 0.25, 0.0, 0.5]))
    # C = {x0 = 0}: R|C = B(1/2) on x1, Q0|C = B(3/4), P|C = B(1/2)
    d_qp = bernoulli_kl(0.75, 0.5)
    d_rq = bernoulli_kl(0.5, 0.75)
    expected = {"klRP_C": 0.0, "klRQ_C": d_rq, "klQP_C": d_qp, "r_mass_C": 0.5,
                "estR_C": -d_rq, "q0_cells": [0.125, 0.375, 0.125, 0.375]}
    return ExactInstance(p, r, subcube_family(2), expected)


def _dirichlet_pmf(rng, n):
    cuts = np.sort(rng.random(n - 1))
    pmf = np.diff(np.concatenate([[0.0], cuts, [1.0]]))
    pmf = np.maximum(pmf, 1e-6)
    return pmf / pmf.sum()


def random_exact_instance(domain_size: int, feature_count: int, seed: int = 0) -> ExactInstance:
    """Strictly positive random P, R plus random literal-set predicates."""
    if not 2 <= domain_size <= 2 ** 20:
        raise ValueError("domain_size must lie in [2, 2^20]")
    rng = np.random.default_rng(seed)
    points = binary_points(domain_size)
    p = DiscreteDistribution(_dirichlet_pmf(rng, domain_size), points)
    r = DiscreteDistribution(_dirichlet_pmf(rng, domain_size), points)
    nbits = points.shape[1]
    members, seen = [], set()
    attempts = 0
    while len(members) < feature_count and attempts < 1000 * (feature_count + 1):
        attempts += 1
        size = int(rng.integers(1, min(2, nbits) + 1))
        idx = sorted(rng.choice(nbits, size=size, replace=False).tolist())
        lits = tuple((int(i), int(rng.integers(0, 2))) for i in idx)
        if lits in seen:
            continue
        c = LiteralSet(lits)
        hits = c(points)
        if hits.all() or not hits.any():
            continue
        seen.add(lits)
        members.append(c)
    return ExactInstance(p, r, SubpopulationFamily(members))
