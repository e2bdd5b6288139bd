"""Multicalibrated partitions built by boosting with branching programs.

The partition is a layered program: each round may split some states with a
learned predicate, then merge states whose weights R(S)/P(S) fall in the
same geometric bucket so the width stays bounded.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import PairData
from .errors import DegenerateInput
from .prob import LogBase, WeightFunction
from .subpop import Subpopulation, TIE_TOL, from_dict, side_labeled

logger = logging.getLogger(__name__)

EXACT_MIN_MASS = 1e-12


@dataclass
class McParams:
    max_width: int = 60
    advantage_threshold: float = 0.02
    max_rounds: int = 40
    merge_bucket_ratio: float = 1.1
    min_state_mass: float | None = None  # None: 1/sqrt(n) in sample mode
    holdout: float = 0.0

    def __post_init__(self):
        if self.max_width < 2:
            raise ValueError("max_width must be >= 2")
        if not 0 < self.advantage_threshold < 1:
            raise ValueError("advantage_threshold must lie in (0, 1)")
        if self.merge_bucket_ratio <= 1:
            raise ValueError("merge_bucket_ratio must exceed 1")
        if not 0 <= self.holdout < 1:
            raise ValueError("holdout must lie in [0, 1)")

    def resolved_min_mass(self, data: PairData) -> float:
        if self.min_state_mass is not None:
            return self.min_state_mass
        return EXACT_MIN_MASS if data.exact else 1.0 / math.sqrt(data.n)


@dataclass
class Layer:
    splits: list  # per incoming state: a Subpopulation or None
    merge: list   # per post-split state: outgoing state id

    def apply(self, x, state):
        n_in = len(self.splits)
        offsets = np.zeros(n_in, dtype=int)
        nxt = 0
        for i, h in enumerate(self.splits):
            offsets[i] = nxt
            nxt += 1 if h is None else 2
        out = offsets[state]
        for i, h in enumerate(self.splits):
            if h is None:
                continue
            idx = np.flatnonzero(state == i)
            if idx.size:
                out[idx] += np.asarray(h(x[idx]), dtype=int)
        return np.asarray(self.merge, dtype=int)[out]

    def to_dict(self):
        return {"splits": [None if h is None else h.to_dict() for h in self.splits],
                "merge": [int(v) for v in self.merge]}

    @classmethod
    def from_dict(cls, d):
        return cls([None if h is None else from_dict(h) for h in d["splits"]], list(d["merge"]))


@dataclass
class Partition:
    layers: list
    p_mass: np.ndarray
    r_mass: np.ndarray
    floor_weight: float
    log: list = field(default_factory=list)

    @property
    def n_states(self) -> int:
        return len(self.p_mass)

    @property
    def flagged(self) -> np.ndarray:
        """States with R mass but no P mass; their weight is the floor."""
        return (self.p_mass <= 0) & (self.r_mass > 0)

    @property
    def weights(self) -> np.ndarray:
        p = self.p_mass
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(p > 0, self.r_mass / np.where(p > 0, p, 1.0), 0.0)
        return np.where(self.flagged, self.floor_weight, w)

    def assign(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        state = np.zeros(x.shape[0], dtype=int)
        for layer in self.layers:
            state = layer.apply(x, state)
        return state

    def to_json(self) -> dict:
        return {
            "layers": [layer.to_dict() for layer in self.layers],
            "states": [{"p_mass": float(p), "r_mass": float(r)} for p, r in zip(self.p_mass, self.r_mass)],
            "floor_weight": float(self.floor_weight),
            "log": self.log,
        }

    @classmethod
    def from_json(cls, obj) -> "Partition":
        return cls(
            [Layer.from_dict(d) for d in obj["layers"]],
            np.array([s["p_mass"] for s in obj["states"]], dtype=float),
            np.array([s["r_mass"] for s in obj["states"]], dtype=float),
            float(obj["floor_weight"]),
            list(obj.get("log", [])),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "Partition":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


class PartitionWeight(WeightFunction):
    def __init__(self, partition: Partition):
        self.partition = partition
        self._w = partition.weights
        p = partition.p_mass
        self.certificate = float(np.dot(p, self._w))

    def __call__(self, x):
        return self._w[self.partition.assign(x)]


def state_masses(partition: Partition, data: PairData):
    m = partition.n_states
    p = np.bincount(partition.assign(data.p_x), weights=data.p_m, minlength=m)
    r = np.bincount(partition.assign(data.r_x), weights=data.r_m, minlength=m)
    return p, r


def _floor_weight(data: PairData) -> float:
    return float(1.0 / data.p_m.min())


def _bucket_merge(p_mass, r_mass, floor_weight, ratio, max_width):
    """Merge map grouping states by floor(log w / log ratio); widens buckets until it fits."""
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(p_mass > 0, r_mass / np.where(p_mass > 0, p_mass, 1.0), floor_weight)
    while True:
        keys = []
        for wi in w:
            keys.append(None if wi <= 0 else math.floor(math.log(wi) / math.log(ratio) + 1e-12))
        order = {}
        merge = [order.setdefault(k, len(order)) for k in keys]
        if len(order) <= max_width:
            return merge, ratio
        ratio = ratio * ratio


def build_partition(p_side, r_side=None, learner=None, params: McParams | None = None, seed: int = 0) -> Partition:
    """Grow an approximately multicalibrated partition.

    Each round every state with enough R mass (and some P mass) trains the
    learner to separate its P points (label 0) from its R points (label 1).
    A state splits when R(S) * advantage, its share of the on-average
    multicalibration error, beats the threshold and both children keep
    P points. Masses and weights of the final states come from the full
    data (or the holdout part, if set).
    """
    params = params or McParams()
    if learner is None:
        raise ValueError("a weak learner is required")
    data = PairData.coerce(p_side, r_side)
    if params.holdout > 0:
        train, evaluation = data.split(params.holdout, seed)
    else:
        train = evaluation = data
    min_mass = params.resolved_min_mass(train)
    floor_weight = _floor_weight(train)

    layers: list[Layer] = []
    log: list[dict] = []
    p_state = np.zeros(train.p_x.shape[0], dtype=int)
    r_state = np.zeros(train.r_x.shape[0], dtype=int)
    m = 1
    for rnd in range(params.max_rounds):
        p_mass = np.bincount(p_state, weights=train.p_m, minlength=m)
        r_mass = np.bincount(r_state, weights=train.r_m, minlength=m)
        p_groups = _group(p_state, m)
        r_groups = _group(r_state, m)
        splits: list = [None] * m
        advantages = {}
        for i in range(m):
            if r_mass[i] < min_mass or p_mass[i] <= 0:
                continue
            pi, ri = p_groups[i], r_groups[i]
            x, y, wts = side_labeled(train.p_x[pi], train.p_m[pi], train.r_x[ri], train.r_m[ri])
            try:
                h, adv = learner(x, y, wts)
            except DegenerateInput:
                continue
            if r_mass[i] * adv > params.advantage_threshold and _children_keep_p(h, train, pi):
                splits[i] = h
                advantages[i] = adv
        if not advantages:
            log.append({"round": rnd, "splits": 0, "states": m})
            break
        identity = list(range(m + len(advantages)))
        layer = Layer(splits, identity)
        p_state = layer.apply(train.p_x, p_state)
        r_state = layer.apply(train.r_x, r_state)
        m_split = len(identity)
        ratio = None
        if m_split > params.max_width:
            p_mass = np.bincount(p_state, weights=train.p_m, minlength=m_split)
            r_mass = np.bincount(r_state, weights=train.r_m, minlength=m_split)
            merge, ratio = _bucket_merge(p_mass, r_mass, floor_weight,
                                         params.merge_bucket_ratio, params.max_width)
            layer.merge = merge
            p_state = np.asarray(merge)[p_state]
            r_state = np.asarray(merge)[r_state]
        layers.append(layer)
        m = max(layer.merge) + 1
        log.append({"round": rnd, "splits": len(advantages), "states_after_split": m_split,
                    "states": m, "merge_ratio": ratio,
                    "max_advantage": max(advantages.values())})
        logger.debug("round %d: %d splits, %d states", rnd, len(advantages), m)

    part = Partition(layers, np.ones(m), np.ones(m), floor_weight, log)
    p_mass, r_mass = state_masses(part, evaluation)
    part.p_mass, part.r_mass = p_mass, r_mass
    part.floor_weight = _floor_weight(evaluation)
    return part


def _children_keep_p(h, data, pi):
    """Both children of the split keep P points, so no new state needs a
    floored weight. A child without R points is fine: its weight is 0."""
    hp = np.asarray(h(data.p_x[pi]), dtype=bool)
    return hp.any() and (~hp).any()


def _group(state, m):
    order = np.argsort(state, kind="stable")
    bounds = np.searchsorted(state[order], np.arange(m + 1))
    return [order[bounds[i]:bounds[i + 1]] for i in range(m)]


def reweighting(partition: Partition) -> PartitionWeight:
    return PartitionWeight(partition)


def state_statistics(partition: Partition, base=LogBase.TWO) -> list[dict]:
    base = LogBase.parse(base)
    rows = []
    for i, (p, r, w, flag) in enumerate(zip(partition.p_mass, partition.r_mass,
                                            partition.weights, partition.flagged)):
        rows.append({
            "state": i, "p_mass": float(p), "r_mass": float(r), "w": float(w),
            "log_w": float(base.from_nats(math.log(w))) if w > 0 else -math.inf,
            "flagged": bool(flag),
        })
    return rows


@dataclass
class McAuditReport:
    alpha_hat: float
    worst_c: Subpopulation | None
    per_c: list          # alpha for each C, family order
    gaps: np.ndarray     # (n_states, n_C) |R|_S(C) - P|_S(C)|, nan for excluded states
    excluded_states: list


def mcab_audit(partition: Partition, p_side, r_side=None, family=None) -> McAuditReport:
    """Average (over S ~ R) conditional gap |R|_S(C) - P|_S(C)|, maximized over C."""
    data = PairData.coerce(p_side, r_side)
    members = list(family)
    p_mass, r_mass = state_masses(partition, data)
    excluded = [int(i) for i in np.flatnonzero((p_mass <= 0) & (r_mass > 0))]
    if excluded:
        warnings.warn(f"states {excluded} have R mass but no P mass; excluded from the audit")
    m = partition.n_states
    p_state = partition.assign(data.p_x)
    r_state = partition.assign(data.r_x)
    gaps = np.full((m, len(members)), np.nan)
    per_c = []
    ok = (p_mass > 0) & (r_mass > 0)
    for j, c in enumerate(members):
        pc = np.bincount(p_state, weights=data.p_m * c(data.p_x), minlength=m)
        rc = np.bincount(r_state, weights=data.r_m * c(data.r_x), minlength=m)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.abs(rc / r_mass - pc / p_mass)
        g = np.where(ok, g, np.nan)
        gaps[:, j] = g
        per_c.append(float(np.sum(np.where(ok, r_mass * np.nan_to_num(g), 0.0))))
    worst = int(np.argmax(np.asarray(per_c) >= max(per_c) - TIE_TOL)) if per_c else None
    return McAuditReport(
        alpha_hat=max(per_c) if per_c else 0.0,
        worst_c=members[worst] if per_c else None,
        per_c=per_c, gaps=gaps, excluded_states=excluded,
    )


def conditional_state_tv(partition: Partition, p_side, r_side=None, c=None) -> float:
    """sum_i |R|_C(S_i) - Q|_C(S_i)| for Q the partition reweighting."""
    data = PairData.coerce(p_side, r_side)
    m = partition.n_states
    w = reweighting(partition)
    q_m = data.p_m * w(data.p_x)
    cp = np.asarray(c(data.p_x), dtype=float)
    cr = np.asarray(c(data.r_x), dtype=float)
    q = np.bincount(partition.assign(data.p_x), weights=q_m * cp, minlength=m)
    r = np.bincount(partition.assign(data.r_x), weights=data.r_m * cr, minlength=m)
    return float(np.abs(r / r.sum() - q / q.sum()).sum())

