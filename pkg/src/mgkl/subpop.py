"""Sub-population predicates, finite families and weak learners.

A learner receives points labeled by side (P=0, R=1) with nonnegative
weights. It rescales the weights so each side carries total mass 1/2 and
scores a predicate h by

    corr(h) = sum_i v_i * y_i * s_i,    y_i, s_i in {-1, +1},

which under that balancing equals R(h) - P(h) for the weighted side
distributions. The advantage is |corr|.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateInput

TIE_TOL = 1e-12


class Subpopulation:
    kind = "base"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def name(self) -> str:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        return f"<{self.kind} {self.name}>"


@dataclass(frozen=True, repr=False)
class Stump(Subpopulation):
    feature: int
    threshold: float
    polarity: int = 1
    kind = "stump"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.polarity * (x[:, self.feature] - self.threshold) > 0

    @property
    def name(self):
        op = ">" if self.polarity > 0 else "<"
        return f"f{self.feature}{op}{self.threshold:.6g}"

    def to_dict(self):
        return {"kind": "stump", "feature": self.feature, "threshold": self.threshold,
                "polarity": self.polarity}


@dataclass(frozen=True, repr=False)
class Box(Subpopulation):
    """Axis-aligned closed box; None bounds are unbounded."""

    lo: tuple
    hi: tuple
    label: str = ""
    kind = "box"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        lo = np.array([-np.inf if v is None else v for v in self.lo])
        hi = np.array([np.inf if v is None else v for v in self.hi])
        return np.all((x >= lo) & (x <= hi), axis=1)

    @property
    def name(self):
        return self.label or "box[" + ",".join(f"{a}:{b}" for a, b in zip(self.lo, self.hi)) + "]"

    def to_dict(self):
        d = {"kind": "box", "lo": list(self.lo), "hi": list(self.hi)}
        if self.label:
            d["label"] = self.label
        return d


@dataclass(frozen=True, repr=False)
class Subcube(Subpopulation):
    index: int
    value: int
    kind = "subcube"

    def __call__(self, x):
        return np.asarray(x)[:, self.index] == self.value

    @property
    def name(self):
        return f"x{self.index}={self.value}"

    def to_dict(self):
        return {"kind": "subcube", "index": self.index, "value": self.value}


@dataclass(frozen=True, repr=False)
class LiteralSet(Subpopulation):
    """Conjunction of coordinate literals x[i] == v."""

    literals: tuple
    kind = "literal-set"

    def __call__(self, x):
        x = np.asarray(x)
        out = np.ones(x.shape[0], dtype=bool)
        for i, v in self.literals:
            out &= x[:, i] == v
        return out

    @property
    def name(self):
        return "&".join(f"x{i}={v}" for i, v in self.literals) or "all"

    def to_dict(self):
        return {"kind": "literal-set", "literals": [list(lit) for lit in self.literals]}


@dataclass(frozen=True, repr=False)
class Complement(Subpopulation):
    inner: Subpopulation
    kind = "complement"

    def __call__(self, x):
        return ~np.asarray(self.inner(x), dtype=bool)

    @property
    def name(self):
        return f"not({self.inner.name})"

    def to_dict(self):
        return {"kind": "complement", "inner": self.inner.to_dict()}


@dataclass(frozen=True)
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    label: int = 0

    @property
    def is_leaf(self):
        return self.left is None

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth(), self.right.depth())

    def to_dict(self):
        if self.is_leaf:
            return {"label": self.label}
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def from_dict(cls, d):
        if "label" in d:
            return cls(label=int(d["label"]))
        return cls(int(d["feature"]), float(d["threshold"]),
                   cls.from_dict(d["left"]), cls.from_dict(d["right"]))


@dataclass(frozen=True, repr=False)
class ShallowTree(Subpopulation):
    """Binary tree of threshold splits; x goes right iff x[feature] > threshold."""

    root: TreeNode
    kind = "tree"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[0], dtype=bool)
        stack = [(self.root, np.arange(x.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if node.is_leaf:
                out[idx] = bool(node.label)
                continue
            go_right = x[idx, node.feature] > node.threshold
            stack.append((node.left, idx[~go_right]))
            stack.append((node.right, idx[go_right]))
        return out

    @property
    def depth(self):
        return self.root.depth()

    @property
    def name(self):
        return f"tree(depth={self.depth})"

    def to_dict(self):
        return {"kind": "tree", "root": self.root.to_dict()}


def from_dict(d: dict) -> Subpopulation:
    kind = d["kind"]
    if kind == "stump":
        return Stump(int(d["feature"]), float(d["threshold"]), int(d.get("polarity", 1)))
    if kind == "box":
        return Box(tuple(d["lo"]), tuple(d["hi"]), d.get("label", ""))
    if kind == "subcube":
        return Subcube(int(d["index"]), int(d["value"]))
    if kind == "literal-set":
        return LiteralSet(tuple((int(i), int(v)) for i, v in d["literals"]))
    if kind == "complement":
        return Complement(from_dict(d["inner"]))
    if kind == "tree":
        return ShallowTree(TreeNode.from_dict(d["root"]))
    raise ValueError(f"unknown sub-population kind {kind!r}")


# A learner maps (points, side labels, weights) to (predicate, advantage).
Learner = Callable[[np.ndarray, np.ndarray, np.ndarray], tuple]


class SubpopulationFamily:
    """The class C: an explicit list of predicates or a learner-backed family."""

    def __init__(self, members: Iterable[Subpopulation] | None = None, *,
                 learner: Learner | None = None, closed: bool = False):
        if (members is None) == (learner is None):
            raise ValueError("give exactly one of members / learner")
        self.learner = learner
        self.closed = closed
        self.members: list[Subpopulation] | None = None
        if members is not None:
            members = list(members)
            if closed:
                members = _close_under_complement(members)
            self.members = members

    @property
    def explicit(self) -> bool:
        return self.members is not None

    def __iter__(self):
        if not self.explicit:
            raise TypeError("a learner-backed family cannot be enumerated")
        return iter(self.members)

    def __len__(self):
        if not self.explicit:
            raise TypeError("a learner-backed family has no fixed size")
        return len(self.members)

    def __getitem__(self, i):
        return self.members[i]

    def to_json(self) -> dict:
        if not self.explicit:
            raise TypeError("only explicit families serialize")
        return {"closed": self.closed, "members": [c.to_dict() for c in self.members]}

    @classmethod
    def from_json(cls, obj) -> "SubpopulationFamily":
        if isinstance(obj, list):
            obj = {"members": obj}
        fam = cls([from_dict(d) for d in obj["members"]])
        fam.closed = bool(obj.get("closed", False))
        return fam

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "SubpopulationFamily":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _complement_of(c: Subpopulation) -> Subpopulation:
    if isinstance(c, Subcube) and c.value in (0, 1):
        return Subcube(c.index, 1 - c.value)
    if isinstance(c, Complement):
        return c.inner
    return Complement(c)


def _close_under_complement(members):
    out = list(members)
    seen = {json.dumps(c.to_dict(), sort_keys=True) for c in out}
    for c in members:
        comp = _complement_of(c)
        key = json.dumps(comp.to_dict(), sort_keys=True)
        if key not in seen:
            seen.add(key)
            out.append(comp)
    return out


def subcube_family(dim: int) -> SubpopulationFamily:
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return SubpopulationFamily([Subcube(i, a) for i in range(dim) for a in (0, 1)])


# -- weak learners -----------------------------------------------------------

def balanced_signed_weights(y, weights) -> np.ndarray:
    """Per-sample v_i * y_i with each side rescaled to total 1/2."""
    y = np.asarray(y).astype(bool)
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    wr = w[y].sum()
    wp = w[~y].sum()
    if wr <= 0 or wp <= 0:
        raise DegenerateInput("both sides need positive weight")
    return np.where(y, 0.5 * w / wr, -0.5 * w / wp)


def correlation(pred, y, weights) -> float:
    """Balanced weighted correlation of a {0,1} predicate with side labels."""
    s = balanced_signed_weights(y, weights)
    spm = np.where(np.asarray(pred, dtype=bool), 1.0, -1.0)
    return float(np.dot(s, spm))


def presort(x) -> list[np.ndarray]:
    """Stable per-feature sort orders, reusable while only weights change."""
    return [np.argsort(x[:, j], kind="stable") for j in range(x.shape[1])]


def _best_split(x, s, score, orders=None):
    """Scan every (feature, midpoint) candidate.

    `score(below_sum, node_sum)` gives the objective for the split with the
    given signed mass at or below the threshold. Returns
    (value, feature, threshold, below_sum) or None if no feature varies.
    """
    best = None
    total = s.sum()
    for j in range(x.shape[1]):
        order = orders[j] if orders is not None else np.argsort(x[:, j], kind="stable")
        xs = x[order, j]
        cs = np.cumsum(s[order])[:-1]
        valid = xs[1:] > xs[:-1]
        if not np.any(valid):
            continue
        vals = np.where(valid, score(cs, total), -np.inf)
        top = vals.max()
        i = int(np.flatnonzero(vals >= top - TIE_TOL)[0])
        if best is None or top > best[0] + TIE_TOL:
            best = (float(top), j, 0.5 * (xs[i] + xs[i + 1]), float(cs[i]))
    return best


def train_stump(x, y, weights, orders=None) -> tuple[Stump, float]:
    """Best single-feature threshold by balanced weighted correlation.

    Candidates are midpoints between consecutive distinct sorted values;
    ties go to the lower feature index, then the lower threshold.
    """
    x = np.asarray(x, dtype=float)
    s = balanced_signed_weights(y, weights)
    best = _best_split(x, s, lambda below, total: np.abs(total - 2.0 * below), orders)
    if best is None:
        raise DegenerateInput("all samples identical: no threshold separates anything")
    _, j, t, below = best
    corr = s.sum() - 2.0 * below
    polarity = 1 if corr >= 0 else -1
    stump = Stump(j, float(t), polarity)
    return stump, abs(float(np.dot(s, np.where(stump(x), 1.0, -1.0))))


def train_tree(x, y, weights, max_depth: int = 5, min_gain: float = 1e-6):
    """Depth-limited greedy tree, grown fully then pruned.

    Each node takes the split maximizing |a_left| + |a_right|, where a is the
    node's signed balanced mass; leaves predict 1 where R mass dominates.
    Subtrees that raise the whole-tree correlation by less than `min_gain`
    are collapsed. Growing before pruning lets a zero-gain root split
    survive when its children pay off (XOR-like data).
    """
    if not 1 <= max_depth <= 5:
        raise ValueError("max_depth must be in [1, 5]")
    x = np.asarray(x, dtype=float)
    s = balanced_signed_weights(y, weights)
    if not np.any(np.ptp(x, axis=0) > 0):
        raise DegenerateInput("all samples identical: no threshold separates anything")

    def grow(idx, depth):
        a = float(s[idx].sum())
        leaf = TreeNode(label=int(a > 0))
        pure = np.all(s[idx] >= 0) or np.all(s[idx] <= 0)
        if depth == max_depth or idx.size < 2 or pure:
            return leaf, abs(a)
        best = _best_split(x[idx], s[idx], lambda below, total: np.abs(below) + np.abs(total - below))
        if best is None:
            return leaf, abs(a)
        _, j, t, _ = best
        right = x[idx, j] > t
        left_node, left_val = grow(idx[~right], depth + 1)
        right_node, right_val = grow(idx[right], depth + 1)
        value = left_val + right_val
        if value - abs(a) < min_gain:
            return leaf, abs(a)
        return TreeNode(j, float(t), left_node, right_node), value

    root, _ = grow(np.arange(x.shape[0]), 0)
    tree = ShallowTree(root)
    return tree, abs(correlation(tree(x), y, weights))


class StumpLearner:
    """Depth-1 trees. Sort orders are cached for the most recent `x`, so
    boosting loops that only reweight a fixed sample skip the sorting."""

    name = "dt1"

    def __init__(self):
        self._x = None
        self._orders = None

    def __call__(self, x, y, weights):
        if x is not self._x:
            self._x, self._orders = x, presort(np.asarray(x, dtype=float))
        return train_stump(x, y, weights, self._orders)


class TreeLearner:
    def __init__(self, max_depth: int = 5):
        self.max_depth = max_depth
        self.name = f"tree{max_depth}"

    def __call__(self, x, y, weights):
        return train_tree(x, y, weights, self.max_depth)


class FamilyLearner:
    """Exhaustive search over an explicit family."""

    name = "family"

    def __init__(self, members: Sequence[Subpopulation]):
        self.members = list(members)
        if not self.members:
            raise ValueError("empty family")

    def __call__(self, x, y, weights):
        s = balanced_signed_weights(y, weights)
        best_c, best_adv = None, -1.0
        for c in self.members:
            adv = abs(float(np.dot(s, np.where(c(x), 1.0, -1.0))))
            if adv > best_adv + TIE_TOL:
                best_c, best_adv = c, adv
        return best_c, best_adv


def make_learner(name: str, family: SubpopulationFamily | None = None) -> Learner:
    if name == "dt1":
        return StumpLearner()
    if name.startswith("tree"):
        return TreeLearner(int(name[4:] or 5))
    if name == "family":
        if family is None or not family.explicit:
            raise ValueError("the family learner needs an explicit family")
        return FamilyLearner(family.members)
    raise ValueError(f"unknown learner {name!r}")


def side_labeled(p_x, p_m, r_x, r_m):
    """Stack both sides into one (x, y, weights) training set."""
    x = np.vstack([p_x, r_x])
    y = np.concatenate([np.zeros(len(p_x), dtype=int), np.ones(len(r_x), dtype=int)])
    return x, y, np.concatenate([p_m, r_m])


def multiaccuracy_audit(w, p_side, r_side, family: SubpopulationFamily):
    """max_C |Q(C) - R(C)| with Q = w.P, and the maximizing C.

    For a learner-backed family the learner proposes the distinguisher and
    its violation is recomputed directly.
    """
    from .prob import support

    p_x, p_m = support(p_side)
    r_x, r_m = support(r_side)
    q_m = p_m * np.asarray(w(p_x), dtype=float)

    def gap(c):
        return abs(float(np.dot(q_m, c(p_x))) - float(np.dot(r_m, c(r_x))))

    if family.explicit:
        worst, worst_val = None, -1.0
        for c in family:
            v = gap(c)
            if v > worst_val + TIE_TOL:
                worst, worst_val = c, v
        return worst_val, worst
    x, y, wts = side_labeled(p_x, q_m, r_x, r_m)
    c, _ = family.learner(x, y, wts)
    return gap(c), c
