import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mgkl import errors
from mgkl.prob import ConstantWeight, DiscreteDistribution, TableWeight
from mgkl.subpop import (Box, Complement, FamilyLearner, LiteralSet, ShallowTree, Stump, StumpLearner,
                         Subcube, SubpopulationFamily, TreeLearner, correlation, from_dict,
                         multiaccuracy_audit, side_labeled, subcube_family, train_stump, train_tree)


def brute_force_stump(x, y, w):
    """Best |R(h) - P(h)| over every (feature, midpoint, polarity), each side weighted to 1."""
    y = y.astype(bool)
    wr, wp = w * y / w[y].sum(), w * ~y / w[~y].sum()
    best = 0.0
    for j in range(x.shape[1]):
        vals = np.unique(x[:, j])
        for t in (vals[1:] + vals[:-1]) / 2:
            above = x[:, j] > t
            best = max(best, abs(wr[above].sum() - wp[above].sum()))
    return best


class TestPredicates:
    def test_stump_rule(self):
        x = np.array([[0.0], [1.0], [2.0]])
        assert Stump(0, 1.0, 1)(x).tolist() == [False, False, True]
        assert Stump(0, 1.0, -1)(x).tolist() == [True, False, False]

    def test_box_unbounded(self):
        b = Box((None, 0.0), (1.0, None))
        assert b(np.array([[-50.0, 3.0], [2.0, 3.0], [0.0, -1.0]])).tolist() == [True, False, False]

    def test_literal_set_and_complement(self):
        pts = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
        c = LiteralSet(((0, 1), (1, 0)))
        assert c(pts).tolist() == [False, False, True, False]
        assert Complement(c)(pts).tolist() == [True, True, False, True]

    @pytest.mark.parametrize("c", [
        Stump(1, -0.25, -1), Box((0.0, 1.0), (2.0, 3.0), "b"), Subcube(0, 1),
        LiteralSet(((0, 1), (2, 0))), Complement(Subcube(1, 0)),
    ])
    def test_roundtrip(self, c):
        back = from_dict(json.loads(json.dumps(c.to_dict())))
        assert back == c and back.name == c.name

    def test_tree_roundtrip(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(200, 2))
        y = (x[:, 0] * x[:, 1] > 0).astype(int)
        tree, _ = train_tree(x, y, np.ones(200), 3)
        back = from_dict(json.loads(json.dumps(tree.to_dict())))
        assert isinstance(back, ShallowTree)
        assert np.array_equal(back(x), tree(x))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            from_dict({"kind": "hyperplane"})


class TestFamilies:
    def test_subcube_sizes(self):
        assert len(subcube_family(2)) == 4
        fam = subcube_family(1)
        pts = np.array([[0], [1]])
        assert np.array_equal(fam[0](pts), ~fam[1](pts))

    def test_subcube_half_mass(self):
        u = DiscreteDistribution.uniform(8)
        assert all(u.mass(c) == 0.5 for c in subcube_family(3))

    def test_closure_materializes_complements(self):
        fam = SubpopulationFamily([Subcube(0, 1), Box((0.0,), (1.0,))], closed=True)
        names = [c.name for c in fam]
        assert "x0=0" in names and any(n.startswith("not(") for n in names)
        assert len(fam) == 4

    def test_json_roundtrip(self, tmp_path):
        fam = SubpopulationFamily([Subcube(0, 1), Stump(0, 0.5, 1)])
        fam.save(tmp_path / "f.json")
        back = SubpopulationFamily.load(tmp_path / "f.json")
        assert [c.to_dict() for c in back] == [c.to_dict() for c in fam]


class TestStump:
    def test_separable(self):
        x = np.array([[-1.0], [1.0]])
        stump, adv = train_stump(x, np.array([0, 1]), np.ones(2))
        assert stump.threshold == 0.0 and stump.polarity == 1 and adv == 1.0

    def test_independent_labels(self):
        x = np.array([[0.0], [1.0], [0.0], [1.0]])
        _, adv = train_stump(x, np.array([0, 0, 1, 1]), np.ones(4))
        assert adv == pytest.approx(0.0, abs=1e-12)

    def test_degenerate(self):
        with pytest.raises(errors.DegenerateInput):
            train_stump(np.zeros((4, 2)), np.array([0, 1, 0, 1]), np.ones(4))
        with pytest.raises(errors.DegenerateInput):
            train_stump(np.array([[0.0], [1.0]]), np.array([0, 0]), np.ones(2))

    def test_tie_break_lower_feature_then_threshold(self):
        x = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        stump, _ = train_stump(x, np.array([0, 1, 0, 1]), np.ones(4))
        assert stump.feature == 0 and stump.threshold == 0.5

    @given(st.integers(0, 10 ** 6), st.integers(5, 120))
    def test_matches_brute_force(self, seed, n):
        rng = np.random.default_rng(seed)
        x = np.round(rng.normal(size=(n, 2)), 1)
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        w = rng.uniform(0.1, 2.0, n)
        if np.ptp(x[:, 0]) == 0 and np.ptp(x[:, 1]) == 0:
            return
        stump, adv = train_stump(x, y, w)
        assert adv == pytest.approx(brute_force_stump(x, y, w), abs=1e-9)
        assert adv == pytest.approx(abs(correlation(stump(x), y, w)), abs=1e-9)

    def test_shifted_gaussians(self):
        rng = np.random.default_rng(3)
        p, r = rng.normal(size=(150, 2)), rng.normal(size=(150, 2)) + 2.5
        x, y, w = side_labeled(p, np.full(150, 1 / 150), r, np.full(150, 1 / 150))
        _, adv = train_stump(x, y, w)
        assert adv == pytest.approx(brute_force_stump(x, y, w), abs=1e-12)

    def test_learner_cache_matches_direct(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(300, 3))
        y = rng.integers(0, 2, 300)
        learner = StumpLearner()
        for _ in range(3):
            w = rng.uniform(0.1, 1.0, 300)
            assert learner(x, y, w) == train_stump(x, y, w)


class TestTree:
    def test_depth_one_equals_stump(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(100, 2))
        y = rng.integers(0, 2, 100)
        w = np.ones(100)
        tree, adv_t = train_tree(x, y, w, 1)
        _, adv_s = train_stump(x, y, w)
        assert adv_t == pytest.approx(adv_s, abs=1e-12)

    def test_xor(self):
        x = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        y = np.array([0, 0, 1, 1])
        _, adv_s = train_stump(x, y, np.ones(4))
        tree, adv_t = train_tree(x, y, np.ones(4), 2)
        assert adv_s == pytest.approx(0.0, abs=1e-12)
        assert adv_t == pytest.approx(1.0)
        assert tree.depth <= 2

    def test_tree_beats_stump_on_gaussians(self):
        rng = np.random.default_rng(1)
        p, r = rng.normal(size=(200, 2)), rng.normal(size=(200, 2)) + 2.5
        x, y, w = side_labeled(p, np.ones(200), r, np.ones(200))
        _, adv_s = train_stump(x, y, w)
        tree, adv_t = TreeLearner(5)(x, y, w)
        assert adv_t >= adv_s - 1e-12
        assert tree.depth <= 5

    def test_depth_bounds(self):
        with pytest.raises(ValueError):
            train_tree(np.zeros((2, 1)), np.array([0, 1]), np.ones(2), 6)


class TestAudit:
    def test_true_ratio(self, gap1):
        w = TableWeight.ratio(gap1.r, gap1.p)
        viol, _ = multiaccuracy_audit(w, gap1.p, gap1.r, gap1.family)
        assert viol == pytest.approx(0.0, abs=1e-15)

    def test_q0_is_multiaccurate(self, gap1):
        w = TableWeight(gap1.p.points, np.array([0.5, 1.5, 0.5, 1.5]))
        viol, _ = multiaccuracy_audit(w, gap1.p, gap1.r, gap1.family)
        assert viol == pytest.approx(0.0, abs=1e-15)

    def test_uniform_weight(self, gap1):
        viol, worst = multiaccuracy_audit(ConstantWeight(1.0), gap1.p, gap1.r, gap1.family)
        assert viol == pytest.approx(0.25) and worst.name == "x1=0"

    def test_complement_closure_symmetric(self):
        p = DiscreteDistribution(np.array([0.1, 0.2, 0.3, 0.4]))
        r = DiscreteDistribution(np.array([0.4, 0.3, 0.2, 0.1]))
        fam = SubpopulationFamily([LiteralSet(((0, 1), (1, 1)))], closed=True)
        w = ConstantWeight(1.0)
        gaps = [abs(p.mass(c) - r.mass(c)) for c in fam]
        assert gaps[0] == pytest.approx(gaps[1], abs=1e-15)
        viol, _ = multiaccuracy_audit(w, p, r, fam)
        assert viol == pytest.approx(0.3)

    def test_learner_backed(self):
        rng = np.random.default_rng(2)
        p, r = rng.normal(size=(400, 1)), rng.normal(size=(400, 1)) + 1.0
        m = np.full(400, 1 / 400)
        fam = SubpopulationFamily(learner=StumpLearner())
        viol, c = multiaccuracy_audit(ConstantWeight(1.0), (p, m), (r, m), fam)
        assert viol > 0.2 and isinstance(c, Stump)

    def test_family_learner(self, gap1):
        learner = FamilyLearner(gap1.family.members)
        x, y, w = side_labeled(gap1.p.points, gap1.p.pmf, gap1.r.points, gap1.r.pmf)
        c, adv = learner(x, y, w)
        assert c.name == "x1=0" and adv == pytest.approx(0.25)
