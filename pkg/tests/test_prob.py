import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import D_12_34, D_34_12, LN2, random_pmf
from mgkl import errors
from mgkl.prob import (ConstantWeight, DiscreteDistribution, LogBase, SampleSet, TableWeight,
                       bernoulli_kl, binary_points, chain_rule_decompose, conditional, infinity_norm,
                       kl_exact, log_weight_expectation, nwj_lower_bound)
from mgkl.subpop import Subcube
from mgkl.synth import random_exact_instance


def dist(values):
    return DiscreteDistribution(np.asarray(values, dtype=float))


pmfs = st.integers(2, 16).flatmap(
    lambda n: st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n)).map(
    lambda v: np.asarray(v) / np.sum(v))


class TestDistribution:
    def test_rejects_bad_pmf(self):
        with pytest.raises(ValueError):
            dist([0.5, 0.6])
        with pytest.raises(ValueError):
            dist([1.2, -0.2])

    def test_points_are_big_endian_bits(self):
        pts = binary_points(4)
        assert pts.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]

    def test_json_roundtrip(self, tmp_path):
        d = dist([0.1, 0.2, 0.3, 0.4])
        d.save(tmp_path / "d.json")
        back = DiscreteDistribution.load(tmp_path / "d.json")
        assert np.array_equal(back.pmf, d.pmf)
        assert d.to_json()["domain_size"] == 4

    def test_samples_reject_nan(self):
        with pytest.raises(ValueError):
            SampleSet(np.array([[0.0], [np.nan]]), "P", 0)

    def test_sample_csv_roundtrip(self, tmp_path):
        x = np.random.default_rng(1).normal(size=(7, 3))
        SampleSet(x, "R", 3).to_csv(tmp_path / "s.csv")
        header = (tmp_path / "s.csv").read_text().splitlines()[0]
        assert header == "f0,f1,f2"
        back = SampleSet.from_csv(tmp_path / "s.csv", "R", 3)
        assert np.array_equal(back.features, x)


class TestKL:
    def test_identity(self):
        u = DiscreteDistribution.uniform(4)
        assert kl_exact(u, u) == 0.0

    def test_parity_bias_row(self):
        # 0.9 log2 9 + 0.1 log2(1/9) = 0.8 * log2 9
        r, p = dist([0.1, 0.9]), dist([0.9, 0.1])
        assert kl_exact(r, p) == pytest.approx(0.8 * math.log2(9), abs=1e-12)
        assert kl_exact(r, p) == pytest.approx(2.5359400011538, abs=1e-9)

    def test_gap1_total(self, gap1):
        # 1.5 - H(R) with H(R) = 1.5 bits: (1/4)*2 + (1/4)*2 + (1/2)*1
        assert kl_exact(gap1.r, gap1.p) == pytest.approx(0.5, abs=1e-12)

    def test_absolute_continuity(self):
        with pytest.raises(errors.AbsoluteContinuityViolation):
            kl_exact(dist([0.5, 0.5]), dist([1.0, 0.0]))

    def test_zero_mass_terms_vanish(self):
        assert kl_exact(dist([1.0, 0.0]), dist([0.5, 0.5])) == pytest.approx(1.0)

    @given(pmfs)
    def test_base_conversion(self, p):
        r = DiscreteDistribution(p[::-1].copy())
        q = DiscreteDistribution(p)
        assert kl_exact(r, q, LogBase.TWO) == pytest.approx(
            kl_exact(r, q, LogBase.NATURAL) / LN2, abs=1e-12)

    @given(pmfs, st.integers(0, 2 ** 31))
    def test_gibbs_inequality(self, p, seed):
        rng = np.random.default_rng(seed)
        r = random_pmf(rng, p.size)
        assert kl_exact(dist(r), dist(p)) >= 0
        assert kl_exact(dist(p), dist(p)) == 0.0

    def test_parse_base(self):
        assert LogBase.parse("bits") is LogBase.TWO
        assert LogBase.parse("e") is LogBase.NATURAL
        with pytest.raises(ValueError):
            LogBase.parse("ten")


class TestBernoulli:
    def test_values(self):
        assert bernoulli_kl(0.5, 0.5) == 0.0
        assert bernoulli_kl(0.8, 0.2) == pytest.approx(1.2, abs=1e-12)
        assert bernoulli_kl(0.75, 0.5) == pytest.approx(D_34_12, abs=1e-12)
        assert bernoulli_kl(0.5, 0.75) == pytest.approx(D_12_34, abs=1e-12)

    def test_degenerate_reference(self):
        assert bernoulli_kl(0.0, 0.0) == 0.0
        with pytest.raises(errors.DegenerateReference):
            bernoulli_kl(0.5, 0.0)


class TestConditioning:
    def test_uniform(self):
        u = DiscreteDistribution.uniform(4)
        c = conditional(u, Subcube(0, 0))
        assert c.pmf.tolist() == [0.5, 0.5, 0.0, 0.0]

    def test_gap1_conditionals(self, gap1):
        c = Subcube(0, 0)
        assert conditional(gap1.r, c).pmf[:2].tolist() == [0.5, 0.5]
        q0 = dist([1 / 8, 3 / 8, 1 / 8, 3 / 8])
        assert conditional(q0, c).pmf[:2] == pytest.approx([0.25, 0.75])

    def test_empty(self, gap1):
        with pytest.raises(errors.EmptyConditioningSet):
            conditional(gap1.r, lambda x: (x[:, 0] == 1) & (x[:, 1] == 0))

    def test_chain_rule_gap1(self, gap1):
        marg, cond_c, cond_cbar = chain_rule_decompose(gap1.r, gap1.p, Subcube(0, 0))
        assert marg == 0.0 and cond_c == pytest.approx(0.0, abs=1e-15)
        assert marg + cond_c + cond_cbar == pytest.approx(0.5, abs=1e-12)

    def test_chain_rule_identity(self):
        assert chain_rule_decompose(dist([0.25] * 4), dist([0.25] * 4), Subcube(1, 1)) == (0.0, 0.0, 0.0)

    @given(st.integers(0, 10 ** 6))
    def test_chain_rule_random(self, seed):
        inst = random_exact_instance(8, 4, seed)
        kl = kl_exact(inst.r, inst.p)
        for c in inst.family:
            total = sum(chain_rule_decompose(inst.r, inst.p, c))
            assert total == pytest.approx(kl, abs=1e-9)


class TestLowerBounds:
    def test_constant(self, gap1):
        w = ConstantWeight(1.0)
        assert log_weight_expectation(w, gap1.r) == 0.0
        assert nwj_lower_bound(w, gap1.r, gap1.p) == 0.0

    @given(st.integers(0, 10 ** 6))
    def test_true_ratio_is_tight(self, seed):
        inst = random_exact_instance(8, 3, seed)
        w = TableWeight.ratio(inst.r, inst.p)
        kl = kl_exact(inst.r, inst.p)
        assert log_weight_expectation(w, inst.r) == pytest.approx(kl, abs=1e-9)
        assert nwj_lower_bound(w, inst.r, inst.p) == pytest.approx(kl, abs=1e-9)
        w2 = TableWeight(inst.p.points, 2 * w.values)
        expected = kl + (math.log(2) - 1) / LN2
        assert nwj_lower_bound(w2, inst.r, inst.p) == pytest.approx(expected, abs=1e-9)
        assert expected < kl

    @given(st.integers(0, 10 ** 6))
    def test_bounds_hold_for_random_weights(self, seed):
        rng = np.random.default_rng(seed)
        inst = random_exact_instance(8, 3, seed)
        kl = kl_exact(inst.r, inst.p)
        vals = rng.uniform(0.01, 10, 8)
        w_n = TableWeight(inst.p.points, vals / (inst.p.pmf @ vals))
        assert log_weight_expectation(w_n, inst.r) <= kl + 1e-9
        assert nwj_lower_bound(TableWeight(inst.p.points, vals), inst.r, inst.p) <= kl + 1e-9

    def test_nonpositive_weight(self, gap1):
        w = TableWeight(gap1.p.points, np.array([1.0, 0.0, 1.0, 1.0]))
        with pytest.raises(errors.NonPositiveWeight):
            log_weight_expectation(w, gap1.r)


class TestInfinityNorm:
    def test_values(self, gap1):
        assert infinity_norm(ConstantWeight(1.0), gap1.p).value == 1.0
        w = TableWeight(gap1.p.points, np.array([0.5, 1.5, 0.5, 1.5]))
        assert infinity_norm(w, gap1.p).value == 2.0

    def test_true_ratio(self):
        inst = random_exact_instance(8, 2, 5)
        w = TableWeight.ratio(inst.r, inst.p)
        ratios = inst.r.pmf / inst.p.pmf
        assert infinity_norm(w, inst.p).value == pytest.approx(max(ratios.max(), (1 / ratios).max()))

    def test_rejects_zero(self, gap1):
        w = TableWeight.ratio(gap1.r, gap1.p)
        with pytest.raises(errors.NonPositiveWeight):
            infinity_norm(w, gap1.p)
