import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mgkl import errors, gibbs
from mgkl.data import PairData
from mgkl.gibbs import FitParams, GibbsModel, fit, kkt_check
from mgkl.prob import DiscreteDistribution, SampleSet
from mgkl.subpop import LiteralSet, StumpLearner, Subcube, SubpopulationFamily, multiaccuracy_audit
from mgkl.synth import random_exact_instance

EXACT = dict(learning_rate=1.0, max_iters=100000, grad_tol=1e-10)


def fit_exact(inst, alpha=0.0, **kw):
    return fit(inst.p, inst.r, family=inst.family, params=FitParams(alpha=alpha, **{**EXACT, **kw}))


class TestFit:
    def test_identical_sides(self):
        inst = random_exact_instance(8, 4, 1)
        model = fit(inst.p, inst.p, family=inst.family, params=FitParams(**EXACT))
        assert np.all(model.coef == 0) and model.lambda0 == 0.0
        assert np.all(model(inst.p.points) == 1.0)

    def test_gap1_q0(self, gap1):
        model = fit_exact(gap1)
        q = gibbs.gibbs_distribution(model, gap1.p)
        assert q.pmf == pytest.approx([1 / 8, 3 / 8, 1 / 8, 3 / 8], abs=1e-6)
        assert kkt_check(model, gap1.p, gap1.r).ok

    def test_kkt_with_alpha(self):
        inst = random_exact_instance(8, 4, 0)
        model = fit_exact(inst, 0.05)
        rep = kkt_check(model, inst.p, inst.r, tol=1e-6)
        assert rep.ok
        active = model.coef != 0
        assert np.allclose(np.abs(rep.gaps[active]), 0.05, atol=1e-6)

    def test_normalization_invariants(self):
        inst = random_exact_instance(16, 5, 2)
        model = fit_exact(inst, 0.02)
        assert model.lambda0 == pytest.approx(gibbs.log_partition(model, inst.p), abs=1e-9)
        assert inst.p.pmf @ model(inst.p.points) == pytest.approx(1.0, abs=1e-9)

    def test_trace_is_monotone(self):
        inst = random_exact_instance(16, 5, 3)
        model = fit_exact(inst, 0.01, learning_rate=0.5)
        assert np.all(np.diff(model.trace) <= 1e-12)

    def test_multiaccuracy_at_optimum(self):
        inst = random_exact_instance(16, 6, 4)
        model = fit_exact(inst, 0.03)
        viol, _ = multiaccuracy_audit(model, inst.p, inst.r, inst.family)
        assert viol <= 0.03 + 1e-6

    def test_nonconvergence(self, gap1):
        with pytest.raises(errors.NonConvergence) as info:
            fit(gap1.p, gap1.r, family=gap1.family, params=FitParams(max_iters=3))
        assert info.value.model.iterations == 3
        model = fit(gap1.p, gap1.r, family=gap1.family, params=FitParams(max_iters=3, strict=False))
        assert not model.converged

    def test_overflow_guard(self):
        p = DiscreteDistribution(np.array([0.5, 0.5 - 1e-300, 1e-300, 0.0]) / 1.0)
        r = DiscreteDistribution(np.array([0.0, 0.0, 1.0, 0.0]))
        fam = SubpopulationFamily([LiteralSet(((0, 1), (1, 0)))])
        with pytest.warns(errors.OverflowGuard):
            fit(p, r, family=fam, params=FitParams(learning_rate=50.0, max_iters=400, strict=False))

    def test_converges_near_rounding_floor(self):
        # sufficient-decrease checks at ~1e-16 used to shrink the step until it stalled
        inst = random_exact_instance(16, 5, 683)
        model = fit_exact(inst, 0.02)
        assert model.converged and model.iterations < 5000

    def test_bad_params(self):
        with pytest.raises(ValueError):
            FitParams(learning_rate=0)
        with pytest.raises(ValueError):
            FitParams(alpha=-1)

    def test_needs_family(self, gap1):
        with pytest.raises(ValueError):
            fit(gap1.p, gap1.r, family=SubpopulationFamily(), params=FitParams(boosting_mode=True))

    def test_boosting_on_samples(self):
        rng = np.random.default_rng(0)
        p = SampleSet(rng.normal(size=(3000, 1)), "P", 0)
        r = SampleSet(rng.normal(size=(3000, 1)) + 1.0, "R", 0)
        model = fit(p, r, family=SubpopulationFamily(learner=StumpLearner()),
                    params=FitParams(boosting_mode=True))
        assert model.features and np.all(np.diff(model.trace) <= 1e-12)
        assert np.mean(np.log(model(r.features))) > 0.1
        keys = [str(c.to_dict()) for c in model.features]
        assert len(keys) == len(set(keys))

    def test_boosting_explicit_family(self, gap1):
        model = fit(gap1.p, gap1.r, family=gap1.family,
                    params=FitParams(boosting_mode=True, learning_rate=1.0, max_iters=20000,
                                     advantage_threshold=1e-6))
        q = gibbs.gibbs_distribution(model, gap1.p)
        assert q.pmf == pytest.approx([1 / 8, 3 / 8, 1 / 8, 3 / 8], abs=1e-5)


class TestHelpers:
    def test_log_partition(self):
        p = DiscreteDistribution.uniform(4)
        zero = GibbsModel([Subcube(0, 1)], [0.0], 0.0, [0.0])
        assert gibbs.log_partition(zero, p) == 0.0
        model = GibbsModel([Subcube(0, 1)], [math.log(3)], 0.0, [0.0])
        assert gibbs.log_partition(model, p) == pytest.approx(math.log(2), abs=1e-12)

    def test_ell1(self):
        assert gibbs.ell1(GibbsModel([], [], 0.0, [])) == 0.0
        assert gibbs.ell1(GibbsModel([Subcube(0, 1), Subcube(1, 1)], [1.5, -0.5], 0.0, [0, 0])) == 2.0

    def test_roundtrip(self, tmp_path, gap1):
        model = fit_exact(gap1)
        model.save(tmp_path / "g.json")
        back = GibbsModel.load(tmp_path / "g.json")
        assert np.array_equal(back.coef, model.coef) and back.lambda0 == model.lambda0
        assert np.array_equal(back(gap1.p.points), model(gap1.p.points))


class TestPythagorean:
    def test_gap1(self, gap1):
        model = fit_exact(gap1)
        assert gibbs.pythagorean_gibbs_check(model, gap1.p, gap1.r) < 1e-6

    @given(st.integers(0, 10 ** 6))
    def test_per_feature_alphas(self, seed):
        inst = random_exact_instance(8, 4, seed)
        alphas = list(np.random.default_rng(seed).uniform(0, 0.1, len(inst.family)))
        model = fit_exact(inst, alphas)
        assert kkt_check(model, inst.p, inst.r).ok
        assert gibbs.pythagorean_gibbs_check(model, inst.p, inst.r) < 1e-5

    def test_sample_mode_kkt(self):
        rng = np.random.default_rng(1)
        p = SampleSet(rng.integers(0, 2, size=(500, 3)).astype(float), "P", 0)
        r = SampleSet((rng.random((500, 3)) < 0.7).astype(float), "R", 0)
        fam = SubpopulationFamily([Subcube(i, 1) for i in range(3)])
        model = fit(p, r, family=fam, params=FitParams(alpha=0.01, **EXACT))
        assert kkt_check(model, PairData.from_samples(p, r)).ok
