import numpy as np
import pytest

from mgkl.data import PairData
from mgkl.errors import DimensionMismatch, EmptySide
from mgkl.prob import DiscreteDistribution, SampleSet


def samples(n, d=2, seed=0):
    return SampleSet(np.random.default_rng(seed).normal(size=(n, d)), "P", seed)


def test_exact_drops_zero_mass(gap1_data, gap1):
    assert gap1_data.exact and gap1_data.dim == 2
    assert gap1_data.r_x.shape[0] == 3 and gap1_data.r_m.sum() == pytest.approx(1.0)
    assert gap1_data.p_x.shape[0] == 4


def test_exact_needs_shared_domain():
    with pytest.raises(DimensionMismatch):
        PairData.from_exact(DiscreteDistribution.uniform(4), DiscreteDistribution.uniform(8))


def test_sample_mode_masses():
    data = PairData.from_samples(samples(10), samples(20, seed=1))
    assert not data.exact and data.n == 10
    assert np.allclose(data.p_m, 0.1) and np.allclose(data.r_m, 0.05)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        PairData.from_samples(samples(5, 2), samples(5, 3))


def test_empty_side():
    with pytest.raises(EmptySide):
        PairData(np.zeros((0, 1)), np.zeros(0), np.zeros((2, 1)), np.ones(2) / 2)


def test_coerce(gap1_data, gap1):
    assert PairData.coerce(gap1_data) is gap1_data
    assert PairData.coerce(gap1.p, gap1.r).exact
    assert not PairData.coerce(samples(4), samples(4, seed=2)).exact
    raw = PairData.coerce((np.zeros((3, 1)), np.ones(3)), (np.ones((2, 1)), np.ones(2)))
    assert raw.p_m.sum() == pytest.approx(1.0) and raw.r_m.sum() == pytest.approx(1.0)


def test_split_is_seeded_and_disjoint():
    data = PairData.from_samples(samples(100), samples(80, seed=1))
    train, hold = data.split(0.25, seed=4)
    again, _ = data.split(0.25, seed=4)
    assert np.array_equal(train.p_x, again.p_x)
    assert train.p_x.shape[0] == 75 and hold.p_x.shape[0] == 25
    assert train.r_x.shape[0] == 60 and hold.r_x.shape[0] == 20
    assert train.p_m.sum() == pytest.approx(1.0) and hold.r_m.sum() == pytest.approx(1.0)
    both = np.vstack([train.p_x, hold.p_x])
    assert len(np.unique(both, axis=0)) == 100


def test_split_rejects_empty():
    data = PairData.from_samples(samples(3), samples(3, seed=1))
    with pytest.raises(EmptySide):
        data.split(0.01, seed=0)
