import math
import os

import pytest
from hypothesis import settings

from mgkl import synth
from mgkl.data import PairData

settings.register_profile("repo", max_examples=40, deadline=None, derandomize=True)
settings.register_profile("explore", max_examples=300, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))

LN2 = math.log(2.0)

# d(3/4, 1/2) = 0.75*log2(1.5) - 0.25 and d(1/2, 3/4) = 0.5 - 0.5*log2(1.5),
# evaluated by hand with log2(1.5) = 0.584962500721156.
D_34_12 = 0.1887218755408671
D_12_34 = 0.2075187496394219


@pytest.fixture
def gap1():
    return synth.gap1_instance()


@pytest.fixture
def gap1_data(gap1):
    return PairData.from_exact(gap1.p, gap1.r)


def random_pmf(rng, n):
    v = rng.uniform(0.05, 1.0, n)
    return v / v.sum()
