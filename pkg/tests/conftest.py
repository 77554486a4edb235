from functools import lru_cache

import numpy as np
import pytest
from hypothesis import settings

from cnnrf.netforward import SyntheticUnit, SyntheticUnitParams
from cnnrf.pipeline import accumulate_stream
from cnnrf.revcorr import Crop, analyze_accumulator
from cnnrf.stimulus import NoiseSpec, noise_array

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

SHAPE = (16, 16, 1)
N_SAMPLES = 200_000
SEED = 20240607


class Run:
    """One synthetic-unit analysis: the unit, its accumulator and the recovered bank."""

    def __init__(self, kind, form, n, seed):
        self.unit = SyntheticUnit(SyntheticUnitParams.preset(kind, SHAPE))
        self.spec = NoiseSpec(seed, n, SHAPE)
        self.acc = accumulate_stream(self.unit, self.spec, Crop.centered(SHAPE), form)
        self.awa, self.awc, self.dec, self.bank = analyze_accumulator(self.acc)

    @property
    def k(self):
        return self.unit.k.T

    @property
    def q(self):
        return self.unit.q.T


@lru_cache(maxsize=None)
def pipeline_run(kind, form="standard-stc", n=N_SAMPLES, seed=SEED):
    return Run(kind, form, n, seed)


@lru_cache(maxsize=None)
def fit_set(kind, n_train=10_000, seed=SEED + 1):
    """Fresh noise (75/25 train/test) and the unit's responses to it."""
    unit = SyntheticUnit(SyntheticUnitParams.preset(kind, SHAPE))
    n = n_train + n_train // 3
    stim = noise_array(NoiseSpec(seed, n, SHAPE, stream=1))
    return stim, unit.batch(stim)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
