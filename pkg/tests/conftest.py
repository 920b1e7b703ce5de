import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dinseg.phantoms import PhantomConfig, generate_phantom


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_mask(rng, dims, p=0.4):
    from dinseg.volume import Mask

    return Mask(rng.random(dims) < p)


@pytest.fixture
def small_phantom():
    cfg = PhantomConfig(
        dims=(4, 32, 32),
        spacing=(6.0, 1.3, 1.3),
        tumor_count=(1, 2),
        radius=(4.0, 7.0),
        z_radius_scale=(0.3, 0.5),
        noise_std=0.02,
        seed=7,
    )
    return generate_phantom(cfg, np.random.default_rng(7))
