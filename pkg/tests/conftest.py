import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def toy_config():
    """Smallest runnable configuration; keeps model tests fast."""
    from fpnet.model import FPNetConfig
    return FPNetConfig(input_size=32, enc_channels=(8, 16, 24, 32),
                       ncd_width=8, cfm_width=16, bottleneck_width=4,
                       hrp_width=8, batch_size=2, epochs=2, seed=1)
