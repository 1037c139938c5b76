import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_backbone():
    from upseg.graph import BackboneConfig, build_unet
    return build_unet(BackboneConfig(in_channels=1, base_channels=2, depth=1,
                                     num_classes=1), seed=3)
