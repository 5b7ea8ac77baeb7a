import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from darkdeblur.blursynth import make_rng


def textured(height, width, seed, smooth=2.0):
    """Smoothed-noise RGB test image, float32 (3, H, W) filling [0, 1]."""
    rng = make_rng(seed)
    img = np.stack([gaussian_filter(rng.random((height, width)), smooth)
                    for _ in range(3)])
    img = (img - img.min()) / (img.max() - img.min())
    return img.astype(np.float32)


@pytest.fixture
def rng():
    return make_rng(0)
