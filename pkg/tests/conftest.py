import numpy as np
import pytest

from dpdefocus import gaussian_blur


def multiscale_texture(shape, seed, fine_weight=0.1):
    """Texture with content at several scales so that gradient energy
    survives heavy defocus blur; samples in [0.05, 0.95]."""
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    def norm01(t):
        t = np.asarray(t, dtype=np.float64)
        return (t - t.min()) / (t.max() - t.min())

    fine = rng.random((h, w))
    mid = norm01(gaussian_blur(rng.random((h, w)).astype(np.float32), 2.5))
    coarse = norm01(gaussian_blur(rng.random((h, w)).astype(np.float32), 10.0))
    grating = 0.5 + 0.5 * np.sin(2.0 * np.pi * (0.8 * xx + 0.6 * yy) / 64.0)
    mix = (fine_weight * fine + 0.35 * mid + 0.25 * coarse
           + (0.4 - fine_weight) * grating)
    return (0.05 + 0.9 * norm01(mix)).astype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
