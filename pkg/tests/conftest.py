import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_image(rng, m, n):
    from canvasdist.images import DigitalImage

    return DigitalImage(m, n, rng.uniform(0.0, 1.0, size=m * n))
