import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from hairgbuf.gbuffer import Camera  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def camera():
    return Camera.look_at(eye=(0.0, 0.0, 4.0), target=(0.0, 0.0, 0.0),
                          up=(0.0, 1.0, 0.0), fov_y_deg=40.0, width=64, height=64)


def random_unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
