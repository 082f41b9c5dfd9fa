import numpy as np
import pytest

from g2flow import grid as gr


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


TWO_PI = 2.0 * np.pi


@pytest.fixture
def line_grid():
    """64-point one-dimensional torus (other axes inert, unit period)."""
    return gr.GridShape.make([64, 1, 1, 1, 1, 1, 1], [TWO_PI] + [1.0] * 6)


@pytest.fixture
def plane_grid():
    """16 x 16 two-dimensional torus (inert axes of unit period)."""
    return gr.GridShape.make([16, 16, 1, 1, 1, 1, 1], [TWO_PI, TWO_PI] + [1.0] * 5)


def random_unit_vec(rng, n=7):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)
