import numpy as np
import torch

import pytest

from fluidest.fields import DTYPE, ScalarField2D, VectorField2D
from fluidest.sim import ParticleSet, render_particles


def coordinate_grids(h, w):
    yy, xx = torch.meshgrid(
        torch.arange(h, dtype=DTYPE), torch.arange(w, dtype=DTYPE), indexing="ij"
    )
    return yy, xx


def scalar_from_fn(h, w, fn):
    yy, xx = coordinate_grids(h, w)
    return ScalarField2D(fn(xx, yy))


def vector_from_fn(h, w, fn_u, fn_v):
    yy, xx = coordinate_grids(h, w)
    return VectorField2D(fn_u(xx, yy), fn_v(xx, yy))


def random_scalar(h, w, rng, scale=1.0):
    return ScalarField2D(torch.as_tensor(rng.standard_normal((h, w)) * scale))


def random_vector(h, w, rng, scale=1.0):
    return VectorField2D(
        torch.as_tensor(rng.standard_normal((h, w)) * scale),
        torch.as_tensor(rng.standard_normal((h, w)) * scale),
    )


def particle_pair(h, w, displacement, rng, n=130, sigma=1.7, intensity=0.9):
    """Render two particle images related by a rigid translation."""
    pos = np.stack(
        [rng.uniform(0, w - 1, size=n), rng.uniform(0, h - 1, size=n)], axis=1
    )
    first = render_particles(ParticleSet(pos, intensity, sigma), h, w)
    shifted = pos + np.asarray(displacement, dtype=np.float64)
    second = render_particles(ParticleSet(shifted, intensity, sigma), h, w)
    return first, second


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
