import math

import numpy as np
import pytest
import torch

from fluidest.errors import DimensionMismatchError, InvalidConfigError
from fluidest.fields import DTYPE, ScalarField2D, VectorField2D
from fluidest.warp import WarpConfig, warp_bilinear, warp_gaussian

from conftest import random_scalar, scalar_from_fn


def dense_double_sum_oracle(f, w, variance):
    """Brute-force discretization of the kernel sum over every grid node."""
    data = f.data.numpy()
    h, wd = data.shape
    ys, xs = np.meshgrid(np.arange(h), np.arange(wd), indexing="ij")
    out = np.zeros_like(data)
    for i in range(h):
        for j in range(wd):
            cx = j - w.u[i, j].item()
            cy = i - w.v[i, j].item()
            wgt = np.exp(-((cx - xs) ** 2 + (cy - ys) ** 2) / (2.0 * variance))
            out[i, j] = (wgt * data).sum() / wgt.sum()
    return out


class TestWarpConfig:
    def test_negative_diffusion_rejected(self):
        with pytest.raises(InvalidConfigError):
            WarpConfig(diffusion=-0.1)

    def test_radius_lower_bound(self):
        with pytest.raises(InvalidConfigError):
            WarpConfig(truncation_radius=2)

    def test_variance(self):
        assert WarpConfig(diffusion=0.5, dt=1.0).variance == 1.0


class TestWarpGaussian:
    def test_identity_at_zero_velocity_zero_diffusion(self, rng):
        f = random_scalar(10, 10, rng)
        out = warp_gaussian(f, VectorField2D.zeros(10, 10), WarpConfig())
        assert (out.data - f.data).abs().max() < 1e-14

    def test_unit_integer_shift(self, rng):
        f = random_scalar(10, 12, rng)
        w = VectorField2D.constant(10, 12, 1.0, 0.0)
        out = warp_gaussian(f, w, WarpConfig())
        assert (out.data[:, 1:] - f.data[:, :-1]).abs().max() < 1e-14

    def test_impulse_blur_matches_dense_oracle(self):
        cfg = WarpConfig(diffusion=0.5, dt=1.0, truncation_radius=24)
        f = ScalarField2D.zeros(16, 16)
        f.data[8, 8] = 1.0
        w = VectorField2D.zeros(16, 16)
        out = warp_gaussian(f, w, cfg)
        oracle = dense_double_sum_oracle(f, w, cfg.variance)
        assert np.abs(out.data.numpy() - oracle).max() < 1e-10
        # second moments of the blurred impulse approximate variance 2 D dt
        img = out.data.numpy()
        ys, xs = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
        mass = img.sum()
        var_x = (img * (xs - 8.0) ** 2).sum() / mass
        assert var_x == pytest.approx(cfg.variance, rel=0.05)

    def test_matches_dense_oracle_random_cases(self, rng):
        for _ in range(8):
            diffusion = rng.uniform(0.3, 1.2)
            cfg = WarpConfig(diffusion=diffusion, dt=1.0,
                             truncation_radius=int(np.ceil(26 / math.sqrt(2 * diffusion))))
            f = random_scalar(16, 16, rng)
            w = VectorField2D(
                torch.as_tensor(rng.uniform(-2, 2, (16, 16))),
                torch.as_tensor(rng.uniform(-2, 2, (16, 16))),
            )
            out = warp_gaussian(f, w, cfg)
            oracle = dense_double_sum_oracle(f, w, cfg.variance)
            assert np.abs(out.data.numpy() - oracle).max() < 1e-12

    def test_kernel_normalization_via_constant_field(self, rng):
        # weights summing to one at every node is equivalent to exact
        # preservation of a constant field
        f = ScalarField2D.full(12, 12, 3.25)
        w = VectorField2D(
            torch.as_tensor(rng.uniform(-1.5, 1.5, (12, 12))),
            torch.as_tensor(rng.uniform(-1.5, 1.5, (12, 12))),
        )
        out = warp_gaussian(f, w, WarpConfig(diffusion=0.4))
        assert (out.data - 3.25).abs().max() < 1e-12

    def test_range_monotonicity(self, rng):
        f = ScalarField2D(torch.as_tensor(rng.uniform(0.2, 0.8, (12, 12))))
        w = VectorField2D(
            torch.as_tensor(rng.uniform(-2, 2, (12, 12))),
            torch.as_tensor(rng.uniform(-2, 2, (12, 12))),
        )
        for cfg in (WarpConfig(), WarpConfig(diffusion=0.6)):
            out = warp_gaussian(f, w, cfg)
            assert out.data.min() >= 0.2 - 1e-12
            assert out.data.max() <= 0.8 + 1e-12

    def test_semigroup_at_zero_velocity(self):
        h = w = 64
        f = scalar_from_fn(
            h, w,
            lambda x, y: torch.exp(-((x - 31.5) ** 2 + (y - 31.5) ** 2) / 120.0),
        )
        zero = VectorField2D.zeros(h, w)
        once = warp_gaussian(f, zero, WarpConfig(diffusion=0.5, dt=2.0, truncation_radius=6))
        half = WarpConfig(diffusion=0.5, dt=1.0, truncation_radius=6)
        twice = warp_gaussian(warp_gaussian(f, zero, half), zero, half)
        assert (once.data - twice.data).abs().max() < 1e-6

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            warp_gaussian(ScalarField2D.zeros(8, 8), VectorField2D.zeros(8, 9), WarpConfig())


class TestWarpBilinear:
    def test_identity(self, rng):
        f = random_scalar(9, 9, rng)
        out = warp_bilinear(f, VectorField2D.zeros(9, 9), "plus")
        assert (out.data - f.data).abs().max() < 1e-14

    def test_half_pixel_average_by_hand(self, rng):
        # weights at offset 0.5 are (0.5, 0.5) on the two straddled nodes
        f = random_scalar(8, 10, rng)
        w = VectorField2D.constant(8, 10, 0.5, 0.0)
        out = warp_bilinear(f, w, "plus")
        expected = 0.5 * (f.data[:, :-1] + f.data[:, 1:])
        assert (out.data[:, :-1] - expected).abs().max() < 1e-14

    def test_integer_shift_exact(self, rng):
        f = random_scalar(8, 10, rng)
        w = VectorField2D.constant(8, 10, 2.0, 0.0)
        out = warp_bilinear(f, w, "plus")
        assert (out.data[:, :-2] - f.data[:, 2:]).abs().max() < 1e-14

    def test_minus_direction_reverses(self, rng):
        f = random_scalar(8, 10, rng)
        w = VectorField2D.constant(8, 10, 1.0, 0.0)
        out = warp_bilinear(f, w, "minus")
        assert (out.data[:, 1:] - f.data[:, :-1]).abs().max() < 1e-14

    def test_clamped_outside_domain(self):
        f = scalar_from_fn(6, 6, lambda x, y: x)
        w = VectorField2D.constant(6, 6, 10.0, 0.0)
        out = warp_bilinear(f, w, "plus")
        assert (out.data - 5.0).abs().max() < 1e-14

    def test_bad_direction(self):
        with pytest.raises(InvalidConfigError):
            warp_bilinear(ScalarField2D.zeros(6, 6), VectorField2D.zeros(6, 6), "sideways")
