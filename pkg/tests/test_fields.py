import math

import numpy as np
import pytest
import torch

from fluidest.errors import DerivativeOrderError, DimensionMismatchError, GridTooSmallError
from fluidest.fields import (
    ScalarField2D,
    VectorField2D,
    curl,
    divergence,
    gradient,
    laplacian,
    partial_derivative,
)

from conftest import random_scalar, random_vector, scalar_from_fn, vector_from_fn


def interior_np(a, ring=1):
    return a[ring:-ring, ring:-ring]


class TestContainers:
    def test_scalar_shape_and_roundtrip(self):
        f = ScalarField2D(np.arange(12.0).reshape(3, 4))
        assert (f.height, f.width) == (3, 4)
        np.testing.assert_array_equal(f.to_numpy(), np.arange(12.0).reshape(3, 4))

    def test_vector_plane_mismatch_rejected(self):
        with pytest.raises(DimensionMismatchError):
            VectorField2D(torch.zeros(3, 4), torch.zeros(4, 3))

    def test_validate_flags_nonfinite(self):
        data = torch.zeros(4, 4)
        data[1, 2] = float("nan")
        assert ScalarField2D(data).validate()
        assert not ScalarField2D(torch.zeros(4, 4)).validate()


class TestGradient:
    def test_constant_field_zero_everywhere(self):
        g = gradient(ScalarField2D.full(6, 7, 7.0))
        assert g.u.abs().max() == 0
        assert g.v.abs().max() == 0

    def test_affine_exact_interior(self):
        g = gradient(scalar_from_fn(6, 8, lambda x, y: x))
        np.testing.assert_allclose(interior_np(g.u.numpy()), 1.0, atol=1e-14)
        np.testing.assert_allclose(interior_np(g.v.numpy()), 0.0, atol=1e-14)

    def test_quadratic_exact_by_hand_oracle(self):
        # central difference of x^2 at x = 2: (f(3) - f(1)) / 2 = (9 - 1) / 2
        f = scalar_from_fn(5, 6, lambda x, y: x * x)
        g = gradient(f)
        assert g.u[2, 2].item() == pytest.approx((9.0 - 1.0) / 2.0, abs=1e-14)
        assert g.u[2, 2].item() == pytest.approx(4.0, abs=1e-14)

    def test_too_small_grid_rejected(self):
        with pytest.raises(GridTooSmallError):
            gradient(ScalarField2D.zeros(2, 5))


class TestDivergence:
    def test_constant_field(self):
        w = VectorField2D.constant(5, 5, 3.0, -2.0)
        assert divergence(w).data.abs().max() == 0

    def test_identity_field_gives_two(self):
        w = vector_from_fn(6, 6, lambda x, y: x, lambda x, y: y)
        np.testing.assert_allclose(interior_np(divergence(w).data.numpy()), 2.0, atol=1e-13)

    def test_rotation_solenoidal(self):
        w = vector_from_fn(7, 7, lambda x, y: -y, lambda x, y: x)
        np.testing.assert_allclose(interior_np(divergence(w).data.numpy()), 0.0, atol=1e-13)


class TestCurl:
    def test_rotation_by_hand(self):
        # dv/dx = 1 and du/dy = -1 from central differences on affine planes
        w = vector_from_fn(7, 7, lambda x, y: -y, lambda x, y: x)
        np.testing.assert_allclose(interior_np(curl(w).data.numpy()), 2.0, atol=1e-13)

    def test_constant_zero(self):
        assert curl(VectorField2D.constant(5, 5, 1.5, 2.5)).data.abs().max() == 0

    def test_shear_by_hand(self):
        w = vector_from_fn(6, 6, lambda x, y: y, lambda x, y: torch.zeros_like(x))
        np.testing.assert_allclose(interior_np(curl(w).data.numpy()), -1.0, atol=1e-13)


class TestLaplacian:
    def test_affine_zero(self):
        f = scalar_from_fn(6, 6, lambda x, y: 2.0 * x - 3.0 * y + 1.0)
        assert laplacian(f).data.abs().max() < 1e-13

    def test_paraboloid_deep_interior(self):
        # composed central stencil: (f(x+2) - 2f + f(x-2))/4 per axis = 2 + 2
        f = scalar_from_fn(9, 9, lambda x, y: x * x + y * y)
        lap = laplacian(f).data.numpy()
        np.testing.assert_allclose(lap[2:-2, 2:-2], 4.0, atol=1e-12)

    def test_sine_matches_analytic_second_derivative(self):
        w = 64
        k = 2.0 * math.pi / w
        f = scalar_from_fn(8, w, lambda x, y: torch.sin(k * x))
        lap = laplacian(f).data[2:-2, 2:-2]
        analytic = -(k**2) * f.data[2:-2, 2:-2]
        rel = ((lap - analytic).abs().max() / analytic.abs().max()).item()
        # wide-stencil symbol sin^2(k) vs k^2: relative error ~ k^2/3
        assert rel < k * k
        assert rel > 0


class TestPartialDerivative:
    def test_order_zero_identity(self, rng):
        f = random_scalar(5, 5, rng)
        out = partial_derivative(f, 0, 0)
        assert torch.equal(out.data, f.data)

    def test_bilinear_mixed_derivative(self):
        f = scalar_from_fn(7, 7, lambda x, y: x * y)
        out = partial_derivative(f, 1, 1).data.numpy()
        np.testing.assert_allclose(interior_np(out), 1.0, atol=1e-13)

    def test_constant_any_order_zero(self):
        f = ScalarField2D.full(9, 9, 3.0)
        for i, j in [(1, 0), (0, 2), (2, 2), (1, 3)]:
            assert partial_derivative(f, i, j).data.abs().max() == 0

    def test_order_too_high_rejected(self):
        with pytest.raises(DerivativeOrderError):
            partial_derivative(ScalarField2D.zeros(16, 16), 3, 2)

    def test_grid_too_small_for_composed_stencil(self):
        with pytest.raises(GridTooSmallError):
            partial_derivative(ScalarField2D.zeros(3, 3), 2, 0)


class TestOperatorIdentities:
    def test_linearity_all_operators(self, rng):
        f = random_scalar(8, 9, rng)
        g = random_scalar(8, 9, rng)
        a, b = 2.7, -1.3
        combo = ScalarField2D(a * f.data + b * g.data)
        for op in (gradient, laplacian, lambda s: partial_derivative(s, 1, 1)):
            lhs = op(combo)
            rhs_f, rhs_g = op(f), op(g)
            if isinstance(lhs, VectorField2D):
                assert (lhs.u - (a * rhs_f.u + b * rhs_g.u)).abs().max() < 1e-12
                assert (lhs.v - (a * rhs_f.v + b * rhs_g.v)).abs().max() < 1e-12
            else:
                assert (lhs.data - (a * rhs_f.data + b * rhs_g.data)).abs().max() < 1e-12
        wf = random_vector(8, 9, rng)
        wg = random_vector(8, 9, rng)
        wcombo = VectorField2D(a * wf.u + b * wg.u, a * wf.v + b * wg.v)
        for op in (divergence, curl):
            lhs = op(wcombo).data
            rhs = a * op(wf).data + b * op(wg).data
            assert (lhs - rhs).abs().max() < 1e-12

    def test_div_grad_equals_laplacian_exactly(self, rng):
        f = random_scalar(10, 11, rng)
        composed = divergence(gradient(f)).data
        assert torch.equal(composed, laplacian(f).data)

    def test_curl_grad_zero_everywhere(self, rng):
        # d/dx and d/dy act on different axes, so they commute exactly
        f = random_scalar(10, 11, rng)
        assert curl(gradient(f)).data.abs().max() < 1e-13

    def test_outputs_finite_for_random_inputs(self, rng):
        for _ in range(5):
            f = random_scalar(7, 7, rng, scale=100.0)
            w = random_vector(7, 7, rng, scale=100.0)
            assert not laplacian(f).validate()
            assert not gradient(f).validate()
            assert not divergence(w).validate()
            assert not curl(w).validate()
