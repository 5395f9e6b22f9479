"""Grid containers and finite-difference operators.

All fields live on a collocated grid with unit (1 pixel) spacing. The
canonical first-derivative stencil is second-order central in the interior
and first-order one-sided on the boundary ring; every other differential
operator in the package is built by composing that single stencil, so
identities such as ``divergence(gradient(f)) == laplacian(f)`` hold at the
stencil level, not merely up to truncation error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import DerivativeOrderError, DimensionMismatchError, GridTooSmallError

DTYPE = torch.float64

#: Minimum extent (per axis) for any first-derivative stencil.
MIN_SIZE = 3

#: Highest supported total derivative order for partial_derivative.
MAX_DERIVATIVE_ORDER = 4


def _as_tensor(data) -> torch.Tensor:
    t = torch.as_tensor(data, dtype=DTYPE)
    return t


@dataclass(frozen=True)
class ScalarField2D:
    """A height x width grid of real samples (image intensity, pressure, ...)."""

    data: torch.Tensor

    def __post_init__(self):
        object.__setattr__(self, "data", _as_tensor(self.data))
        if self.data.dim() != 2:
            raise DimensionMismatchError(
                f"scalar field data must be 2-d, got shape {tuple(self.data.shape)}"
            )

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def zeros(cls, height: int, width: int) -> "ScalarField2D":
        return cls(torch.zeros(height, width, dtype=DTYPE))

    @classmethod
    def full(cls, height: int, width: int, value: float) -> "ScalarField2D":
        return cls(torch.full((height, width), float(value), dtype=DTYPE))

    def to_numpy(self) -> np.ndarray:
        return self.data.detach().cpu().numpy().copy()

    def validate(self) -> list[str]:
        """Return a list of invariant violations (empty when clean)."""
        issues = []
        bad = (~torch.isfinite(self.data)).sum().item()
        if bad:
            issues.append(f"{bad} non-finite samples")
        return issues


@dataclass(frozen=True)
class VectorField2D:
    """Two co-located component planes (u, v) in pixels per frame."""

    u: torch.Tensor
    v: torch.Tensor

    def __post_init__(self):
        object.__setattr__(self, "u", _as_tensor(self.u))
        object.__setattr__(self, "v", _as_tensor(self.v))
        if self.u.dim() != 2 or self.u.shape != self.v.shape:
            raise DimensionMismatchError(
                f"component planes must share a 2-d shape, got "
                f"{tuple(self.u.shape)} and {tuple(self.v.shape)}"
            )

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def zeros(cls, height: int, width: int) -> "VectorField2D":
        return cls(
            torch.zeros(height, width, dtype=DTYPE),
            torch.zeros(height, width, dtype=DTYPE),
        )

    @classmethod
    def constant(cls, height: int, width: int, cu: float, cv: float) -> "VectorField2D":
        return cls(
            torch.full((height, width), float(cu), dtype=DTYPE),
            torch.full((height, width), float(cv), dtype=DTYPE),
        )

    def to_numpy(self) -> np.ndarray:
        """Stack components into an (h, w, 2) array."""
        return np.stack(
            [self.u.detach().cpu().numpy(), self.v.detach().cpu().numpy()], axis=-1
        )

    def validate(self) -> list[str]:
        issues = []
        for name, plane in (("u", self.u), ("v", self.v)):
            bad = (~torch.isfinite(plane)).sum().item()
            if bad:
                issues.append(f"{bad} non-finite samples in {name}")
        return issues


def require_same_shape(a, b, what="fields"):
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def _require_min_size(h: int, w: int):
    if h < MIN_SIZE or w < MIN_SIZE:
        raise GridTooSmallError(
            f"stencils need at least {MIN_SIZE}x{MIN_SIZE} nodes, got {h}x{w}"
        )


# ---------------------------------------------------------------------------
# Canonical tensor-level stencils. _dx/_dy are the single source of truth;
# everything differential in the package goes through them.
# ---------------------------------------------------------------------------


def _dx(f: torch.Tensor) -> torch.Tensor:
    """d/dx along the last axis: central interior, one-sided edge columns."""
    g = torch.empty_like(f)
    g[..., :, 1:-1] = 0.5 * (f[..., :, 2:] - f[..., :, :-2])
    g[..., :, 0] = f[..., :, 1] - f[..., :, 0]
    g[..., :, -1] = f[..., :, -1] - f[..., :, -2]
    return g


def _dy(f: torch.Tensor) -> torch.Tensor:
    """d/dy along the second-to-last axis, same closure as _dx."""
    g = torch.empty_like(f)
    g[..., 1:-1, :] = 0.5 * (f[..., 2:, :] - f[..., :-2, :])
    g[..., 0, :] = f[..., 1, :] - f[..., 0, :]
    g[..., -1, :] = f[..., -1, :] - f[..., -2, :]
    return g


def _dx_t(f: torch.Tensor) -> torch.Tensor:
    """Transpose of _dx (plain Euclidean adjoint), needed by least-squares solves."""
    g = torch.zeros_like(f)
    g[..., :, 0] += -f[..., :, 0]
    g[..., :, 1] += f[..., :, 0]
    g[..., :, :-2] += -0.5 * f[..., :, 1:-1]
    g[..., :, 2:] += 0.5 * f[..., :, 1:-1]
    g[..., :, -2] += -f[..., :, -1]
    g[..., :, -1] += f[..., :, -1]
    return g


def _dy_t(f: torch.Tensor) -> torch.Tensor:
    g = torch.zeros_like(f)
    g[..., 0, :] += -f[..., 0, :]
    g[..., 1, :] += f[..., 0, :]
    g[..., :-2, :] += -0.5 * f[..., 1:-1, :]
    g[..., 2:, :] += 0.5 * f[..., 1:-1, :]
    g[..., -2, :] += -f[..., -1, :]
    g[..., -1, :] += f[..., -1, :]
    return g


def _laplacian(f: torch.Tensor) -> torch.Tensor:
    """div(grad(f)) built from the canonical stencil pair."""
    return _dx(_dx(f)) + _dy(_dy(f))


def quadrature_weights(h: int, w: int) -> torch.Tensor:
    """Trapezoidal node weights; the inner product under which the canonical
    stencil satisfies summation-by-parts (adjoint = -stencil away from the
    boundary ring)."""
    wx = torch.ones(w, dtype=DTYPE)
    wx[0] = wx[-1] = 0.5
    wy = torch.ones(h, dtype=DTYPE)
    wy[0] = wy[-1] = 0.5
    return wy[:, None] * wx[None, :]


def interior(t: torch.Tensor, ring: int = 2) -> torch.Tensor:
    """Crop `ring` pixels off every side (view, not copy)."""
    if ring == 0:
        return t
    return t[..., ring:-ring, ring:-ring]


# ---------------------------------------------------------------------------
# Public field-level operators.
# ---------------------------------------------------------------------------


def gradient(f: ScalarField2D) -> VectorField2D:
    """Per-node (df/dx, df/dy); exact for affine fields in the interior."""
    _require_min_size(f.height, f.width)
    return VectorField2D(_dx(f.data), _dy(f.data))


def divergence(w: VectorField2D) -> ScalarField2D:
    """du/dx + dv/dy with the same stencil policy as gradient."""
    _require_min_size(w.height, w.width)
    return ScalarField2D(_dx(w.u) + _dy(w.v))


def curl(w: VectorField2D) -> ScalarField2D:
    """Scalar vorticity dv/dx - du/dy."""
    _require_min_size(w.height, w.width)
    return ScalarField2D(_dx(w.v) - _dy(w.u))


def laplacian(f: ScalarField2D) -> ScalarField2D:
    """divergence(gradient(f)), composed from the canonical stencils.

    Keeping the composition (rather than an independent compact stencil)
    makes div(grad f) == laplacian(f) exact by construction. The composed
    stencil is pure central-central only at depth >= 2 from the boundary;
    second-order identities should be checked on that crop.
    """
    _require_min_size(f.height, f.width)
    return ScalarField2D(_laplacian(f.data))


def partial_derivative(f: ScalarField2D, i: int, j: int) -> ScalarField2D:
    """Mixed derivative d^(i+j) f / dx^i dy^j by repeated stencil application.

    (i, j) = (0, 0) returns the field unchanged.
    """
    if i < 0 or j < 0:
        raise DerivativeOrderError(f"derivative orders must be >= 0, got ({i}, {j})")
    if i + j > MAX_DERIVATIVE_ORDER:
        raise DerivativeOrderError(
            f"total order {i + j} exceeds the supported maximum {MAX_DERIVATIVE_ORDER}"
        )
    if i + j == 0:
        return ScalarField2D(f.data.clone())
    if (i > 0 or j > 0) and (f.height < MIN_SIZE or f.width < MIN_SIZE):
        raise GridTooSmallError(
            f"grid {f.height}x{f.width} too small for a composed stencil"
        )
    if f.width < 2 * i + 1 and i > 0:
        raise GridTooSmallError(f"width {f.width} too small for x-order {i}")
    if f.height < 2 * j + 1 and j > 0:
        raise GridTooSmallError(f"height {f.height} too small for y-order {j}")
    t = f.data
    for _ in range(i):
        t = _dx(t)
    for _ in range(j):
        t = _dy(t)
    return ScalarField2D(t)


def _partial_tensor(t: torch.Tensor, i: int, j: int) -> torch.Tensor:
    """Tensor-level mixed derivative (no container overhead, autograd-safe)."""
    for _ in range(i):
        t = _dx(t)
    for _ in range(j):
        t = _dy(t)
    return t
