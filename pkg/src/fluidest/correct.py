"""Physical corrector: blends the optical estimate with a physically
advanced tentative velocity through a learned sigmoid gate, plus a learnable
linear combination of spatial derivatives of the estimate increment that
models dynamics the splitting misses. Trained unsupervised on a temporal
vorticity-consistency loss with a divergence penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import (
    DerivativeOrderError,
    InvalidConfigError,
    NonFiniteLossError,
)
from .fields import (
    DTYPE,
    MAX_DERIVATIVE_ORDER,
    ScalarField2D,
    VectorField2D,
    _dx,
    _dy,
    _partial_tensor,
    interior,
    require_same_shape,
)
from .predict import CROP_RING, charbonnier
from .sim import advect_diffuse, step_vorticity


def gamma_index_pairs(order: int) -> list[tuple[int, int]]:
    """Canonical (i, j) enumeration of derivative indices with i + j < order;
    serialization and coefficient layout rely on this ordering."""
    return [(i, s - i) for s in range(order) for i in range(s, -1, -1)]


@dataclass(frozen=True)
class GateParams:
    """Two 2-in/2-out convolution stencils plus per-component biases."""

    w_est: torch.Tensor  # (2, 2, k, k)
    w_phys: torch.Tensor  # (2, 2, k, k)
    bias: torch.Tensor  # (2,)

    def __post_init__(self):
        object.__setattr__(self, "w_est", torch.as_tensor(self.w_est, dtype=DTYPE))
        object.__setattr__(self, "w_phys", torch.as_tensor(self.w_phys, dtype=DTYPE))
        object.__setattr__(self, "bias", torch.as_tensor(self.bias, dtype=DTYPE))
        for name, t in (("w_est", self.w_est), ("w_phys", self.w_phys)):
            if t.shape[:2] != (2, 2) or t.dim() != 4 or t.shape[2] != t.shape[3]:
                raise InvalidConfigError(
                    f"{name} must have shape (2, 2, k, k), got {tuple(t.shape)}"
                )
            if t.shape[2] % 2 == 0:
                raise InvalidConfigError(f"{name} stencil size must be odd")
        if self.bias.shape != (2,):
            raise InvalidConfigError(f"bias must have shape (2,), got {tuple(self.bias.shape)}")
        for t in (self.w_est, self.w_phys, self.bias):
            if not torch.isfinite(t.detach()).all():
                raise InvalidConfigError("gate parameters must be finite")

    @property
    def kernel_size(self) -> int:
        return self.w_est.shape[2]

    @classmethod
    def zeros(cls, kernel_size: int = 3) -> "GateParams":
        k = kernel_size
        return cls(
            torch.zeros(2, 2, k, k, dtype=DTYPE),
            torch.zeros(2, 2, k, k, dtype=DTYPE),
            torch.zeros(2, dtype=DTYPE),
        )


@dataclass(frozen=True)
class GammaParams:
    """Coefficients c_{i,j} of the learnable differential operator, one real
    per derivative index and output component, indices with i + j < order."""

    order: int
    coeffs: torch.Tensor  # (2, n_terms)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", torch.as_tensor(self.coeffs, dtype=DTYPE))
        if self.order < 1:
            raise InvalidConfigError(f"order must be >= 1, got {self.order}")
        if self.order - 1 > MAX_DERIVATIVE_ORDER:
            raise DerivativeOrderError(
                f"order {self.order} needs derivatives beyond the supported "
                f"maximum total order {MAX_DERIVATIVE_ORDER}"
            )
        n = self.n_terms
        if self.coeffs.shape != (2, n):
            raise InvalidConfigError(
                f"coeffs must have shape (2, {n}) for order {self.order}, "
                f"got {tuple(self.coeffs.shape)}"
            )
        if not torch.isfinite(self.coeffs.detach()).all():
            raise InvalidConfigError("gamma coefficients must be finite")

    @property
    def n_terms(self) -> int:
        return self.order * (self.order + 1) // 2

    @property
    def index_pairs(self) -> list[tuple[int, int]]:
        return gamma_index_pairs(self.order)

    @classmethod
    def zeros(cls, order: int = 3) -> "GammaParams":
        n = order * (order + 1) // 2
        return cls(order, torch.zeros(2, n, dtype=DTYPE))


@dataclass(frozen=True)
class CorrectorParams:
    """Gate and differential-residual parameters plus the physical constants
    used by the tentative advection-diffusion step."""

    gate: GateParams
    gamma: GammaParams
    nu: float = 0.05
    dt: float = 1.0

    def __post_init__(self):
        if self.nu <= 0:
            raise InvalidConfigError(f"nu must be > 0, got {self.nu}")
        if self.dt <= 0:
            raise InvalidConfigError(f"dt must be > 0, got {self.dt}")

    @classmethod
    def zeros(cls, kernel_size: int = 3, order: int = 3, nu: float = 0.05, dt: float = 1.0):
        """Safe starting point: the untrained corrector averages the optical
        and physical estimates (gate at 0.5, zero differential residual)."""
        return cls(GateParams.zeros(kernel_size), GammaParams.zeros(order), nu, dt)


def _conv_same(planes: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    pad = weight.shape[-1] // 2
    return F.conv2d(planes[None], weight, padding=pad)[0]


def gate(
    u_est: VectorField2D, u_phys: VectorField2D, params: GateParams
) -> VectorField2D:
    """Per-component blending factor K = sigmoid(W_e * u_est + W_p * u_phys + b),
    strictly inside (0, 1)."""
    require_same_shape(u_est, u_phys, "estimated and physical velocities")
    est = torch.stack([u_est.u, u_est.v])
    phys = torch.stack([u_phys.u, u_phys.v])
    z = (
        _conv_same(est, params.w_est)
        + _conv_same(phys, params.w_phys)
        + params.bias[:, None, None]
    )
    k = torch.sigmoid(z)
    return VectorField2D(k[0], k[1])


def gamma_residual(
    u_est: VectorField2D, u_prev: VectorField2D, params: GammaParams
) -> VectorField2D:
    """Learned residual: sum of c_{i,j} d^(i+j)(u_est - u_prev)/dx^i dy^j,
    applied per component."""
    require_same_shape(u_est, u_prev, "estimate and previous velocity")
    psi_u = u_est.u - u_prev.u
    psi_v = u_est.v - u_prev.v
    out_u = torch.zeros_like(psi_u)
    out_v = torch.zeros_like(psi_v)
    for idx, (i, j) in enumerate(params.index_pairs):
        du = _partial_tensor(psi_u, i, j)
        dv = _partial_tensor(psi_v, i, j)
        out_u = out_u + params.coeffs[0, idx] * du
        out_v = out_v + params.coeffs[1, idx] * dv
    return VectorField2D(out_u, out_v)


def correct_step(
    u_prev: VectorField2D, u_est: VectorField2D, params: CorrectorParams
) -> VectorField2D:
    """Corrected velocity u = u* + K (u_est - u*) + Phi(u_prev, u_est), with
    u* the tentative advection-diffusion advance of u_prev."""
    require_same_shape(u_prev, u_est, "previous and estimated velocities")
    u_star = advect_diffuse(u_prev, params.nu, params.dt)
    k = gate(u_est, u_star, params.gate)
    phi = gamma_residual(u_est, u_prev, params.gamma)
    out_u = u_star.u + k.u * (u_est.u - u_star.u) + phi.u
    out_v = u_star.v + k.v * (u_est.v - u_star.v) + phi.v
    return VectorField2D(out_u, out_v)


def correct_step_reference(
    u_prev: VectorField2D, u_est: VectorField2D, params: CorrectorParams
) -> VectorField2D:
    """Algebraically equivalent assembly K u_est + (1 - K) u* + Phi, kept as
    an independent code path for the scheme-identity check."""
    u_star = advect_diffuse(u_prev, params.nu, params.dt)
    k = gate(u_est, u_star, params.gate)
    phi = gamma_residual(u_est, u_prev, params.gamma)
    out_u = k.u * u_est.u + (1.0 - k.u) * u_star.u + phi.u
    out_v = k.v * u_est.v + (1.0 - k.v) * u_star.v + phi.v
    return VectorField2D(out_u, out_v)


def corrector_loss(
    u_t: VectorField2D,
    omega_prev: ScalarField2D,
    u_prev: VectorField2D,
    lambda_div: float,
    nu: float,
    dt: float,
    gamma: float = 0.45,
    eps: float = 1e-3,
) -> torch.Tensor:
    """Temporal vorticity consistency plus divergence penalty.

    The previous vorticity is advanced by one advection-diffusion warp and
    compared (Charbonnier, interior mean) with the curl of the corrected
    velocity; the divergence of the corrected velocity is penalized the same
    way, weighted by lambda_div.
    """
    require_same_shape(u_t, u_prev, "corrected and previous velocities")
    require_same_shape(omega_prev, u_t, "vorticity and velocity")
    omega_hat = step_vorticity(omega_prev, u_prev, nu, dt)
    omega_t = _dx(u_t.v) - _dy(u_t.u)
    div_t = _dx(u_t.u) + _dy(u_t.v)
    temporal = interior(charbonnier(omega_hat.data - omega_t, gamma, eps), CROP_RING).mean()
    div_term = interior(charbonnier(div_t, gamma, eps), CROP_RING).mean()
    return temporal + lambda_div * div_term


def _curl_field(w: VectorField2D) -> ScalarField2D:
    return ScalarField2D(_dx(w.v) - _dy(w.u))


def train_corrector(
    flows_pred,
    params0: CorrectorParams,
    epochs: int = 200,
    step: float = 1e-2,
    lambda_div: float = 0.05,
) -> tuple[CorrectorParams, list[float]]:
    """Fit gate and differential-residual parameters by gradient descent on
    the mean corrector loss over a time-resolved sequence of predictor flows.

    The first frame has no previous corrected velocity, so the sequence
    bootstraps from the predictor output. Previous corrected velocities are
    recomputed each epoch with the current parameters but treated as
    constants (no backpropagation through time). Returns the parameters with
    the lowest evaluated loss and the per-epoch loss curve.
    """
    flows_pred = list(flows_pred)
    if len(flows_pred) < 2:
        raise InvalidConfigError(
            f"need at least 2 predictor flows (3 frames), got {len(flows_pred)}"
        )
    if step < 0:
        raise InvalidConfigError(f"step must be >= 0, got {step}")

    w_est = params0.gate.w_est.clone().requires_grad_(True)
    w_phys = params0.gate.w_phys.clone().requires_grad_(True)
    bias = params0.gate.bias.clone().requires_grad_(True)
    coeffs = params0.gamma.coeffs.clone().requires_grad_(True)
    leaves = [w_est, w_phys, bias, coeffs]
    opt = torch.optim.Adam(leaves, lr=step) if step > 0 else None

    def current_params():
        return CorrectorParams(
            GateParams(w_est, w_phys, bias),
            GammaParams(params0.gamma.order, coeffs),
            params0.nu,
            params0.dt,
        )

    curve: list[float] = []
    best = None
    best_loss = float("inf")
    for _ in range(max(1, epochs)):
        params = current_params()
        u_prev = flows_pred[0]
        total = None
        for t in range(1, len(flows_pred)):
            u_t = correct_step(u_prev, flows_pred[t], params)
            loss_t = corrector_loss(
                u_t, _curl_field(u_prev), u_prev, lambda_div, params0.nu, params0.dt
            )
            if not torch.isfinite(loss_t):
                raise NonFiniteLossError(
                    f"non-finite corrector loss at frame {t}",
                    context={"frame": t},
                )
            total = loss_t if total is None else total + loss_t
            u_prev = VectorField2D(u_t.u.detach(), u_t.v.detach())
        epoch_loss = total / (len(flows_pred) - 1)
        value = float(epoch_loss)
        curve.append(value)
        if value < best_loss:
            best_loss = value
            best = [leaf.detach().clone() for leaf in leaves]
        if opt is not None:
            opt.zero_grad()
            epoch_loss.backward()
            opt.step()

    return (
        CorrectorParams(
            GateParams(best[0], best[1], best[2]),
            GammaParams(params0.gamma.order, best[3]),
            params0.nu,
            params0.dt,
        ),
        curve,
    )
