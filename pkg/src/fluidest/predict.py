"""Bidirectional variational optical flow for fluid motion.

The estimator minimizes a discrete energy with three parts: a robust
(generalized Charbonnier) photometric term on both warping directions, a
smoothness penalty on the flow gradients, and a divergence penalty that
encodes incompressibility. Optimization is coarse-to-fine with an
adaptive-moment gradient method at each pyramid level.

A separate quadratic mode (linearized data term, squared regularizers)
exists for verification: its minimizer satisfies a Stokes-form stationarity
equation, which `stokes_residual` evaluates with the shared stencils.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import InvalidConfigError, NonFiniteLossError
from .fields import (
    DTYPE,
    ScalarField2D,
    VectorField2D,
    _dx,
    _dx_t,
    _dy,
    _dy_t,
    interior,
    require_same_shape,
)
from .warp import sample_bilinear

CROP_RING = 2  # losses exclude this border ring (one-sided stencils, clamped sampling)


@dataclass(frozen=True)
class PredictorConfig:
    lambda_smooth: float = 0.05
    lambda_div: float = 0.05
    gamma: float = 0.45
    eps: float = 1e-3
    levels: int = 3
    iters: int = 300
    step: float = 0.02
    betas: tuple[float, float] = (0.9, 0.999)

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise InvalidConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.eps <= 0:
            raise InvalidConfigError(f"eps must be > 0, got {self.eps}")
        if self.lambda_smooth < 0 or self.lambda_div < 0:
            raise InvalidConfigError("regularizer weights must be >= 0")
        if self.levels < 1:
            raise InvalidConfigError(f"levels must be >= 1, got {self.levels}")
        if self.iters < 1:
            raise InvalidConfigError(f"iters must be >= 1, got {self.iters}")
        if self.step <= 0:
            raise InvalidConfigError(f"step must be > 0, got {self.step}")
        for b in self.betas:
            if not (0.0 < b < 1.0):
                raise InvalidConfigError(f"moment decays must be in (0, 1), got {self.betas}")

    @property
    def mu(self) -> float:
        """Identification constant of the continuous energy; the implemented
        smoothness weight plays that role."""
        return self.lambda_smooth


@dataclass(frozen=True)
class FlowPair:
    """Forward and backward displacement estimates for one image pair."""

    forward: VectorField2D
    backward: VectorField2D

    def __post_init__(self):
        require_same_shape(self.forward, self.backward, "forward and backward flows")

    @property
    def shape(self):
        return self.forward.shape

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowPair":
        return cls(VectorField2D.zeros(height, width), VectorField2D.zeros(height, width))


def charbonnier(x, gamma: float = 0.45, eps: float = 1e-3):
    """Generalized Charbonnier penalty (x^2 + eps^2)^gamma; even, monotone in |x|."""
    if eps <= 0:
        raise InvalidConfigError(f"eps must be > 0, got {eps}")
    if isinstance(x, torch.Tensor):
        return (x * x + eps * eps) ** gamma
    return float((x * x + eps * eps) ** gamma)


def _charb_sq(sq, gamma, eps):
    # Charbonnier applied to a vector magnitude, taking the squared norm
    # directly so the expression stays smooth at zero.
    return (sq + eps * eps) ** gamma


def _grid(h, w):
    return torch.meshgrid(
        torch.arange(h, dtype=DTYPE), torch.arange(w, dtype=DTYPE), indexing="ij"
    )


def _photometric(i1, i2, uf_u, uf_v, ub_u, ub_v, cfg):
    h, w = i1.shape
    yy, xx = _grid(h, w)
    i1_hat = sample_bilinear(i2, xx + uf_u, yy + uf_v)
    i2_hat = sample_bilinear(i1, xx + ub_u, yy + ub_v)
    t1 = interior(charbonnier(i1 - i1_hat, cfg.gamma, cfg.eps), CROP_RING).mean()
    t2 = interior(charbonnier(i2 - i2_hat, cfg.gamma, cfg.eps), CROP_RING).mean()
    return t1 + t2


def _smoothness(components, cfg):
    total = None
    for c in components:
        sq = _dx(c) ** 2 + _dy(c) ** 2
        term = interior(_charb_sq(sq, cfg.gamma, cfg.eps), CROP_RING).mean()
        total = term if total is None else total + term
    return total


def _divergence_penalty(flows, cfg):
    total = None
    for fu, fv in flows:
        div = _dx(fu) + _dy(fv)
        term = interior(charbonnier(div, cfg.gamma, cfg.eps), CROP_RING).mean()
        total = term if total is None else total + term
    return total


def photometric_loss(
    i1: ScalarField2D, i2: ScalarField2D, flows: FlowPair, cfg: PredictorConfig
) -> torch.Tensor:
    """Bidirectional Charbonnier photometric penalty, averaged over the
    interior crop. Differentiable in the flows."""
    require_same_shape(i1, i2, "images")
    require_same_shape(i1, flows.forward, "image and flow")
    return _photometric(
        i1.data, i2.data,
        flows.forward.u, flows.forward.v,
        flows.backward.u, flows.backward.v,
        cfg,
    )


def regularizer_loss(flows: FlowPair, cfg: PredictorConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """(smoothness, divergence) penalties: Charbonnier of per-component flow
    gradient magnitudes and of the flow divergences, both directions."""
    f, b = flows.forward, flows.backward
    smooth = _smoothness([f.u, f.v, b.u, b.v], cfg)
    div = _divergence_penalty([(f.u, f.v), (b.u, b.v)], cfg)
    return smooth, div


def total_predictor_loss(
    i1: ScalarField2D, i2: ScalarField2D, flows: FlowPair, cfg: PredictorConfig
) -> torch.Tensor:
    """Weighted sum: photometric + lambda_s * smoothness + lambda_d * divergence."""
    smooth, div = regularizer_loss(flows, cfg)
    return (
        photometric_loss(i1, i2, flows, cfg)
        + cfg.lambda_smooth * smooth
        + cfg.lambda_div * div
    )


def _total_tensor(i1, i2, uf, ub, cfg):
    photo = _photometric(i1, i2, uf[0], uf[1], ub[0], ub[1], cfg)
    smooth = _smoothness([uf[0], uf[1], ub[0], ub[1]], cfg)
    div = _divergence_penalty([(uf[0], uf[1]), (ub[0], ub[1])], cfg)
    return photo + cfg.lambda_smooth * smooth + cfg.lambda_div * div


# ---------------------------------------------------------------------------
# Coarse-to-fine variational estimation.
# ---------------------------------------------------------------------------

_BLUR = None


def _blur_kernel():
    global _BLUR
    if _BLUR is None:
        k = torch.exp(-torch.arange(-2, 3, dtype=DTYPE) ** 2 / 2.0)
        _BLUR = k / k.sum()
    return _BLUR


def _downsample(img: torch.Tensor) -> torch.Tensor:
    """Anti-aliased factor-2 decimation: Gaussian blur then subsample."""
    k = _blur_kernel()
    p = F.pad(img[None, None], (2, 2, 2, 2), mode="reflect")
    p = F.conv2d(p, k.view(1, 1, 1, 5))
    p = F.conv2d(p, k.view(1, 1, 5, 1))[0, 0]
    return p[::2, ::2]


def _upsample_flow(flow: torch.Tensor, size) -> torch.Tensor:
    up = F.interpolate(flow[None], size=size, mode="bilinear", align_corners=False)[0]
    return 2.0 * up


def estimate_variational(
    i1: ScalarField2D, i2: ScalarField2D, cfg: PredictorConfig | None = None
) -> FlowPair:
    """Coarse-to-fine minimization of the total predictor loss; both flows
    are optimized jointly by Adam at every pyramid level, then upsampled
    (bilinear, values doubled) to seed the next level."""
    cfg = cfg or PredictorConfig()
    require_same_shape(i1, i2, "images")
    if i1.height < 16 or i1.width < 16:
        raise InvalidConfigError(
            f"images must be at least 16x16, got {i1.height}x{i1.width}"
        )
    for img in (i1, i2):
        lo, hi = img.data.min().item(), img.data.max().item()
        if lo < -1e-9 or hi > 1.0 + 1e-9:
            raise InvalidConfigError(
                f"image samples must lie in [0, 1], got range [{lo:.3g}, {hi:.3g}]"
            )

    pyramid = [(i1.data, i2.data)]
    for _ in range(cfg.levels - 1):
        a, b = pyramid[-1]
        pyramid.append((_downsample(a), _downsample(b)))

    uf = ub = None
    for level in range(cfg.levels - 1, -1, -1):
        a, b = pyramid[level]
        h, w = a.shape
        if uf is None:
            uf = torch.zeros(2, h, w, dtype=DTYPE, requires_grad=True)
            ub = torch.zeros(2, h, w, dtype=DTYPE, requires_grad=True)
        else:
            uf = _upsample_flow(uf.detach(), (h, w)).requires_grad_(True)
            ub = _upsample_flow(ub.detach(), (h, w)).requires_grad_(True)
        opt = torch.optim.Adam([uf, ub], lr=cfg.step, betas=cfg.betas)
        for it in range(cfg.iters):
            opt.zero_grad()
            loss = _total_tensor(a, b, uf, ub, cfg)
            if not torch.isfinite(loss):
                raise NonFiniteLossError(
                    f"non-finite predictor loss at pyramid level {level}, "
                    f"iteration {it}",
                    context={"level": level, "iteration": it},
                )
            loss.backward()
            opt.step()
    return FlowPair(
        VectorField2D(uf[0].detach(), uf[1].detach()),
        VectorField2D(ub[0].detach(), ub[1].detach()),
    )


# ---------------------------------------------------------------------------
# Horn-Schunck baseline.
# ---------------------------------------------------------------------------

_HS_AVG = torch.tensor(
    [[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]],
    dtype=DTYPE,
)


def _hs_filter(img, kernel):
    p = F.pad(img[None, None], (0, 1, 0, 1), mode="replicate")
    return F.conv2d(p, kernel[None, None])[0, 0]


def _hs_derivatives(i1, i2):
    kx = torch.tensor([[-1.0, 1.0], [-1.0, 1.0]], dtype=DTYPE) * 0.25
    ky = torch.tensor([[-1.0, -1.0], [1.0, 1.0]], dtype=DTYPE) * 0.25
    kt = torch.full((2, 2), 0.25, dtype=DTYPE)
    fx = _hs_filter(i1, kx) + _hs_filter(i2, kx)
    fy = _hs_filter(i1, ky) + _hs_filter(i2, ky)
    ft = _hs_filter(i2, kt) - _hs_filter(i1, kt)
    return fx, fy, ft


def _hs_average(f):
    p = F.pad(f[None, None], (1, 1, 1, 1), mode="reflect")
    return F.conv2d(p, _HS_AVG[None, None])[0, 0]


def hs_energy(i1: ScalarField2D, i2: ScalarField2D, flow: VectorField2D, alpha: float) -> float:
    """Quadratic Horn-Schunck energy of a flow for the (i1, i2) pair."""
    fx, fy, ft = _hs_derivatives(i1.data, i2.data)
    u, v = flow.u, flow.v
    data = ((fx * u + fy * v + ft) ** 2).sum()
    smooth = (_dx(u) ** 2 + _dy(u) ** 2 + _dx(v) ** 2 + _dy(v) ** 2).sum()
    return float(data + alpha * alpha * smooth)


def estimate_hs(
    i1: ScalarField2D,
    i2: ScalarField2D,
    alpha: float = 0.5,
    iterations: int = 400,
    warp_rounds: int = 1,
) -> VectorField2D:
    """Classic Horn-Schunck forward flow via Jacobi-style iterations.

    With warp_rounds > 1 the second image is warped by the accumulated flow
    between rounds and the linearized solve estimates the increment, which
    extends the usable displacement range without a pyramid.
    """
    require_same_shape(i1, i2, "images")
    h, w = i1.shape
    yy, xx = _grid(h, w)
    u_total = torch.zeros(h, w, dtype=DTYPE)
    v_total = torch.zeros(h, w, dtype=DTYPE)
    for _ in range(max(1, warp_rounds)):
        i2w = sample_bilinear(i2.data, xx + u_total, yy + v_total)
        fx, fy, ft = _hs_derivatives(i1.data, i2w)
        denom = alpha * alpha + fx * fx + fy * fy
        du = torch.zeros(h, w, dtype=DTYPE)
        dv = torch.zeros(h, w, dtype=DTYPE)
        for _ in range(iterations):
            ubar = _hs_average(du)
            vbar = _hs_average(dv)
            der = (fx * ubar + fy * vbar + ft) / denom
            du = ubar - fx * der
            dv = vbar - fy * der
        u_total = u_total + du
        v_total = v_total + dv
    return VectorField2D(u_total, v_total)


# ---------------------------------------------------------------------------
# Quadratic verification mode and Stokes-form stationarity.
# ---------------------------------------------------------------------------


def _mean_image_gradient(i1, i2):
    avg = 0.5 * (i1.data + i2.data)
    return _dx(avg), _dy(avg)


def minimize_quadratic(
    i1: ScalarField2D,
    i2: ScalarField2D,
    cfg: PredictorConfig | None = None,
    tol: float = 1e-6,
    max_iter: int = 20000,
) -> FlowPair:
    """Exact minimizer of the quadratic energy variant (linearized data term
    u . grad I, squared smoothness and divergence penalties), computed by
    conjugate gradient on the stationarity system.

    The backward flow minimizes the mirrored data term, which by linearity is
    the negated forward minimizer.
    """
    cfg = cfg or PredictorConfig()
    require_same_shape(i1, i2, "images")
    gx, gy = _mean_image_gradient(i1, i2)
    mu, lam = cfg.lambda_smooth, cfg.lambda_div

    def apply_a(zu, zv):
        div = _dx(zu) + _dy(zv)
        au = 2 * mu * (_dx_t(_dx(zu)) + _dy_t(_dy(zu))) + 2 * lam * _dx_t(div)
        av = 2 * mu * (_dx_t(_dx(zv)) + _dy_t(_dy(zv))) + 2 * lam * _dy_t(div)
        return au, av

    bu, bv = -gx, -gy
    zu = torch.zeros_like(bu)
    zv = torch.zeros_like(bv)
    ru, rv = bu.clone(), bv.clone()
    pu, pv = ru.clone(), rv.clone()
    rs = (ru * ru).sum() + (rv * rv).sum()
    b_norm = math.sqrt(((bu * bu).sum() + (bv * bv).sum()).item())
    if b_norm > 0:
        for _ in range(max_iter):
            if math.sqrt(rs.item()) <= tol * b_norm:
                break
            au, av = apply_a(pu, pv)
            denom = (pu * au).sum() + (pv * av).sum()
            if denom.item() <= 0:
                break
            alpha = rs / denom
            zu = zu + alpha * pu
            zv = zv + alpha * pv
            ru = ru - alpha * au
            rv = rv - alpha * av
            rs_new = (ru * ru).sum() + (rv * rv).sum()
            pu = ru + (rs_new / rs) * pu
            pv = rv + (rs_new / rs) * pv
            rs = rs_new
    return FlowPair(VectorField2D(zu, zv), VectorField2D(-zu, -zv))


def stokes_residual(
    flows: FlowPair,
    i1: ScalarField2D,
    i2: ScalarField2D,
    cfg: PredictorConfig | None = None,
) -> float:
    """Stationarity residual of the quadratic energy in Stokes form:
    || -2 mu lap(u) + grad(p_h) + grad(I) ||_2 / ||grad(I)||_2 over the
    interior crop, with p_h = -2 lambda_d div(u).

    Averaged over the forward (+grad I) and backward (-grad I) flows. When
    the image gradient vanishes the absolute residual norm is returned.
    """
    cfg = cfg or PredictorConfig()
    gx, gy = _mean_image_gradient(i1, i2)
    mu, lam = cfg.lambda_smooth, cfg.lambda_div
    den = math.sqrt(
        (interior(gx, CROP_RING) ** 2 + interior(gy, CROP_RING) ** 2).sum().item()
    )
    rels = []
    for flow, sign in ((flows.forward, 1.0), (flows.backward, -1.0)):
        lap_u = _dx(_dx(flow.u)) + _dy(_dy(flow.u))
        lap_v = _dx(_dx(flow.v)) + _dy(_dy(flow.v))
        ph = -2.0 * lam * (_dx(flow.u) + _dy(flow.v))
        res_u = -2.0 * mu * lap_u + _dx(ph) + sign * gx
        res_v = -2.0 * mu * lap_v + _dy(ph) + sign * gy
        num = math.sqrt(
            (interior(res_u, CROP_RING) ** 2 + interior(res_v, CROP_RING) ** 2)
            .sum()
            .item()
        )
        rels.append(num / den if den > 0 else num)
    return 0.5 * (rels[0] + rels[1])
