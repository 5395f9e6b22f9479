"""Ground-truth generation: incompressible Navier-Stokes stepping via
operator splitting (tentative advection-diffusion step, then a pressure
projection onto discretely divergence-free fields), vorticity transport,
and synthetic particle-image rendering.

The projection solves the weighted normal equations G^T H G p = (rho/dt)
G^T H u* by conjugate gradient, where G is the canonical gradient stencil
and H the trapezoidal quadrature weights. Under that inner product the
stencil satisfies summation-by-parts, so killing the weighted-adjoint
divergence also kills the central-difference divergence at every
non-boundary node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch

from .errors import CflError, ConvergenceError, InvalidConfigError
from .fields import (
    DTYPE,
    ScalarField2D,
    VectorField2D,
    _dx,
    _dx_t,
    _dy,
    _dy_t,
    _laplacian,
    quadrature_weights,
    require_same_shape,
)
from .warp import WarpConfig, sample_bilinear, warp_gaussian


@dataclass(frozen=True)
class SimConfig:
    """Physical constants and solver knobs for the Navier-Stokes stepper."""

    nu: float = 0.05
    rho: float = 1.0
    dt: float = 1.0
    force: VectorField2D | None = None
    poisson_tol: float = 1e-10
    poisson_max_iter: int = 4000
    tracer_diffusion: float = 0.05

    def __post_init__(self):
        if self.nu <= 0:
            raise InvalidConfigError(f"nu must be > 0, got {self.nu}")
        if self.rho <= 0:
            raise InvalidConfigError(f"rho must be > 0, got {self.rho}")
        if self.dt <= 0:
            raise InvalidConfigError(f"dt must be > 0, got {self.dt}")
        if self.poisson_tol <= 0:
            raise InvalidConfigError(f"poisson_tol must be > 0, got {self.poisson_tol}")
        if self.tracer_diffusion < 0:
            raise InvalidConfigError(
                f"tracer_diffusion must be >= 0, got {self.tracer_diffusion}"
            )


@dataclass(frozen=True)
class SimState:
    velocity: VectorField2D
    pressure: ScalarField2D
    tracer: ScalarField2D
    time: float = 0.0


@dataclass(frozen=True)
class ParticleSet:
    """Tracer particles rendered as Gaussian blobs."""

    positions: np.ndarray  # (n, 2) as (x, y) pixel coordinates
    intensity: float = 0.9
    radius: float = 1.5  # Gaussian sigma in pixels

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "positions", pos)
        if not np.all(np.isfinite(pos)):
            raise InvalidConfigError("particle positions must be finite")
        if not (0.0 < self.intensity <= 1.0):
            raise InvalidConfigError(f"intensity must be in (0, 1], got {self.intensity}")
        if self.radius <= 0:
            raise InvalidConfigError(f"blob radius must be > 0, got {self.radius}")


def _check_cfl(w: VectorField2D, dt: float):
    bound = min(w.height, w.width) / 4.0
    disp = (
        torch.sqrt(w.u.detach() ** 2 + w.v.detach() ** 2).max().item() * dt
    )
    if disp >= bound:
        raise CflError(
            f"max displacement {disp:.3g} px exceeds the stability bound "
            f"{bound:.3g} px (grid {w.height}x{w.width}, dt={dt})"
        )


def advect_diffuse(u_prev: VectorField2D, nu: float, dt: float) -> VectorField2D:
    """Tentative velocity u* = advect(u) + nu*dt*lap(advect(u)).

    Advection is semi-Lagrangian: backtrace each node by u*dt and sample the
    previous velocity bilinearly. Diffusion is an explicit increment with the
    composed Laplacian (stable at the nu*dt values used here).
    """
    _check_cfl(u_prev, dt)
    h, w = u_prev.shape
    yy, xx = torch.meshgrid(
        torch.arange(h, dtype=DTYPE), torch.arange(w, dtype=DTYPE), indexing="ij"
    )
    cx = xx - dt * u_prev.u
    cy = yy - dt * u_prev.v
    ua = sample_bilinear(u_prev.u, cx, cy)
    va = sample_bilinear(u_prev.v, cx, cy)
    ustar = ua + nu * dt * _laplacian(ua)
    vstar = va + nu * dt * _laplacian(va)
    return VectorField2D(ustar, vstar)


def _cg_weighted_poisson(b, h, w, tol, max_iter):
    """CG on the SPD system (Dx^T H Dx + Dy^T H Dy) p = b, mean-zero p."""
    H = quadrature_weights(h, w)

    def apply_m(p):
        return _dx_t(H * _dx(p)) + _dy_t(H * _dy(p))

    b = b - b.mean()  # compatibility: range excludes constants
    b_norm = b.norm().item()
    x = torch.zeros_like(b)
    if b_norm == 0.0:
        return x, 0.0, 0
    r = b.clone()
    p = r.clone()
    rs = (r * r).sum()
    it = 0
    while it < max_iter:
        if math.sqrt(rs.item()) <= tol * b_norm:
            break
        mp = apply_m(p)
        denom = (p * mp).sum()
        if denom.item() == 0.0:
            break
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * mp
        r = r - r.mean()  # keep out of the constant null space
        rs_new = (r * r).sum()
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    residual = math.sqrt(rs.item()) / b_norm
    return x - x.mean(), residual, it


def pressure_project(
    u_star: VectorField2D,
    rho: float,
    dt: float,
    tol: float = 1e-10,
    max_iter: int = 4000,
) -> tuple[VectorField2D, ScalarField2D]:
    """Project the tentative velocity onto (discretely) divergence-free
    fields: solve the Neumann pressure Poisson problem and subtract
    (dt/rho) * grad p. Raises ConvergenceError if CG stalls above tol."""
    H = quadrature_weights(u_star.height, u_star.width)
    b = (rho / dt) * (_dx_t(H * u_star.u) + _dy_t(H * u_star.v))
    p, residual, iters = _cg_weighted_poisson(
        b, u_star.height, u_star.width, tol, max_iter
    )
    if residual > tol:
        raise ConvergenceError(
            f"pressure Poisson solve stalled: relative residual {residual:.3e} "
            f"after {iters} iterations (tol {tol:.1e})",
            residual=residual,
            iterations=iters,
        )
    un = u_star.u - (dt / rho) * _dx(p)
    vn = u_star.v - (dt / rho) * _dy(p)
    return VectorField2D(un, vn), ScalarField2D(p)


def enforce_wall_normals(w: VectorField2D) -> VectorField2D:
    """Zero the normal velocity component on the box walls (no-through-flow)."""
    u = w.u.clone()
    v = w.v.clone()
    u[:, 0] = 0.0
    u[:, -1] = 0.0
    v[0, :] = 0.0
    v[-1, :] = 0.0
    return VectorField2D(u, v)


def ns_update_onestep(
    state_velocity: VectorField2D, pressure: ScalarField2D, cfg: SimConfig
) -> VectorField2D:
    """One-step discrete momentum update: tentative advection-diffusion plus
    the pressure-gradient increment, assembled in a single expression.

    Exists to verify that composing the two splitting half-updates reproduces
    the unsplit discretized equation (the tentative velocity cancels)."""
    u_star = advect_diffuse(state_velocity, cfg.nu, cfg.dt)
    un = u_star.u - (cfg.dt / cfg.rho) * _dx(pressure.data)
    vn = u_star.v - (cfg.dt / cfg.rho) * _dy(pressure.data)
    return VectorField2D(un, vn)


def step_ns(state: SimState, cfg: SimConfig) -> SimState:
    """Advance one Chorin step: tentative velocity, wall BCs, projection,
    then advect-diffuse the tracer with the new velocity."""
    u_star = advect_diffuse(state.velocity, cfg.nu, cfg.dt)
    if cfg.force is not None:
        require_same_shape(state.velocity, cfg.force, "velocity and force")
        u_star = VectorField2D(
            u_star.u + cfg.dt * cfg.force.u, u_star.v + cfg.dt * cfg.force.v
        )
    u_star = enforce_wall_normals(u_star)
    u_new, p_new = pressure_project(
        u_star, cfg.rho, cfg.dt, cfg.poisson_tol, cfg.poisson_max_iter
    )
    disp = VectorField2D(cfg.dt * u_new.u, cfg.dt * u_new.v)
    tracer = warp_gaussian(
        state.tracer, disp, WarpConfig(diffusion=cfg.tracer_diffusion, dt=cfg.dt)
    )
    return SimState(u_new, p_new, tracer, state.time + cfg.dt)


def step_vorticity(
    omega: ScalarField2D, u: VectorField2D, nu: float, dt: float
) -> ScalarField2D:
    """Advance vorticity by its transport equation via one Gaussian-kernel
    warp (advection by u*dt and diffusion 2*nu*dt in a single application)."""
    require_same_shape(omega, u, "vorticity and velocity")
    _check_cfl(u, dt)
    disp = VectorField2D(dt * u.u.detach(), dt * u.v.detach())
    return warp_gaussian(omega, disp, WarpConfig(diffusion=nu, dt=dt))


def render_particles(particles: ParticleSet, h: int, w: int) -> ScalarField2D:
    """Render Gaussian blobs, clamped to [0, 1]."""
    if h < 8 or w < 8:
        raise InvalidConfigError(f"image must be at least 8x8, got {h}x{w}")
    yy, xx = torch.meshgrid(
        torch.arange(h, dtype=DTYPE), torch.arange(w, dtype=DTYPE), indexing="ij"
    )
    img = torch.zeros(h, w, dtype=DTYPE)
    inv = 1.0 / (2.0 * particles.radius**2)
    for px, py in particles.positions:
        img += particles.intensity * torch.exp(
            -((xx - px) ** 2 + (yy - py) ** 2) * inv
        )
    return ScalarField2D(img.clamp(0.0, 1.0))


def advect_particles(
    particles: ParticleSet,
    u: VectorField2D,
    dt: float,
    rng: np.random.Generator,
) -> ParticleSet:
    """Explicit Euler step with bilinearly sampled velocity; particles that
    leave the domain respawn uniformly at random from rng."""
    pos = particles.positions
    cx = torch.as_tensor(pos[:, 0], dtype=DTYPE)
    cy = torch.as_tensor(pos[:, 1], dtype=DTYPE)
    vu = sample_bilinear(u.u, cx, cy).numpy()
    vv = sample_bilinear(u.v, cx, cy).numpy()
    new = pos + dt * np.stack([vu, vv], axis=1)
    w_max = u.width - 1.0
    h_max = u.height - 1.0
    out = (
        (new[:, 0] < 0.0)
        | (new[:, 0] > w_max)
        | (new[:, 1] < 0.0)
        | (new[:, 1] > h_max)
    )
    if out.any():
        n_out = int(out.sum())
        new[out, 0] = rng.uniform(0.0, w_max, size=n_out)
        new[out, 1] = rng.uniform(0.0, h_max, size=n_out)
    return ParticleSet(new, particles.intensity, particles.radius)


# ---------------------------------------------------------------------------
# Dataset presets.
# ---------------------------------------------------------------------------

PRESETS = ("taylor-green", "cylinder-wake", "decaying-turbulence", "uniform")


@dataclass(frozen=True)
class DatasetConfig:
    """Rendering and preset knobs for synthetic sequences."""

    height: int = 64
    width: int = 64
    n_particles: int = 130
    blob_sigma: float = 1.7
    intensity: float = 0.9
    # uniform preset: displacement magnitude drawn from [0, max_displacement]
    max_displacement: float = 5.0
    # taylor-green amplitude (px/frame)
    tg_amplitude: float = 1.0
    # decaying turbulence: spectral band (cycles per domain) and peak speed
    turb_band: tuple[float, float] = (2.0, 8.0)
    turb_speed: float = 2.0
    # cylinder wake geometry
    inflow: float = 1.0
    cyl_radius_frac: float = 0.12
    burn_in: int = 0


def _taper_mask(h, w, margin=6):
    """Cosine taper to zero over `margin` px at each wall."""
    def ramp(n):
        t = np.ones(n)
        m = min(margin, n // 2)
        edge = 0.5 * (1.0 - np.cos(np.pi * np.arange(m) / m))
        t[:m] = edge
        t[n - m :] = edge[::-1]
        return t

    return torch.as_tensor(np.outer(ramp(h), ramp(w)), dtype=DTYPE)


def _random_solenoidal(h, w, band, speed, rng):
    """Band-limited random stream function, tapered at the walls; velocity is
    its perpendicular gradient, hence discretely divergence-free."""
    noise = rng.standard_normal((h, w))
    fk = np.fft.fft2(noise)
    ky = np.fft.fftfreq(h)[:, None] * h
    kx = np.fft.fftfreq(w)[None, :] * w
    kk = np.sqrt(kx**2 + ky**2)
    mask = (kk >= band[0]) & (kk <= band[1])
    psi = np.real(np.fft.ifft2(fk * mask))
    psi_t = torch.as_tensor(psi, dtype=DTYPE) * _taper_mask(h, w)
    u = _dy(psi_t)
    v = -_dx(psi_t)
    mag = torch.sqrt(u**2 + v**2).max().item()
    if mag > 0:
        scale = speed / mag
        u = u * scale
        v = v * scale
    return VectorField2D(u, v)


def taylor_green_field(
    h: int, w: int, amplitude: float, nu: float, t: float
) -> VectorField2D:
    """Analytic decaying Taylor-Green vortex on [0, w-1] x [0, h-1] scaled to
    one half-period per side (walls are impermeable stream lines)."""
    kap_x = math.pi / (w - 1)
    kap_y = math.pi / (h - 1)
    yy, xx = torch.meshgrid(
        torch.arange(h, dtype=DTYPE), torch.arange(w, dtype=DTYPE), indexing="ij"
    )
    decay = math.exp(-(kap_x**2 + kap_y**2) * nu * t)
    u = amplitude * torch.sin(kap_x * xx) * torch.cos(kap_y * yy) * decay
    # amplitude ratio kap_x/kap_y keeps the field solenoidal on non-square grids
    v = -amplitude * (kap_x / kap_y) * torch.cos(kap_x * xx) * torch.sin(kap_y * yy) * decay
    return VectorField2D(u, v)


def _cylinder_mask(h, w, radius_frac):
    yy, xx = torch.meshgrid(
        torch.arange(h, dtype=DTYPE), torch.arange(w, dtype=DTYPE), indexing="ij"
    )
    cx, cy = 0.3 * (w - 1), 0.5 * (h - 1)
    r = radius_frac * min(h, w)
    return ((xx - cx) ** 2 + (yy - cy) ** 2) <= r * r


def _apply_cylinder_bc(vel, mask, inflow):
    u = vel.u.clone()
    v = vel.v.clone()
    u[mask] = 0.0
    v[mask] = 0.0
    u[:, 0] = inflow
    v[:, 0] = 0.0
    return VectorField2D(u, v)


def gen_dataset(
    cfg: SimConfig,
    preset: str,
    frames: int,
    seed: int,
    data: DatasetConfig | None = None,
) -> tuple[list[ScalarField2D], list[VectorField2D]]:
    """Generate a particle-image sequence with per-pair ground-truth
    displacement fields (velocity * dt sampled on the pixel grid).

    Deterministic for a fixed seed. Returns (images, flows) with
    len(images) == frames and len(flows) == frames - 1.
    """
    if preset not in PRESETS:
        raise InvalidConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")
    if frames < 2:
        raise InvalidConfigError(f"need at least 2 frames, got {frames}")
    data = data or DatasetConfig()
    h, w = data.height, data.width
    rng = np.random.default_rng(seed)

    velocity_of_frame = _make_velocity_sequence(cfg, preset, frames, rng, data)

    pos = np.stack(
        [rng.uniform(0, w - 1, size=data.n_particles),
         rng.uniform(0, h - 1, size=data.n_particles)],
        axis=1,
    )
    particles = ParticleSet(pos, data.intensity, data.blob_sigma)

    images = [render_particles(particles, h, w)]
    flows = []
    for t in range(frames - 1):
        vel = velocity_of_frame[t]
        flows.append(VectorField2D(cfg.dt * vel.u, cfg.dt * vel.v))
        particles = advect_particles(particles, vel, cfg.dt, rng)
        images.append(render_particles(particles, h, w))
    return images, flows


def _initial_tracer(h, w, rng):
    """Smooth seeded marker concentration in [0, 1]."""
    noise = rng.standard_normal((h, w))
    fk = np.fft.fft2(noise)
    ky = np.fft.fftfreq(h)[:, None] * h
    kx = np.fft.fftfreq(w)[None, :] * w
    kk = np.sqrt(kx**2 + ky**2)
    smooth = np.real(np.fft.ifft2(fk * ((kk >= 1.0) & (kk <= 6.0))))
    span = np.abs(smooth).max()
    if span > 0:
        smooth = smooth / (2.0 * span)
    return ScalarField2D(torch.as_tensor(0.5 + smooth, dtype=DTYPE))


def simulate_frames(
    cfg: SimConfig,
    preset: str,
    steps: int,
    seed: int,
    data: DatasetConfig | None = None,
) -> tuple[list[VectorField2D], list[ScalarField2D]]:
    """Velocity-derived displacement fields plus tracer frames for one
    trajectory: `steps` displacements and `steps + 1` tracer images.

    The displacement for pair t is velocity_t * dt sampled on the grid; the
    tracer advances with the same displacement through the Gaussian warp.
    """
    if preset not in PRESETS:
        raise InvalidConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")
    if steps < 1:
        raise InvalidConfigError(f"steps must be >= 1, got {steps}")
    data = data or DatasetConfig()
    rng = np.random.default_rng(seed)
    velocities = _make_velocity_sequence(cfg, preset, steps + 1, rng, data)
    tracer = _initial_tracer(data.height, data.width, rng)
    flows = []
    tracers = [tracer]
    for vel in velocities:
        disp = VectorField2D(cfg.dt * vel.u, cfg.dt * vel.v)
        flows.append(disp)
        tracer = warp_gaussian(
            tracer, disp, WarpConfig(diffusion=cfg.tracer_diffusion, dt=cfg.dt)
        )
        tracers.append(tracer)
    return flows, tracers


def _make_velocity_sequence(cfg, preset, frames, rng, data):
    h, w = data.height, data.width
    if preset == "uniform":
        mag = rng.uniform(0.0, data.max_displacement)
        ang = rng.uniform(0.0, 2.0 * math.pi)
        vel = VectorField2D.constant(
            h, w, mag * math.cos(ang) / cfg.dt, mag * math.sin(ang) / cfg.dt
        )
        return [vel] * (frames - 1)

    if preset == "taylor-green":
        return [
            taylor_green_field(h, w, data.tg_amplitude, cfg.nu, t * cfg.dt)
            for t in range(frames - 1)
        ]

    if preset == "decaying-turbulence":
        vel = _random_solenoidal(h, w, data.turb_band, data.turb_speed, rng)
        state = SimState(vel, ScalarField2D.zeros(h, w), ScalarField2D.zeros(h, w))
        seq = []
        for _ in range(frames - 1):
            seq.append(state.velocity)
            state = step_ns(state, cfg)
        return seq

    # cylinder-wake
    mask = _cylinder_mask(h, w, data.cyl_radius_frac)
    perturb = _random_solenoidal(h, w, (2.0, 6.0), 0.1 * data.inflow, rng)
    vel = VectorField2D(
        torch.full((h, w), data.inflow, dtype=DTYPE) + perturb.u, perturb.v
    )
    vel = _apply_cylinder_bc(vel, mask, data.inflow)
    state = SimState(vel, ScalarField2D.zeros(h, w), ScalarField2D.zeros(h, w))
    for _ in range(data.burn_in):
        state = step_ns(state, cfg)
        state = replace(state, velocity=_apply_cylinder_bc(state.velocity, mask, data.inflow))
    seq = []
    for _ in range(frames - 1):
        seq.append(state.velocity)
        state = step_ns(state, cfg)
        state = replace(state, velocity=_apply_cylinder_bc(state.velocity, mask, data.inflow))
    return seq
