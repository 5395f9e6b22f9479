"""Fluid motion estimation from particle image sequences.

A prediction-correction pipeline: a variational optical-flow predictor with
smoothness and divergence regularizers, refined by a physics-based corrector
that blends the optical estimate with an advected previous velocity through
a learned gate. Includes an incompressible Navier-Stokes simulator and
particle-image renderer for generating ground-truth data.
"""

from .errors import (
    CflError,
    ConvergenceError,
    DerivativeOrderError,
    DimensionMismatchError,
    FileFormatError,
    FluidestError,
    GridTooSmallError,
    InvalidConfigError,
    NonFiniteLossError,
)
from .fields import (
    ScalarField2D,
    VectorField2D,
    curl,
    divergence,
    gradient,
    laplacian,
    partial_derivative,
)
from .warp import WarpConfig, warp_bilinear, warp_gaussian
from .sim import (
    DatasetConfig,
    ParticleSet,
    SimConfig,
    SimState,
    advect_diffuse,
    advect_particles,
    gen_dataset,
    pressure_project,
    render_particles,
    simulate_frames,
    step_ns,
    step_vorticity,
    taylor_green_field,
)
from .predict import (
    FlowPair,
    PredictorConfig,
    charbonnier,
    estimate_hs,
    estimate_variational,
    minimize_quadratic,
    photometric_loss,
    regularizer_loss,
    stokes_residual,
    total_predictor_loss,
)
from .correct import (
    CorrectorParams,
    GammaParams,
    GateParams,
    correct_step,
    correct_step_reference,
    corrector_loss,
    gamma_residual,
    gate,
    train_corrector,
)
from .metrics import (
    MetricReport,
    aae,
    aepe,
    displacement_histogram,
    divergence_stats,
    reconstruction_residual,
    wake_profile,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
