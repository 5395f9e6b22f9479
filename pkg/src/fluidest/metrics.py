"""Evaluation metrics and flow diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import InvalidConfigError
from .fields import ScalarField2D, VectorField2D, divergence, require_same_shape
from .warp import warp_bilinear


@dataclass
class FrameMetrics:
    frame: int
    aepe: float
    aae: float
    div_mean: float
    div_max: float


@dataclass
class MetricReport:
    """Per-frame metric rows plus aggregate views."""

    rows: list[FrameMetrics] = field(default_factory=list)
    normalized: bool = False

    def append(self, row: FrameMetrics):
        self.rows.append(row)

    @property
    def mean_aepe(self) -> float:
        return float(np.mean([r.aepe for r in self.rows])) if self.rows else 0.0

    @property
    def mean_aae(self) -> float:
        return float(np.mean([r.aae for r in self.rows])) if self.rows else 0.0


def aepe(u_est: VectorField2D, u_gt: VectorField2D, normalize: bool = False) -> float:
    """Mean endpoint error: per-pixel Euclidean distance between estimate and
    ground truth. Normalized mode rescales to pixels per 100 pixels of image
    width (the convention used for benchmark tables)."""
    require_same_shape(u_est, u_gt, "estimated and ground-truth flows")
    err = torch.sqrt((u_est.u - u_gt.u) ** 2 + (u_est.v - u_gt.v) ** 2)
    value = float(err.mean())
    if normalize:
        value *= 100.0 / u_est.width
    return value


def aae(u_est: VectorField2D, u_gt: VectorField2D) -> float:
    """Mean angular error in degrees between (u, v, 1) augmented vectors.

    The augmented (3-d) convention is used; numbers are not comparable to the
    plain 2-d angle convention.
    """
    require_same_shape(u_est, u_gt, "estimated and ground-truth flows")
    dot = u_est.u * u_gt.u + u_est.v * u_gt.v + 1.0
    n1 = torch.sqrt(u_est.u**2 + u_est.v**2 + 1.0)
    n2 = torch.sqrt(u_gt.u**2 + u_gt.v**2 + 1.0)
    cosang = (dot / (n1 * n2)).clamp(-1.0, 1.0)
    return float(torch.rad2deg(torch.acos(cosang)).mean())


def divergence_stats(u: VectorField2D) -> tuple[float, float]:
    """(mean abs, max abs) of the flow divergence over interior nodes
    (the boundary ring uses one-sided stencils and is excluded)."""
    div = divergence(u).data[1:-1, 1:-1]
    return float(div.abs().mean()), float(div.abs().max())


def displacement_histogram(
    u: VectorField2D, bins: int, value_range: tuple[float, float]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-component displacement histograms with fixed bin edges.

    Samples outside the range are clipped into the end bins so that counts
    always sum to the pixel count. Returns (edges, counts_u, counts_v).
    """
    if bins < 1:
        raise InvalidConfigError(f"bins must be >= 1, got {bins}")
    lo, hi = value_range
    if not (hi > lo):
        raise InvalidConfigError(f"empty histogram range [{lo}, {hi}]")
    edges = np.linspace(lo, hi, bins + 1)
    counts = []
    for plane in (u.u, u.v):
        vals = np.clip(plane.detach().numpy().ravel(), lo, hi)
        c, _ = np.histogram(vals, bins=edges)
        counts.append(c)
    return edges, counts[0], counts[1]


def wake_profile(flows, column: int) -> tuple[np.ndarray, np.ndarray]:
    """Across-frame mean of (u, v) along one image column, one value per row."""
    flows = list(flows)
    if not flows:
        raise InvalidConfigError("wake profile needs at least one frame")
    h, w = flows[0].shape
    if not (0 <= column < w):
        raise InvalidConfigError(f"column {column} outside [0, {w - 1}]")
    us = np.stack([f.u[:, column].detach().numpy() for f in flows])
    vs = np.stack([f.v[:, column].detach().numpy() for f in flows])
    return us.mean(axis=0), vs.mean(axis=0)


def reconstruction_residual(
    i1: ScalarField2D, i2: ScalarField2D, u: VectorField2D
) -> tuple[ScalarField2D, float]:
    """Reconstruct the second image by sampling the first at x - u(x) and
    report the mean absolute residual over the interior crop."""
    require_same_shape(i1, i2, "images")
    require_same_shape(i1, u, "image and flow")
    recon = warp_bilinear(i1, u, direction="minus")
    residual = float((recon.data - i2.data)[2:-2, 2:-2].abs().mean())
    return recon, residual


def zero_crossings(profile: np.ndarray, threshold: float = 0.0) -> int:
    """Count sign changes along a 1-d profile, ignoring magnitudes at or
    below the threshold."""
    vals = profile[np.abs(profile) > threshold]
    if vals.size < 2:
        return 0
    signs = np.sign(vals)
    return int(np.sum(signs[1:] != signs[:-1]))


def evaluate_sequence(
    estimates, ground_truths, normalize: bool = False
) -> MetricReport:
    """Per-frame AEPE/AAE/divergence rows for paired flow sequences."""
    estimates = list(estimates)
    ground_truths = list(ground_truths)
    if len(estimates) != len(ground_truths):
        raise InvalidConfigError(
            f"sequence length mismatch: {len(estimates)} estimates vs "
            f"{len(ground_truths)} ground truths"
        )
    report = MetricReport(normalized=normalize)
    for k, (est, gt) in enumerate(zip(estimates, ground_truths)):
        dmean, dmax = divergence_stats(est)
        report.append(
            FrameMetrics(
                frame=k,
                aepe=aepe(est, gt, normalize=normalize),
                aae=aae(est, gt),
                div_mean=dmean,
                div_max=dmax,
            )
        )
    return report
