"""Bit-exact persistence: flow fields (.flo), grayscale images (16-bit PGM),
corrector parameters (versioned binary), run configuration (INI-style
sections), and CSV metric reports.
"""

from __future__ import annotations

import configparser
import csv
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch

from .correct import CorrectorParams, GammaParams, GateParams
from .errors import FileFormatError, InvalidConfigError
from .fields import DTYPE, ScalarField2D, VectorField2D
from .metrics import FrameMetrics, MetricReport

FLO_MAGIC = 202021.25
PARAMS_MAGIC = b"FCOR"
PARAMS_VERSION = 1
PGM_MAXVAL = 65535


# ---------------------------------------------------------------------------
# Middlebury .flo flow files.
# ---------------------------------------------------------------------------


def write_flow(path, flow: VectorField2D) -> None:
    """Write a flow field in the interchange layout: float32 magic, int32
    width/height, interleaved (u, v) float32 row-major, all little-endian."""
    path = Path(path)
    h, w = flow.height, flow.width
    payload = np.empty((h, w, 2), dtype="<f4")
    payload[..., 0] = flow.u.detach().numpy()
    payload[..., 1] = flow.v.detach().numpy()
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<f", FLO_MAGIC))
            fh.write(struct.pack("<ii", w, h))
            fh.write(payload.tobytes())
    except OSError as exc:
        raise FileFormatError(path, f"cannot write flow file: {exc}") from exc


def read_flow(path) -> VectorField2D:
    """Inverse of write_flow. NaN payload values are accepted; run
    validate_flow to flag them."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FileFormatError(path, f"cannot read flow file: {exc}") from exc
    if len(raw) < 12:
        raise FileFormatError(
            path, f"header needs 12 bytes, file has {len(raw)}", offset=0
        )
    (magic,) = struct.unpack_from("<f", raw, 0)
    if magic != FLO_MAGIC:
        raise FileFormatError(
            path, f"bad magic {magic!r}, expected {FLO_MAGIC}", offset=0
        )
    w, h = struct.unpack_from("<ii", raw, 4)
    if w <= 0 or h <= 0 or w * h > 10**8:
        raise FileFormatError(path, f"implausible dimensions {w}x{h}", offset=4)
    expected = 12 + 8 * w * h
    if len(raw) != expected:
        raise FileFormatError(
            path,
            f"payload truncated: expected {expected} bytes total, got {len(raw)}",
            offset=len(raw),
        )
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    return VectorField2D(
        torch.as_tensor(data[..., 0].astype(np.float64)),
        torch.as_tensor(data[..., 1].astype(np.float64)),
    )


def validate_flow(flow: VectorField2D) -> list[str]:
    """Post-read validation pass; returns human-readable issue strings."""
    return flow.validate()


# ---------------------------------------------------------------------------
# 16-bit binary PGM images.
# ---------------------------------------------------------------------------


def write_image(path, image: ScalarField2D) -> None:
    """Write samples in [0, 1] as binary PGM (P5), 16-bit big-endian,
    maxval 65535. Quantization error is at most half a step (1/131070)."""
    path = Path(path)
    data = image.data.detach().numpy()
    if data.min() < 0.0 or data.max() > 1.0:
        raise InvalidConfigError(
            f"image samples must be in [0, 1] to write, got range "
            f"[{data.min():.4g}, {data.max():.4g}]"
        )
    quant = np.round(data * PGM_MAXVAL).astype(">u2")
    header = f"P5\n{image.width} {image.height}\n{PGM_MAXVAL}\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(quant.tobytes())
    except OSError as exc:
        raise FileFormatError(path, f"cannot write image: {exc}") from exc


def read_image(path) -> ScalarField2D:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FileFormatError(path, f"cannot read image: {exc}") from exc
    # header: magic, width, height, maxval as whitespace-separated tokens
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(raw):
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            break
        tokens.append(raw[start:pos])
    if len(tokens) < 4:
        raise FileFormatError(path, "incomplete PGM header", offset=pos)
    if tokens[0] != b"P5":
        raise FileFormatError(
            path, f"bad magic {tokens[0]!r}, expected b'P5'", offset=0
        )
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise FileFormatError(path, f"malformed header: {exc}", offset=2) from exc
    if maxval != PGM_MAXVAL:
        raise FileFormatError(
            path, f"maxval {maxval} unsupported, expected {PGM_MAXVAL}", offset=pos
        )
    if w <= 0 or h <= 0:
        raise FileFormatError(path, f"implausible dimensions {w}x{h}", offset=2)
    pos += 1  # single whitespace byte after maxval
    expected = pos + 2 * w * h
    if len(raw) < expected:
        raise FileFormatError(
            path,
            f"pixel data truncated: expected {expected} bytes total, got {len(raw)}",
            offset=len(raw),
        )
    pix = np.frombuffer(raw, dtype=">u2", offset=pos, count=w * h).reshape(h, w)
    return ScalarField2D(torch.as_tensor(pix.astype(np.float64) / PGM_MAXVAL))


# ---------------------------------------------------------------------------
# Corrector parameters (versioned binary, little-endian).
# ---------------------------------------------------------------------------


def write_params(path, params: CorrectorParams) -> None:
    path = Path(path)
    k = params.gate.kernel_size
    q = params.gamma.order
    n = params.gamma.n_terms
    try:
        with open(path, "wb") as fh:
            fh.write(PARAMS_MAGIC)
            fh.write(struct.pack("<I", PARAMS_VERSION))
            fh.write(struct.pack("<I", k))
            fh.write(params.gate.w_est.detach().numpy().astype("<f8").tobytes())
            fh.write(params.gate.w_phys.detach().numpy().astype("<f8").tobytes())
            fh.write(params.gate.bias.detach().numpy().astype("<f8").tobytes())
            fh.write(struct.pack("<II", q, n))
            fh.write(params.gamma.coeffs.detach().numpy().astype("<f8").tobytes())
            fh.write(struct.pack("<dd", params.nu, params.dt))
    except OSError as exc:
        raise FileFormatError(path, f"cannot write parameters: {exc}") from exc


def read_params(path) -> CorrectorParams:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FileFormatError(path, f"cannot read parameters: {exc}") from exc

    pos = 0

    def take(count, what):
        nonlocal pos
        if pos + count > len(raw):
            raise FileFormatError(
                path,
                f"truncated while reading {what}: need {count} bytes, "
                f"have {len(raw) - pos}",
                offset=pos,
            )
        out = raw[pos : pos + count]
        pos += count
        return out

    if take(4, "magic") != PARAMS_MAGIC:
        raise FileFormatError(path, f"bad magic, expected {PARAMS_MAGIC!r}", offset=0)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != PARAMS_VERSION:
        raise FileFormatError(
            path, f"unsupported version {version}, expected {PARAMS_VERSION}", offset=4
        )
    (k,) = struct.unpack("<I", take(4, "kernel size"))
    if k < 1 or k % 2 == 0 or k > 99:
        raise FileFormatError(path, f"invalid gate kernel size {k}", offset=8)
    n_gate = 2 * 2 * k * k
    w_est = np.frombuffer(take(8 * n_gate, "gate weights"), dtype="<f8").reshape(2, 2, k, k)
    w_phys = np.frombuffer(take(8 * n_gate, "gate weights"), dtype="<f8").reshape(2, 2, k, k)
    bias = np.frombuffer(take(16, "gate bias"), dtype="<f8")
    q, n = struct.unpack("<II", take(8, "gamma header"))
    if q < 1 or n != q * (q + 1) // 2:
        raise FileFormatError(
            path,
            f"gamma coefficient count {n} inconsistent with order {q} "
            f"(expected {q * (q + 1) // 2})",
            offset=pos - 8,
        )
    coeffs = np.frombuffer(take(8 * 2 * n, "gamma coefficients"), dtype="<f8").reshape(2, n)
    nu, dt = struct.unpack("<dd", take(16, "physical constants"))
    if pos != len(raw):
        raise FileFormatError(
            path, f"{len(raw) - pos} trailing bytes after payload", offset=pos
        )
    return CorrectorParams(
        GateParams(w_est.copy(), w_phys.copy(), bias.copy()),
        GammaParams(q, coeffs.copy()),
        nu,
        dt,
    )


# ---------------------------------------------------------------------------
# Run configuration: INI-style sections, unknown keys rejected.
# ---------------------------------------------------------------------------

_CONFIG_SCHEMA = {
    "run": {"seed": int},
    "predictor": {
        "lambda_smooth": float, "lambda_div": float, "gamma": float,
        "eps": float, "levels": int, "iters": int, "step": float,
    },
    "corrector": {
        "kernel_size": int, "order": int, "nu": float, "dt": float,
        "lambda_div": float, "step": float, "epochs": int,
    },
    "simulation": {
        "nu": float, "rho": float, "dt": float, "tracer_diffusion": float,
        "poisson_tol": float, "poisson_max_iter": int, "steps": int,
    },
    "dataset": {
        "preset": str, "height": int, "width": int, "n_particles": int,
        "frames": int, "blob_sigma": float, "intensity": float,
        "max_displacement": float,
    },
}


@dataclass
class RunConfig:
    """Named parameter groups for a pipeline run."""

    seed: int = 0
    predictor: dict = dc_field(default_factory=dict)
    corrector: dict = dc_field(default_factory=dict)
    simulation: dict = dc_field(default_factory=dict)
    dataset: dict = dc_field(default_factory=dict)


def write_config(path, cfg: RunConfig) -> None:
    path = Path(path)
    lines = ["[run]", f"seed = {cfg.seed}"]
    for section in ("predictor", "corrector", "simulation", "dataset"):
        group = getattr(cfg, section)
        if not group:
            continue
        lines.append("")
        lines.append(f"[{section}]")
        for key in sorted(group):
            if key not in _CONFIG_SCHEMA[section]:
                raise InvalidConfigError(f"unknown key {key!r} in section [{section}]")
            lines.append(f"{key} = {group[key]!r}" if isinstance(group[key], str)
                         else f"{key} = {group[key]}")
    try:
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as exc:
        raise FileFormatError(path, f"cannot write config: {exc}") from exc


def read_config(path) -> RunConfig:
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise FileFormatError(path, f"cannot read config: {exc}") from exc
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise FileFormatError(path, f"malformed config: {exc}") from exc
    cfg = RunConfig()
    for section in parser.sections():
        if section not in _CONFIG_SCHEMA:
            raise FileFormatError(path, f"unknown section [{section}]")
        schema = _CONFIG_SCHEMA[section]
        for key, value in parser.items(section):
            if key not in schema:
                raise FileFormatError(
                    path, f"unknown key {key!r} in section [{section}]"
                )
            caster = schema[key]
            try:
                parsed = (
                    value.strip("'\"") if caster is str else caster(value)
                )
            except ValueError as exc:
                raise FileFormatError(
                    path, f"bad value for {section}.{key}: {exc}"
                ) from exc
            if section == "run":
                cfg.seed = parsed
            else:
                getattr(cfg, section)[key] = parsed
    _validate_config_ranges(path, cfg)
    return cfg


def _validate_config_ranges(path, cfg: RunConfig):
    """Range checks mirror the owning modules' invariants."""
    pred = cfg.predictor
    if "gamma" in pred and not (0.0 < pred["gamma"] <= 1.0):
        raise FileFormatError(path, f"predictor.gamma out of (0, 1]: {pred['gamma']}")
    if "eps" in pred and pred["eps"] <= 0:
        raise FileFormatError(path, f"predictor.eps must be > 0: {pred['eps']}")
    for sec_name in ("corrector", "simulation"):
        sec = getattr(cfg, sec_name)
        for key in ("nu", "dt", "rho"):
            if key in sec and sec[key] <= 0:
                raise FileFormatError(
                    path, f"{sec_name}.{key} must be > 0: {sec[key]}"
                )
    if "preset" in cfg.dataset:
        from .sim import PRESETS

        if cfg.dataset["preset"] not in PRESETS:
            raise FileFormatError(
                path, f"unknown dataset.preset {cfg.dataset['preset']!r}"
            )


# ---------------------------------------------------------------------------
# CSV metric reports.
# ---------------------------------------------------------------------------

REPORT_HEADER = ["frame", "aepe", "aae", "div_mean", "div_max"]


def write_report(path, report: MetricReport) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_HEADER)
            for row in report.rows:
                writer.writerow(
                    [row.frame, repr(row.aepe), repr(row.aae),
                     repr(row.div_mean), repr(row.div_max)]
                )
    except OSError as exc:
        raise FileFormatError(path, f"cannot write report: {exc}") from exc


def read_report(path) -> MetricReport:
    path = Path(path)
    report = MetricReport()
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != REPORT_HEADER:
                raise FileFormatError(
                    path, f"bad report header {header}, expected {REPORT_HEADER}"
                )
            for row in reader:
                report.append(
                    FrameMetrics(
                        int(row[0]), float(row[1]), float(row[2]),
                        float(row[3]), float(row[4]),
                    )
                )
    except OSError as exc:
        raise FileFormatError(path, f"cannot read report: {exc}") from exc
    except (ValueError, IndexError) as exc:
        raise FileFormatError(path, f"malformed report row: {exc}") from exc
    return report


# ---------------------------------------------------------------------------
# Directory conventions for sequences.
# ---------------------------------------------------------------------------


def flow_path(directory, index: int, prefix: str = "flow") -> Path:
    return Path(directory) / f"{prefix}_{index:04d}.flo"


def image_path(directory, index: int, prefix: str = "frame") -> Path:
    return Path(directory) / f"{prefix}_{index:04d}.pgm"


def list_files(directory, suffix: str, prefix: str | None = None) -> list[Path]:
    base = Path(directory)
    if not base.is_dir():
        raise FileFormatError(base, "not a directory")
    out = sorted(
        p for p in base.iterdir()
        if p.suffix == suffix and (prefix is None or p.name.startswith(prefix))
    )
    return out
