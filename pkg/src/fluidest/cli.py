"""Command-line pipeline: simulate ground truth, render particle images,
estimate flow (with optional physical correction), train the corrector, and
emit metric/diagnostic reports as plot-ready CSV files.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure (CFL violation, solver non-convergence, non-finite loss).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from . import metrics
from .correct import CorrectorParams, correct_step, train_corrector
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
from .predict import FlowPair, PredictorConfig, estimate_hs, estimate_variational
from .sim import (
    DatasetConfig,
    ParticleSet,
    PRESETS,
    SimConfig,
    advect_particles,
    render_particles,
    simulate_frames,
)

USAGE_EXIT = 1
DATA_EXIT = 2
NUMERIC_EXIT = 3


def _configure_threads():
    spec = os.environ.get("FLUIDEST_THREADS", "")
    if not spec:
        return
    try:
        n = int(spec)
    except ValueError:
        raise InvalidConfigError(f"FLUIDEST_THREADS must be an integer, got {spec!r}")
    if n > 0:
        import torch

        torch.set_num_threads(n)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluidest",
        description="Fluid motion estimation toolkit: simulate, render, "
        "estimate, correct, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate ground-truth flow and tracer frames")
    p.add_argument("--preset", required=True, choices=PRESETS)
    p.add_argument("--size", nargs=2, type=int, default=[64, 64], metavar=("H", "W"))
    p.add_argument("--nu", type=float, default=0.05)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-images", help="render particle image sequences from flows")
    p.add_argument("--flows", required=True)
    p.add_argument("--particles", type=int, default=130)
    p.add_argument("--sigma", type=float, default=1.7)
    p.add_argument("--intensity", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="estimate flow for consecutive image pairs")
    p.add_argument("--images", required=True)
    p.add_argument("--method", choices=("hs", "variational"), default="variational")
    p.add_argument("--lambda-s", type=float, default=0.05)
    p.add_argument("--lambda-d", type=float, default=0.05)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--step", type=float, default=0.02)
    p.add_argument("--alpha", type=float, default=0.5, help="HS regularization")
    p.add_argument("--hs-iters", type=int, default=400)
    p.add_argument("--warp-rounds", type=int, default=3)
    p.add_argument("--correct", action="store_true")
    p.add_argument("--params", default=None, help="corrector parameter file")
    p.add_argument("--nu", type=float, default=0.05, help="corrector nu when no --params")
    p.add_argument("--dt", type=float, default=1.0, help="corrector dt when no --params")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-corrector", help="fit corrector parameters")
    p.add_argument("--images", required=True)
    p.add_argument("--flows-pred", required=True)
    p.add_argument("--gt", default=None)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--step", type=float, default=1e-2)
    p.add_argument("--lambda-d", type=float, default=0.05)
    p.add_argument("--nu", type=float, default=0.05)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--kernel-size", type=int, default=3)
    p.add_argument("--out", required=True, help="output parameter file path")

    p = sub.add_parser("eval", help="AEPE/AAE/divergence report for flow pairs")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True, help="report CSV path")

    p = sub.add_parser("report", help="histograms, wake profiles, reconstructions")
    p.add_argument("--est", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--wake-column", type=int, required=True)
    p.add_argument("--bins", type=int, default=41)
    p.add_argument("--hist-range", nargs=2, type=float, default=[-6.0, 6.0])
    p.add_argument("--out", required=True)

    return parser


def _ensure_out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_simulate(args) -> int:
    h, w = args.size
    cfg = SimConfig(nu=args.nu, rho=args.rho, dt=args.dt)
    data = DatasetConfig(height=h, width=w)
    flows, tracers = simulate_frames(cfg, args.preset, args.steps, args.seed, data)
    out = _ensure_out_dir(args.out)
    for k, flow in enumerate(flows):
        fio.write_flow(fio.flow_path(out, k), flow)
    for k, tracer in enumerate(tracers):
        fio.write_image(fio.image_path(out, k, prefix="tracer"), tracer)
    fio.write_config(
        out / "run.cfg",
        fio.RunConfig(
            seed=args.seed,
            simulation={"nu": args.nu, "rho": args.rho, "dt": args.dt, "steps": args.steps},
            dataset={"preset": args.preset, "height": h, "width": w},
        ),
    )
    return 0


def _cmd_gen_images(args) -> int:
    flow_files = fio.list_files(args.flows, ".flo")
    if not flow_files:
        raise FileFormatError(args.flows, "no .flo files found")
    flows = [fio.read_flow(p) for p in flow_files]
    h, w = flows[0].height, flows[0].width
    rng = np.random.default_rng(args.seed)
    pos = np.stack(
        [rng.uniform(0, w - 1, size=args.particles),
         rng.uniform(0, h - 1, size=args.particles)],
        axis=1,
    )
    particles = ParticleSet(pos, args.intensity, args.sigma)
    out = _ensure_out_dir(args.out)
    fio.write_image(fio.image_path(out, 0), render_particles(particles, h, w))
    for k, flow in enumerate(flows):
        particles = advect_particles(particles, flow, 1.0, rng)
        fio.write_image(fio.image_path(out, k + 1), render_particles(particles, h, w))
    fio.write_config(
        out / "run.cfg",
        fio.RunConfig(
            seed=args.seed,
            dataset={
                "n_particles": args.particles,
                "blob_sigma": args.sigma,
                "intensity": args.intensity,
                "height": h,
                "width": w,
            },
        ),
    )
    return 0


def _load_images(directory):
    files = fio.list_files(directory, ".pgm")
    if len(files) < 2:
        raise FileFormatError(directory, f"need at least 2 images, found {len(files)}")
    return [fio.read_image(p) for p in files]


def _cmd_estimate(args) -> int:
    images = _load_images(args.images)
    out = _ensure_out_dir(args.out)
    cfg = PredictorConfig(
        lambda_smooth=args.lambda_s,
        lambda_div=args.lambda_d,
        levels=args.levels,
        iters=args.iters,
        step=args.step,
    )
    predicted = []
    for k in range(len(images) - 1):
        if args.method == "hs":
            flow = estimate_hs(
                images[k], images[k + 1], alpha=args.alpha,
                iterations=args.hs_iters, warp_rounds=args.warp_rounds,
            )
        else:
            flow = estimate_variational(images[k], images[k + 1], cfg).forward
        predicted.append(flow)
        fio.write_flow(fio.flow_path(out, k, prefix="pred"), flow)
    if args.correct:
        if args.params:
            params = fio.read_params(args.params)
        else:
            params = CorrectorParams.zeros(nu=args.nu, dt=args.dt)
        corrected = [predicted[0]]
        fio.write_flow(fio.flow_path(out, 0, prefix="corr"), predicted[0])
        for t in range(1, len(predicted)):
            corr = correct_step(corrected[-1], predicted[t], params)
            corrected.append(corr)
            fio.write_flow(fio.flow_path(out, t, prefix="corr"), corr)
    fio.write_config(
        out / "run.cfg",
        fio.RunConfig(
            predictor={
                "lambda_smooth": args.lambda_s, "lambda_div": args.lambda_d,
                "levels": args.levels, "iters": args.iters, "step": args.step,
            },
        ),
    )
    return 0


def _cmd_train_corrector(args) -> int:
    images = _load_images(args.images)
    flow_files = fio.list_files(args.flows_pred, ".flo")
    flows = [fio.read_flow(p) for p in flow_files]
    if len(flows) != len(images) - 1:
        raise FileFormatError(
            args.flows_pred,
            f"{len(flows)} flows do not pair with {len(images)} images",
        )
    for flow in flows:
        if flow.shape != images[0].shape:
            raise DimensionMismatchError(
                f"flow shape {flow.shape} does not match images {images[0].shape}"
            )
    params0 = CorrectorParams.zeros(
        kernel_size=args.kernel_size, order=args.order, nu=args.nu, dt=args.dt
    )
    params, curve = train_corrector(
        flows, params0, epochs=args.epochs, step=args.step, lambda_div=args.lambda_d
    )
    out_file = Path(args.out)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    fio.write_params(out_file, params)
    with open(out_file.parent / "loss_curve.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for k, value in enumerate(curve):
            fh.write(f"{k},{value!r}\n")
    if args.gt:
        gt = [fio.read_flow(p) for p in fio.list_files(args.gt, ".flo")]
        if len(gt) == len(flows):
            corrected = [flows[0]]
            for t in range(1, len(flows)):
                corrected.append(correct_step(corrected[-1], flows[t], params))
            pred_aepe = float(np.mean([metrics.aepe(f, g) for f, g in zip(flows, gt)]))
            corr_aepe = float(np.mean([metrics.aepe(c, g) for c, g in zip(corrected, gt)]))
            print(f"mean AEPE prediction-only: {pred_aepe:.4f}")
            print(f"mean AEPE corrected:       {corr_aepe:.4f}")
    return 0


def _cmd_eval(args) -> int:
    est = [fio.read_flow(p) for p in fio.list_files(args.est, ".flo")]
    gt = [fio.read_flow(p) for p in fio.list_files(args.gt, ".flo")]
    if len(est) != len(gt) or not est:
        raise FileFormatError(
            args.est, f"{len(est)} estimated flows vs {len(gt)} ground truths"
        )
    report = metrics.evaluate_sequence(est, gt, normalize=args.normalize)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fio.write_report(out, report)
    return 0


def _cmd_report(args) -> int:
    flows = [fio.read_flow(p) for p in fio.list_files(args.est, ".flo")]
    if not flows:
        raise FileFormatError(args.est, "no .flo files found")
    images = _load_images(args.images)
    if len(images) != len(flows) + 1:
        raise FileFormatError(
            args.images, f"{len(images)} images do not pair with {len(flows)} flows"
        )
    out = _ensure_out_dir(args.out)

    lo, hi = args.hist_range
    edges = None
    total_u = total_v = None
    for flow in flows:
        e, cu, cv = metrics.displacement_histogram(flow, args.bins, (lo, hi))
        edges = e
        total_u = cu if total_u is None else total_u + cu
        total_v = cv if total_v is None else total_v + cv
    with open(out / "histogram.csv", "w") as fh:
        fh.write("bin_lo,bin_hi,count_u,count_v\n")
        for k in range(args.bins):
            fh.write(f"{edges[k]!r},{edges[k + 1]!r},{total_u[k]},{total_v[k]}\n")

    mean_u, mean_v = metrics.wake_profile(flows, args.wake_column)
    with open(out / "wake_profile.csv", "w") as fh:
        fh.write("row,mean_u,mean_v\n")
        for k in range(mean_u.shape[0]):
            fh.write(f"{k},{mean_u[k]!r},{mean_v[k]!r}\n")

    with open(out / "reconstruction.csv", "w") as fh:
        fh.write("frame,residual\n")
        for k, flow in enumerate(flows):
            _, residual = metrics.reconstruction_residual(
                images[k], images[k + 1], flow
            )
            fh.write(f"{k},{residual!r}\n")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "gen-images": _cmd_gen_images,
    "estimate": _cmd_estimate,
    "train-corrector": _cmd_train_corrector,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; remap to the documented code
        return USAGE_EXIT if exc.code not in (0, None) else 0
    try:
        _configure_threads()
        return _COMMANDS[args.command](args)
    except (CflError, ConvergenceError, NonFiniteLossError) as exc:
        print(f"fluidest: numerical failure: {exc}", file=sys.stderr)
        return NUMERIC_EXIT
    except (FileFormatError, DimensionMismatchError, GridTooSmallError,
            DerivativeOrderError) as exc:
        print(f"fluidest: {exc}", file=sys.stderr)
        return DATA_EXIT
    except InvalidConfigError as exc:
        print(f"fluidest: invalid arguments: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except FluidestError as exc:
        print(f"fluidest: {exc}", file=sys.stderr)
        return DATA_EXIT


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
