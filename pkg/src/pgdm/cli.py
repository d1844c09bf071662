"""Command-line entry points.

Subcommands: gen-data, train, sample, bench, plot.  Exit codes: 0 success,
2 invalid arguments, 3 solver convergence failure, 4 file or format error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .denoiser import (
    DenoiserArch,
    TrainConfig,
    build_denoiser,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .diffusion import default_tau, linear_beta_schedule
from .errors import ConvergenceError, FieldFormatError
from .fields import read_field, write_field
from .grf import GRFConfig
from .nlsolve import LMConfig
from .pipeline import (
    benchmark,
    generate_dataset,
    load_manifest,
    model_diffusion_config,
    problem_grids,
    problem_preset,
    render_fields,
    run_pgdm,
    training_dataset,
)

EQUATION_CHOICES = ("poisson2d", "poisson3d", "allen-cahn", "navier-stokes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pgdm",
        description="Generative downscaling of PDE solutions with "
                    "physics-guided refinement")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a solver dataset")
    g.add_argument("--eq", required=True, choices=EQUATION_CHOICES)
    g.add_argument("--kc", type=int, default=None, help="coarse cells per axis")
    g.add_argument("--kf", type=int, default=None, help="fine cells per axis")
    g.add_argument("--kt", type=int, default=None, help="time steps")
    g.add_argument("--dt", type=float, default=None, help="time step size")
    g.add_argument("--grf-b", type=float, default=None)
    g.add_argument("--grf-c", type=float, default=None)
    g.add_argument("--n-train", type=int, default=30)
    g.add_argument("--n-test", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--gamma", type=float, default=5.0,
                   help="reaction coefficient (allen-cahn)")
    g.add_argument("--nu", type=float, default=2e-4,
                   help="viscosity (navier-stokes)")
    g.add_argument("--tol", type=float, default=1e-5, help="solver tolerance")
    g.add_argument("--spinup", type=float, default=None,
                   help="initial-condition burn-in seconds (navier-stokes)")

    t = sub.add_parser("train", help="train the conditional score network")
    t.add_argument("--data", required=True)
    t.add_argument("--steps", type=int, default=10000)
    t.add_argument("--T", type=int, default=None, dest="steps_T",
                   help="number of noise levels")
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--lr0", type=float, default=2e-4)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--base-channels", type=int, default=None)
    t.add_argument("--multipliers", default=None,
                   help="comma-separated channel multipliers")
    t.add_argument("--middle", default=None,
                   help="comma-separated middle channels, empty for none")
    t.add_argument("--refine", type=int, default=1,
                   help="refinement steps recorded for sampling")

    s = sub.add_parser("sample", help="downscale one stored sample")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--id", type=int, required=True)
    s.add_argument("--method", choices=("ddpm", "ddim"), default="ddim")
    s.add_argument("--refine", type=int, default=None)
    s.add_argument("--out", required=True)

    b = sub.add_parser("bench", help="benchmark solvers on the test split")
    b.add_argument("--data", required=True)
    b.add_argument("--ckpt", default=None)
    b.add_argument("--solvers", default="csi,coarse_gn,fine")
    b.add_argument("--report", required=True)
    b.add_argument("--figures", default=None)
    b.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("plot", help="render stored fields to a PNG")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--ref", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--time-index", type=int, default=-1)

    return parser


def _preset_for(args):
    return problem_preset(args.eq, kc=args.kc, kf=args.kf, kt=args.kt,
                          dt=args.dt, gamma=args.gamma, nu=args.nu,
                          grf_b=args.grf_b, grf_c=args.grf_c)


def _cmd_gen_data(args) -> int:
    preset = _preset_for(args)
    coarse, fine, reference = problem_grids(
        preset.equation, preset.spatial_dim, preset.coarse_cells,
        preset.fine_cells)
    grf = GRFConfig(b=preset.grf_b, c=preset.grf_c,
                    boundary=preset.equation.boundary, seed=args.seed)
    manifest = generate_dataset(
        preset.equation, coarse, fine, reference, grf,
        args.n_train, args.n_test, args.out,
        lm_config=LMConfig(tolerance=args.tol),
        spinup_seconds=args.spinup,
        progress=lambda i, rec: print(
            f"sample {i}: {'failed' if rec['failed'] else 'ok'}"))
    failures = sum(1 for r in manifest.samples if r["failed"])
    print(f"wrote {len(manifest.samples)} samples "
          f"({failures} failed) to {manifest.root}")
    return 0


def _parse_int_list(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(int(x) for x in text.split(","))


def _cmd_train(args) -> int:
    manifest = load_manifest(args.data)
    name = {"nonlinear_poisson": "poisson2d", "allen_cahn": "allen-cahn",
            "navier_stokes": "navier-stokes"}[manifest.equation.kind.value]
    if name == "poisson2d" and manifest.fine_grid.spatial_dim == 3:
        name = "poisson3d"
    preset = problem_preset(name)
    data, scale = training_dataset(manifest)
    steps_T = args.steps_T or preset.train_T
    schedule = linear_beta_schedule(steps_T)
    field_channels = data[0][0].shape[0]
    arch = DenoiserArch(
        input_channels=2 * field_channels + 1,
        spatial_dim=manifest.fine_grid.spatial_dim,
        base_channels=args.base_channels or preset.base_channels,
        channel_multipliers=(_parse_int_list(args.multipliers)
                             if args.multipliers else (1, 2, 4, 8)),
        middle_channels=(_parse_int_list(args.middle)
                         if args.middle is not None
                         else preset.middle_channels))
    model = build_denoiser(arch, schedule, init_seed=args.seed)
    model.metadata.update({
        "data_scale": scale,
        "tau": list(default_tau(steps_T)),
        "refine_steps": args.refine,
        "equation": manifest.equation.to_dict(),
        "fine_grid": manifest.fine_grid.to_dict(),
        "dataset_seed": manifest.grf.seed,
    })
    config = TrainConfig(
        batch_size=args.batch or preset.batch_size,
        total_steps=args.steps, lr0=args.lr0, seed=args.seed)
    report_every = max(1, args.steps // 20)

    def progress(step, value):
        if step % report_every == 0 or step == args.steps - 1:
            print(f"step {step}: loss {value:.4e}")

    train(data, model, schedule, config, callback=progress)
    save_checkpoint(model, args.out)
    print(f"saved checkpoint to {args.out}")
    return 0


def _sampling_rng(model, sample_id, method):
    base = int(model.metadata.get("dataset_seed", 0))
    method_code = 0 if method == "ddim" else 1
    return np.random.default_rng(
        np.random.Philox(key=(base << 20) ^ (sample_id << 1) ^ method_code))


def _cmd_sample(args) -> int:
    model = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.data)
    matches = [r for r in manifest.sample_records(include_failed=True)
               if r["id"] == args.id]
    if not matches:
        raise ValueError(f"no sample with id {args.id}")
    record = matches[0]
    if record.get("failed"):
        raise ValueError(f"sample {args.id} is marked failed in the manifest")
    tup = manifest.load_tuple(record)
    config = model_diffusion_config(model, refine_steps=args.refine)
    rng = _sampling_rng(model, args.id, args.method)
    out = run_pgdm(model, config, tup.u_c, tup.a, manifest.equation,
                   rng=rng, method=args.method)
    write_field(out, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_bench(args) -> int:
    manifest = load_manifest(args.data)
    model = load_checkpoint(args.ckpt) if args.ckpt else None
    solvers = [s.strip() for s in args.solvers.split(",") if s.strip()]
    report = benchmark(manifest, solvers, model=model,
                       report_path=args.report, figures_dir=args.figures,
                       seed=args.seed)
    print(report.table())
    return 0


def _cmd_plot(args) -> int:
    fields = [read_field(path) for path in args.inputs]
    reference = read_field(args.ref) if args.ref else None
    titles = [str(p) for p in args.inputs]
    render_fields(fields, titles, args.out, reference=reference,
                  time_index=args.time_index)
    print(f"wrote {args.out}")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "bench": _cmd_bench,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return _HANDLERS[args.command](args)
    except ConvergenceError as exc:
        print(f"error: solve did not converge: {exc}", file=sys.stderr)
        return 3
    except np.linalg.LinAlgError as exc:
        print(f"error: linear solve failed: {exc}", file=sys.stderr)
        return 3
    except (FieldFormatError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
