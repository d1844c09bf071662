"""End-to-end orchestration: datasets, inference, baselines, benchmarks.

A dataset directory holds one manifest plus one subdirectory per sample:

    out/
      manifest.json
      sample_0000/a.field      source (or initial condition), fine grid
      sample_0000/u_c.field    coarse solve upsampled to the fine grid
      sample_0000/u_f.field    fine solve
      sample_0000/u_r.field    reference solve restricted (test split only)

Everything stored is a deterministic function of the manifest contents:
each sample derives its noise from a counter-based generator keyed by the
master seed and the sample index, so regeneration is bitwise identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import DiffusionConfig, ddim_sample, ddpm_sample, default_tau
from .errors import ConvergenceError, FieldFormatError
from .fields import (
    Field,
    GridSpec,
    csi_upsample,
    read_field,
    relative_l2_error,
    restrict,
    write_field,
)
from .grf import GRFConfig, grf_sample, sample_rng
from .nlsolve import LMConfig, gauss_newton_step, implicit_euler_rollout, levenberg_marquardt
from .operators import (
    CrankNicolsonNS,
    EquationKind,
    EquationSpec,
    allen_cahn,
    navier_stokes,
    nonlinear_poisson,
    poisson_system,
    step_system,
)

_MANIFEST_VERSION = 1
_MANIFEST_NAME = "manifest.json"

NS_REFERENCE_DT = 5e-5
NS_SPINUP_SECONDS = 2.0

BASELINE_NAMES = ("csi", "coarse_gn", "fine", "ddpm", "ddim")
SOLVER_NAMES = BASELINE_NAMES + ("pgdm",)


# ---------------------------------------------------------------------------
# problem presets

@dataclass(frozen=True)
class ProblemPreset:
    """One benchmark family with its grids, input statistics and default
    training hyperparameters."""

    name: str
    equation: EquationSpec
    spatial_dim: int
    coarse_cells: int
    fine_cells: int
    grf_b: float
    grf_c: float
    train_T: int
    batch_size: int
    base_channels: int
    middle_channels: tuple


def problem_preset(name: str, kc=None, kf=None, kt=None, dt=None,
                   gamma=5.0, nu=2e-4, grf_b=None, grf_c=None) -> ProblemPreset:
    if name in ("poisson2d", "poisson3d"):
        dim = 2 if name == "poisson2d" else 3
        return ProblemPreset(
            name, nonlinear_poisson(), dim,
            coarse_cells=kc or 16, fine_cells=kf or (128 if dim == 2 else 64),
            grf_b=grf_b or 7.0, grf_c=grf_c or 1.6,
            train_T=400, batch_size=4 if dim == 2 else 2,
            base_channels=128,
            middle_channels=(512, 512) if dim == 2 else (1024, 1024))
    if name == "allen-cahn":
        eq = allen_cahn(gamma=gamma, dt=dt or 0.05, time_steps=kt or 10)
        return ProblemPreset(
            name, eq, 2, coarse_cells=kc or 16, fine_cells=kf or 128,
            grf_b=grf_b or 7.0, grf_c=grf_c or 1.6,
            train_T=400, batch_size=2, base_channels=256,
            middle_channels=(1024, 1024))
    if name == "navier-stokes":
        eq = navier_stokes(nu=nu, dt=dt or 0.05, time_steps=kt or 40)
        return ProblemPreset(
            name, eq, 2, coarse_cells=kc or 16, fine_cells=kf or 64,
            grf_b=grf_b or 5.0, grf_c=grf_c or 5.0,
            train_T=200, batch_size=2, base_channels=128,
            middle_channels=(1024, 1024))
    raise ValueError(f"unknown problem preset {name!r}")


def problem_grids(equation: EquationSpec, spatial_dim: int, coarse_cells: int,
                  fine_cells: int):
    """Coarse/fine/reference grids for an equation.

    The reference solver runs at doubled resolution; evolution references
    also shrink the time step (halved for the reaction-diffusion problem,
    the fixed fine step for vorticity transport).
    """
    if equation.time_steps == 0:
        make = lambda cells: GridSpec(spatial_dim, cells, equation.boundary)
        return make(coarse_cells), make(fine_cells), make(2 * fine_cells)
    make = lambda cells: GridSpec(spatial_dim, cells, equation.boundary,
                                  equation.time_steps, equation.dt)
    coarse, fine = make(coarse_cells), make(fine_cells)
    if equation.kind is EquationKind.ALLEN_CAHN:
        reference = GridSpec(spatial_dim, 2 * fine_cells, equation.boundary,
                             2 * equation.time_steps, equation.dt / 2.0)
    else:
        total = equation.time_steps * equation.dt
        steps = int(round(total / NS_REFERENCE_DT))
        reference = GridSpec(spatial_dim, 2 * fine_cells, equation.boundary,
                             steps, NS_REFERENCE_DT)
    return coarse, fine, reference


# ---------------------------------------------------------------------------
# manifest

@dataclass
class DatasetManifest:
    equation: EquationSpec
    coarse_grid: GridSpec
    fine_grid: GridSpec
    reference_grid: GridSpec
    grf: GRFConfig
    n_train: int
    n_test: int
    seeds: tuple
    samples: list
    root: Path

    def sample_records(self, split=None, include_failed=False):
        out = []
        for rec in self.samples:
            if split is not None and rec["split"] != split:
                continue
            if rec.get("failed") and not include_failed:
                continue
            out.append(rec)
        return out

    def field_path(self, record, name) -> Path:
        return self.root / record["files"][name]

    def load_field(self, record, name) -> Field:
        return read_field(self.field_path(record, name), grid=self.fine_grid)

    def load_source(self, record) -> Field:
        grid = self.fine_grid.spatial()
        return read_field(self.field_path(record, "a"), grid=grid)

    def load_tuple(self, record) -> "SampleTuple":
        u_r = None
        if "u_r" in record["files"]:
            u_r = self.load_field(record, "u_r")
        return SampleTuple(
            u_c=self.load_field(record, "u_c"),
            u_f=self.load_field(record, "u_f"),
            u_r=u_r,
            a=self.load_source(record))

    def config_dict(self) -> dict:
        return {
            "format_version": _MANIFEST_VERSION,
            "equation": self.equation.to_dict(),
            "coarse_grid": self.coarse_grid.to_dict(),
            "fine_grid": self.fine_grid.to_dict(),
            "reference_grid": self.reference_grid.to_dict(),
            "grf": self.grf.to_dict(),
            "n_train": self.n_train,
            "n_test": self.n_test,
            "seeds": list(self.seeds),
        }

    def save(self):
        payload = self.config_dict()
        payload["samples"] = self.samples
        path = self.root / _MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")


@dataclass
class SampleTuple:
    """One data point, every field on the fine grid; the reference solution
    is present for the test split only."""

    u_c: Field
    u_f: Field
    a: Field
    u_r: Field | None = None


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / _MANIFEST_NAME
    if not path.exists():
        raise FieldFormatError(f"no dataset manifest at {path}")
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != _MANIFEST_VERSION:
        raise FieldFormatError(
            f"unsupported manifest version {payload.get('format_version')}")
    manifest = DatasetManifest(
        equation=EquationSpec.from_dict(payload["equation"]),
        coarse_grid=GridSpec.from_dict(payload["coarse_grid"]),
        fine_grid=GridSpec.from_dict(payload["fine_grid"]),
        reference_grid=GridSpec.from_dict(payload["reference_grid"]),
        grf=GRFConfig.from_dict(payload["grf"]),
        n_train=int(payload["n_train"]),
        n_test=int(payload["n_test"]),
        seeds=tuple(payload["seeds"]),
        samples=payload["samples"],
        root=root)
    missing = []
    for rec in manifest.sample_records(include_failed=False):
        for rel in rec["files"].values():
            if not (root / rel).exists():
                missing.append(rel)
    if missing:
        raise FieldFormatError(
            f"manifest references missing files: {', '.join(sorted(missing))}")
    return manifest


# ---------------------------------------------------------------------------
# dataset generation

def _zero_start(grid: GridSpec) -> np.ndarray:
    return np.zeros(grid.node_count)


def _solve_static(equation, grid, source: Field, lm_config):
    system = poisson_system(equation, grid, source)
    solution, _ = levenberg_marquardt(system, _zero_start(grid), lm_config)
    return Field(grid, solution.reshape(grid.spatial_shape))


def _reference_trajectory_ac(equation, reference_grid, u0_ref: Field,
                             fine_grid, lm_config):
    doubled = dataclasses.replace(equation, dt=reference_grid.dt,
                                  time_steps=reference_grid.time_steps)
    traj = implicit_euler_rollout(doubled, u0_ref, reference_grid, lm_config)
    kept = traj.values[1::2]
    half = GridSpec(fine_grid.spatial_dim, reference_grid.cells,
                    fine_grid.boundary, fine_grid.time_steps, fine_grid.dt)
    return restrict(Field(half, kept), fine_grid)


def _reference_trajectory_ns(equation, reference_grid, w0_ref: Field,
                             fine_grid):
    substeps = int(round(equation.dt / reference_grid.dt))
    if not np.isclose(substeps * reference_grid.dt, equation.dt):
        raise ValueError("reference dt must divide the sampling step")
    scheme = CrankNicolsonNS(equation, w0_ref.grid, reference_grid.dt)
    w = np.asarray(w0_ref.values)
    frames = np.empty((equation.time_steps,) + w.shape)
    for n in range(equation.time_steps):
        for _ in range(substeps):
            w = scheme.step(w)
        frames[n] = w
    half = GridSpec(fine_grid.spatial_dim, reference_grid.cells,
                    fine_grid.boundary, fine_grid.time_steps, fine_grid.dt)
    return restrict(Field(half, frames), fine_grid)


def _spin_up_ns(equation, w0: Field, dt, seconds) -> Field:
    if seconds <= 0:
        return w0
    scheme = CrankNicolsonNS(equation, w0.grid, dt)
    w = np.asarray(w0.values)
    for _ in range(int(round(seconds / dt))):
        w = scheme.step(w)
    return Field(w0.grid, w)


def generate_dataset(equation: EquationSpec, coarse_grid: GridSpec,
                     fine_grid: GridSpec, reference_grid: GridSpec,
                     grf: GRFConfig, n_train: int, n_test: int, out_dir,
                     lm_config: LMConfig | None = None,
                     spinup_seconds: float | None = None,
                     progress=None) -> DatasetManifest:
    """Generate, solve and store ``n_train + n_test`` sample tuples.

    The random function is drawn once per sample on the reference grid and
    restricted to every coarser grid, so all solvers see the same underlying
    input.  Vorticity initial conditions are first evolved for a burn-in
    period by the reference stepper.  A sample whose solve fails to converge
    is recorded as failed with its diagnostic and generation continues.
    """
    if n_train < 0 or n_test < 0 or n_train + n_test == 0:
        raise ValueError("need a positive number of samples")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    evolution = equation.time_steps > 0
    ref_spatial = reference_grid.spatial()
    coarse_spatial = coarse_grid.spatial()
    fine_spatial = fine_grid.spatial()
    if spinup_seconds is None:
        spinup_seconds = NS_SPINUP_SECONDS

    seeds = [grf.seed ^ i for i in range(n_train + n_test)]
    manifest = DatasetManifest(
        equation=equation, coarse_grid=coarse_grid, fine_grid=fine_grid,
        reference_grid=reference_grid, grf=grf, n_train=n_train,
        n_test=n_test, seeds=tuple(seeds), samples=[], root=root)

    for i in range(n_train + n_test):
        split = "train" if i < n_train else "test"
        tag = f"sample_{i:04d}"
        record = {"id": i, "split": split, "files": {}, "failed": False}
        sample_dir = root / tag
        try:
            rng = sample_rng(grf, i)
            a_ref = grf_sample(grf, ref_spatial, rng=rng)
            if equation.kind is EquationKind.NAVIER_STOKES:
                a_ref = _spin_up_ns(equation, a_ref, reference_grid.dt,
                                    spinup_seconds)
            a_fine = restrict(a_ref, fine_spatial)
            a_coarse = restrict(a_ref, coarse_spatial)

            if evolution:
                coarse_traj = implicit_euler_rollout(
                    equation, a_coarse, coarse_grid, lm_config)
                u_c = csi_upsample(coarse_traj, fine_grid)
                u_f = implicit_euler_rollout(equation, a_fine, fine_grid,
                                             lm_config)
            else:
                coarse_sol = _solve_static(equation, coarse_spatial, a_coarse,
                                           lm_config)
                u_c = csi_upsample(coarse_sol, fine_spatial)
                u_f = _solve_static(equation, fine_spatial, a_fine, lm_config)

            u_r = None
            if split == "test":
                if not evolution:
                    ref_sol = _solve_static(equation, ref_spatial, a_ref,
                                            lm_config)
                    u_r = restrict(ref_sol, fine_spatial)
                elif equation.kind is EquationKind.ALLEN_CAHN:
                    u_r = _reference_trajectory_ac(
                        equation, reference_grid, a_ref, fine_grid, lm_config)
                else:
                    u_r = _reference_trajectory_ns(
                        equation, reference_grid, a_ref, fine_grid)

            sample_dir.mkdir(exist_ok=True)
            for name, field in (("a", a_fine), ("u_c", u_c), ("u_f", u_f),
                                ("u_r", u_r)):
                if field is None:
                    continue
                rel = f"{tag}/{name}.field"
                write_field(field, root / rel)
                record["files"][name] = rel
        except (ConvergenceError, np.linalg.LinAlgError) as exc:
            record["failed"] = True
            record["error"] = str(exc)
            record["files"] = {}
        manifest.samples.append(record)
        if progress is not None:
            progress(i, record)

    manifest.save()
    return manifest


# ---------------------------------------------------------------------------
# conditioning layout and training data

def channels_first(field: Field) -> np.ndarray:
    """Trajectories put time on the channel axis; static fields get one."""
    if field.grid.time_steps > 0:
        return np.asarray(field.values)
    return np.asarray(field.values)[None]


def field_from_channels(values: np.ndarray, grid: GridSpec) -> Field:
    if grid.time_steps > 0:
        return Field(grid, values)
    return Field(grid, values[0])


def training_dataset(manifest: DatasetManifest):
    """Scaled (fine, coarse, source) triples plus the scale itself.

    One scalar, the standard deviation of the stacked fine-solution values
    over the training split, normalizes all three channels groups; samples
    produced by the model are multiplied back by the same scale.
    """
    records = manifest.sample_records(split="train")
    if not records:
        raise ValueError("dataset has no usable training samples")
    fines, coarses, sources = [], [], []
    for rec in records:
        tup = manifest.load_tuple(rec)
        fines.append(channels_first(tup.u_f))
        coarses.append(channels_first(tup.u_c))
        sources.append(channels_first(tup.a))
    scale = float(np.std(np.concatenate([f.ravel() for f in fines])))
    if scale == 0.0:
        scale = 1.0
    data = [(f / scale, c / scale, s / scale)
            for f, c, s in zip(fines, coarses, sources)]
    return data, scale


def model_diffusion_config(model, refine_steps=None) -> DiffusionConfig:
    tau = model.metadata.get("tau")
    tau = tuple(tau) if tau else default_tau(model.schedule.steps)
    if refine_steps is None:
        refine_steps = int(model.metadata.get("refine_steps", 1))
    return DiffusionConfig(model.schedule, tau=tau, refine_steps=refine_steps)


# ---------------------------------------------------------------------------
# inference

def sample_conditional(model, config: DiffusionConfig, u_c: Field, a: Field,
                       rng=None, method="ddim") -> Field:
    """Draw one conditional sample on the fine grid, in physical units."""
    if method not in ("ddim", "ddpm"):
        raise ValueError(f"unknown sampling method {method!r}")
    scale = float(model.metadata.get("data_scale", 1.0))
    cond = (channels_first(u_c) / scale, channels_first(a) / scale)
    if rng is None:
        rng = np.random.default_rng()
    sampler = ddim_sample if method == "ddim" else ddpm_sample
    raw = sampler(model, cond, config, rng=rng)
    return field_from_channels(raw * scale, u_c.grid)


def _refine_static(sample: Field, a: Field, equation, steps):
    grid = sample.grid
    system = poisson_system(equation, grid, a)
    u = sample
    for _ in range(steps):
        u = gauss_newton_step(system, u)
    return u

def _refine_evolution(sample: Field, a: Field, equation, steps):
    grid = sample.grid
    spatial = grid.spatial()
    previous = np.asarray(a.values)
    refined = np.empty(grid.shape)
    for n in range(grid.time_steps):
        state = Field(spatial, sample.values[n])
        system = step_system(equation, spatial, previous)
        for _ in range(steps):
            state = gauss_newton_step(system, state)
        refined[n] = state.values
        previous = refined[n]
    return Field(grid, refined)


def refine_sample(sample: Field, a: Field, equation: EquationSpec,
                  steps: int) -> Field:
    """Newton-style polish against the fine-grid discretized equations.

    Evolution problems refine time steps in order, each implicit-Euler
    system built from the previously refined state.  A failed linear solve
    abandons refinement and returns the sample unchanged, with a warning.
    """
    if steps <= 0:
        return sample
    try:
        if equation.time_steps > 0:
            return _refine_evolution(sample, a, equation, steps)
        return _refine_static(sample, a, equation, steps)
    except np.linalg.LinAlgError as exc:
        warnings.warn(f"refinement abandoned ({exc}); returning raw sample")
        return sample


def run_pgdm(model, config: DiffusionConfig, u_c: Field, a: Field,
             equation: EquationSpec, rng=None, method="ddim",
             sample: Field | None = None) -> Field:
    """Conditional sample followed by physics refinement.

    ``sample`` overrides the generative draw (diagnostic seam); otherwise a
    skip-step (or ancestral, per ``method``) sample conditioned on
    ``(u_c, a)`` is drawn first.
    """
    if sample is None:
        sample = sample_conditional(model, config, u_c, a, rng=rng,
                                    method=method)
    return refine_sample(sample, a, equation, config.refine_steps)


def run_baseline(name: str, sample: SampleTuple, equation: EquationSpec,
                 model=None, config: DiffusionConfig | None = None,
                 rng=None, refine_steps: int = 1,
                 lm_config: LMConfig | None = None) -> Field:
    """One of the classical or generative reference solvers.

    csi: the stored upsampled coarse solution as-is.  coarse_gn: the same
    plus refinement.  fine: a fresh fine-grid solve.  ddpm/ddim: raw
    conditional samples without refinement (these need ``model``).
    """
    if name == "csi":
        return sample.u_c
    if name == "coarse_gn":
        return refine_sample(sample.u_c, sample.a, equation, refine_steps)
    if name == "fine":
        if equation.time_steps > 0:
            return implicit_euler_rollout(equation, sample.a,
                                          sample.u_f.grid, lm_config)
        grid = sample.u_f.grid
        return _solve_static(equation, grid, sample.a, lm_config)
    if name in ("ddpm", "ddim"):
        if model is None:
            raise ValueError(f"the {name} baseline needs a trained model")
        if config is None:
            config = model_diffusion_config(model)
        return sample_conditional(model, config, sample.u_c, sample.a,
                                  rng=rng, method=name)
    raise ValueError(f"unknown baseline {name!r}")


# ---------------------------------------------------------------------------
# benchmarking

@dataclass
class BenchReport:
    rows: list
    config_hash: str
    excluded: dict

    def table(self) -> str:
        lines = [f"{'solver':<12} {'mean_rel_l2':>12} {'mean_seconds':>13} {'M':>4}"]
        for row in self.rows:
            lines.append(f"{row['solver']:<12} {row['mean_rel_l2']:>12.4e} "
                         f"{row['mean_seconds']:>13.4e} {row['m']:>4d}")
        if any(self.excluded.values()):
            parts = ", ".join(f"{k}: {v}" for k, v in self.excluded.items() if v)
            lines.append(f"excluded failures: {parts}")
        lines.append(f"config {self.config_hash}")
        return "\n".join(lines)


def _config_hash(manifest: DatasetManifest) -> str:
    blob = json.dumps(manifest.config_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def benchmark(manifest: DatasetManifest, solvers, model=None,
              report_path=None, figures_dir=None, seed=0,
              refine_steps=None, lm_config=None) -> BenchReport:
    """Run each solver over the test split and aggregate error and time.

    Timing covers the solve call only; loading and error computation sit
    outside the clock.  Failed samples are excluded from a solver's
    averages and counted in the report.
    """
    solvers = list(solvers)
    unknown = [s for s in solvers if s not in SOLVER_NAMES]
    if unknown:
        raise ValueError(f"unknown solvers: {', '.join(unknown)}")
    needs_model = [s for s in solvers if s in ("pgdm", "ddpm", "ddim")]
    if needs_model and model is None:
        raise ValueError(
            f"solvers {', '.join(needs_model)} need a trained model")
    records = [rec for rec in manifest.sample_records(split="test")
               if "u_r" in rec["files"]]
    if not records:
        raise ValueError("dataset has no usable test samples with references")
    tuples = [manifest.load_tuple(rec) for rec in records]
    config = model_diffusion_config(model, refine_steps) if model else None
    t_s = refine_steps
    if t_s is None:
        t_s = config.refine_steps if config else 1

    rows, excluded = [], {}
    first_outputs = {}
    for solver_index, name in enumerate(solvers):
        errors, seconds = [], []
        failures = 0
        for j, tup in enumerate(tuples):
            rng = np.random.default_rng(
                np.random.Philox(key=(seed << 16) ^ (solver_index << 8) ^ j))
            start = time.perf_counter()
            try:
                if name == "pgdm":
                    out = run_pgdm(model, config, tup.u_c, tup.a,
                                   manifest.equation, rng=rng)
                else:
                    out = run_baseline(
                        name, tup, manifest.equation, model=model,
                        config=config, rng=rng, refine_steps=t_s,
                        lm_config=lm_config)
            except (ConvergenceError, np.linalg.LinAlgError):
                failures += 1
                continue
            seconds.append(time.perf_counter() - start)
            errors.append(relative_l2_error(out, tup.u_r))
            if j == 0:
                first_outputs[name] = out
        excluded[name] = failures
        if errors:
            rows.append({"solver": name,
                         "mean_rel_l2": float(np.mean(errors)),
                         "mean_seconds": float(np.mean(seconds)),
                         "m": len(errors)})
        else:
            rows.append({"solver": name, "mean_rel_l2": float("nan"),
                         "mean_seconds": float("nan"), "m": 0})

    report = BenchReport(rows=rows, config_hash=_config_hash(manifest),
                         excluded=excluded)
    if report_path is not None:
        write_bench_csv(report, report_path)
        text_path = Path(report_path).with_suffix(".txt")
        text_path.write_text(report.table() + "\n", encoding="utf-8")
    if figures_dir is not None and first_outputs:
        Path(figures_dir).mkdir(parents=True, exist_ok=True)
        names = list(first_outputs)
        render_fields([first_outputs[n] for n in names], names,
                      Path(figures_dir) / "comparison.png",
                      reference=tuples[0].u_r)
    return report


def write_bench_csv(report: BenchReport, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("solver,mean_rel_l2,mean_seconds,M,config_hash\n")
        for row in report.rows:
            fh.write(f"{row['solver']},{row['mean_rel_l2']:.10e},"
                     f"{row['mean_seconds']:.10e},{row['m']},"
                     f"{report.config_hash}\n")


# ---------------------------------------------------------------------------
# rendering

def _panel(field, time_index: int) -> np.ndarray:
    """Reduce a field (or bare array) to one 2D heatmap.

    Trajectories take the requested time index, volumes their middle plane.
    A bare rank-3 cube is read as a volume; non-cubes as trajectories.
    """
    if hasattr(field, "grid"):
        values = np.asarray(field.values)
        if field.grid.time_steps > 0:
            values = values[time_index]
        if values.ndim == 3:
            values = values[:, :, values.shape[2] // 2]
        return values
    values = np.asarray(field)
    if values.ndim == 4:
        values = values[time_index]
    if values.ndim == 3:
        if values.shape[0] == values.shape[2]:
            values = values[:, :, values.shape[2] // 2]
        else:
            values = values[time_index]
    return values


def render_fields(fields, titles, out_path, reference: Field | None = None,
                  time_index: int = -1):
    """Heatmap grid: one row of predictions, optionally a row of absolute
    errors against ``reference``.  Color scales are shared within a row."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fields = list(fields)
    titles = list(titles)
    if len(fields) != len(titles):
        raise ValueError("need one title per field")
    if not fields:
        raise ValueError("nothing to render")
    panels = [_panel(f, time_index) for f in fields]
    ref_panel = None if reference is None else _panel(reference, time_index)
    shown = panels + ([ref_panel] if ref_panel is not None else [])
    shown_titles = titles + (["reference"] if ref_panel is not None else [])
    vmin = min(p.min() for p in shown)
    vmax = max(p.max() for p in shown)

    n_rows = 1 if ref_panel is None else 2
    n_cols = len(shown)
    fig, axes = plt.subplots(n_rows, n_cols,
                             figsize=(2.6 * n_cols, 2.6 * n_rows),
                             squeeze=False)
    for ax, panel, title in zip(axes[0], shown, shown_titles):
        im = ax.imshow(panel.T, origin="lower", vmin=vmin, vmax=vmax)
        ax.set_title(title, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=list(axes[0]), shrink=0.8)

    if ref_panel is not None:
        errors = [np.abs(p - ref_panel) for p in panels]
        emax = max(e.max() for e in errors) or 1.0
        for ax, err in zip(axes[1], errors):
            im = ax.imshow(err.T, origin="lower", vmin=0.0, vmax=emax,
                           cmap="magma")
            ax.set_title("abs error", fontsize=9)
            ax.set_xticks([])
            ax.set_yticks([])
        axes[1][-1].axis("off")
        fig.colorbar(im, ax=list(axes[1]), shrink=0.8)

    fig.savefig(out_path, dpi=100, metadata={"Software": None})
    plt.close(fig)
