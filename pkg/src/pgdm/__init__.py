"""Physics-guided generative downscaling of nonlinear PDE solvers.

Coarse-grid solutions of nonlinear PDEs are lifted to a fine grid by a
conditional denoising diffusion model and finished with a few Gauss-Newton
steps against the fine-grid discretized equations.  Classical baselines
(cubic spline super-resolution, direct fine solves, unrefined diffusion
samples) live alongside for benchmarking.

The neural network layer (``pgdm.denoiser``) and the command line
(``pgdm.cli``) import torch; everything exported here is numpy/scipy only.
"""

from .diffusion import (
    DiffusionConfig,
    NoiseSchedule,
    ddim_sample,
    ddpm_sample,
    default_tau,
    denoising_loss,
    forward_noising,
    linear_beta_schedule,
)
from .errors import ConvergenceError, FieldFormatError, TrainingError
from .fields import (
    Boundary,
    Field,
    GridSpec,
    csi_upsample,
    read_field,
    relative_l2_error,
    restrict,
    write_field,
)
from .grf import GRFConfig, grf_sample, sample_rng
from .nlsolve import (
    LMConfig,
    gauss_newton_step,
    implicit_euler_rollout,
    levenberg_marquardt,
)
from .operators import (
    EquationKind,
    EquationSpec,
    allen_cahn,
    navier_stokes,
    nonlinear_poisson,
    poisson_system,
    step_system,
    velocity_from_vorticity,
)
from .pipeline import (
    BenchReport,
    DatasetManifest,
    SampleTuple,
    benchmark,
    generate_dataset,
    load_manifest,
    problem_grids,
    problem_preset,
    refine_sample,
    render_fields,
    run_baseline,
    run_pgdm,
    sample_conditional,
    training_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "BenchReport",
    "Boundary",
    "ConvergenceError",
    "DatasetManifest",
    "DiffusionConfig",
    "EquationKind",
    "EquationSpec",
    "Field",
    "FieldFormatError",
    "GRFConfig",
    "GridSpec",
    "LMConfig",
    "NoiseSchedule",
    "SampleTuple",
    "TrainingError",
    "allen_cahn",
    "benchmark",
    "csi_upsample",
    "ddim_sample",
    "ddpm_sample",
    "default_tau",
    "denoising_loss",
    "forward_noising",
    "gauss_newton_step",
    "generate_dataset",
    "grf_sample",
    "implicit_euler_rollout",
    "levenberg_marquardt",
    "linear_beta_schedule",
    "load_manifest",
    "navier_stokes",
    "nonlinear_poisson",
    "poisson_system",
    "problem_grids",
    "problem_preset",
    "read_field",
    "refine_sample",
    "relative_l2_error",
    "render_fields",
    "restrict",
    "run_baseline",
    "run_pgdm",
    "sample_conditional",
    "sample_rng",
    "step_system",
    "training_dataset",
    "velocity_from_vorticity",
    "write_field",
    "__version__",
]
