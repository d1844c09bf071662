"""
Miniature end-to-end run of the downscaling pipeline
====================================================

Everything the full benchmark does, shrunk to a couple of minutes on one
core: generate a small Poisson dataset (coarse 8, fine 32), train a narrow
denoiser briefly, then compare the conditional sampler with and without
the physics refinement step against the classical baselines.

Expect rough generative numbers at this budget; the point is watching the
refinement step pull a mediocre sample toward the discrete solution.
"""

import tempfile
import time
from pathlib import Path

import numpy as np

from pgdm import Boundary
from pgdm.denoiser import DenoiserArch, TrainConfig, build_denoiser, train
from pgdm.diffusion import default_tau, linear_beta_schedule
from pgdm.grf import GRFConfig
from pgdm.pipeline import (
    benchmark,
    generate_dataset,
    problem_grids,
    training_dataset,
)
from pgdm.operators import nonlinear_poisson

t0 = time.time()
eq = nonlinear_poisson()
coarse, fine, reference = problem_grids(eq, 2, 8, 32)
grf = GRFConfig(b=7.0, c=1.6, boundary=Boundary.DIRICHLET_ZERO, seed=1)

root = Path(tempfile.mkdtemp(prefix="pgdm_demo_"))
manifest = generate_dataset(eq, coarse, fine, reference, grf,
                            n_train=12, n_test=4, out_dir=root / "data")
print(f"dataset ready after {time.time() - t0:.0f}s")

data, scale = training_dataset(manifest)
steps_T = 100
schedule = linear_beta_schedule(steps_T)
arch = DenoiserArch(input_channels=3, spatial_dim=2, base_channels=16,
                    channel_multipliers=(1, 2), middle_channels=(32,))
model = build_denoiser(arch, schedule, init_seed=0)
model.metadata.update({"data_scale": scale, "tau": list(default_tau(steps_T)),
                       "refine_steps": 1})

config = TrainConfig(batch_size=4, total_steps=800, seed=0)
losses = train(data, model, schedule, config,
               callback=lambda k, v: k % 200 == 0 and print(
                   f"  step {k}: loss {v:.3e}"))[1]
print(f"trained {config.total_steps} steps, "
      f"loss {losses[0]:.3e} -> {np.mean(losses[-50:]):.3e}")

report = benchmark(manifest, ["csi", "coarse_gn", "fine", "ddim", "pgdm"],
                   model=model, report_path=root / "report.csv")
print()
print(report.table())
print(f"\nartifacts in {root}, total {time.time() - t0:.0f}s")
