"""
Diffusion schedule and the two samplers on a toy target
=======================================================

With scalar data from N(1.5, 0.36) the ideal score network has a closed
form, so both samplers can run against ground truth: ancestral sampling
over all 400 steps and the deterministic skip-step sampler over 81.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from pgdm.diffusion import (
    DiffusionConfig,
    ddim_sample,
    ddpm_sample,
    default_tau,
    linear_beta_schedule,
)

schedule = linear_beta_schedule(400)
print(f"beta_1 = {schedule.beta[1]:.1e}, beta_400 = {schedule.beta[400]:.3f}, "
      f"abar_400 = {schedule.alpha_bar[400]:.4f}")

mean, std = 1.5, 0.6


def exact_score(u, u_cond, source, t):
    ab = schedule.alpha_bar[t]
    var = ab * std ** 2 + 1.0 - ab
    return -np.sqrt(1.0 - ab) * (u - np.sqrt(ab) * mean) / var


n = 4000
cond = (np.zeros(n), np.zeros(n))
rng = np.random.default_rng(0)
ancestral = ddpm_sample(exact_score, cond, DiffusionConfig(schedule), rng=rng)

tau = tuple(default_tau(400))
skip = ddim_sample(exact_score, cond, DiffusionConfig(schedule, tau=tau),
                   rng=np.random.default_rng(1))

print(f"\ntarget             mean {mean:.3f}  std {std:.3f}")
print(f"ancestral (400)    mean {ancestral.mean():.3f}  std {ancestral.std():.3f}")
print(f"skip-step ({len(tau):3d})     mean {skip.mean():.3f}  std {skip.std():.3f}")

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)
fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.2))
t = np.arange(schedule.steps + 1)
left.plot(t, schedule.alpha_bar, label="abar")
left.plot(t, schedule.sigma ** 2, label="sigma^2")
left.set_xlabel("t")
left.legend()
bins = np.linspace(-1, 4, 60)
right.hist(ancestral, bins=bins, alpha=0.6, density=True, label="ancestral")
right.hist(skip, bins=bins, alpha=0.6, density=True, label="skip-step")
x = np.linspace(-1, 4, 200)
right.plot(x, np.exp(-0.5 * ((x - mean) / std) ** 2) / (std * np.sqrt(2 * np.pi)),
           "k--", label="target")
right.legend()
fig.tight_layout()
fig.savefig(out / "samplers.png", dpi=110)
print(f"wrote {out / 'samplers.png'}")
