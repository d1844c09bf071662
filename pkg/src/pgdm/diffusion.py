"""Denoising diffusion machinery: schedule, forward process, two samplers.

Conventions, fixed across the package:

* schedule arrays are indexed by the time step ``t = 0..T`` with the
  ``t = 0`` slot holding the boundary values ``alpha_bar[0] = 1``,
  ``beta[0] = sigma[0] = 0`` (never a real step);
* the denoising network predicts the negative of the injected noise, so a
  perfectly trained score output satisfies ``s = -eps``;
* the ancestral (DDPM) sampler draws no noise on its final step, and the
  skip-step (DDIM) sampler is deterministic given the start.

A denoiser here is any callable ``(u_noisy, u_cond, source, t) -> score``
operating on arrays of a common spatial shape; the conditioning pair rides
along unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule; see the module docstring for index conventions."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.beta) - 1

    @staticmethod
    def from_betas(betas: np.ndarray) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("need a 1D array of at least one beta")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie strictly between 0 and 1")
        if np.any(np.diff(betas) < 0.0):
            raise ValueError("betas must be non-decreasing")
        beta = np.concatenate([[0.0], betas])
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        # sigma_t^2 = (1 - alpha_t)(1 - abar_{t-1}) / (1 - abar_t); sigma_1 = 0
        sigma2 = np.zeros_like(beta)
        sigma2[1:] = beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:])
        for arr in (beta, alpha, alpha_bar, sigma2):
            arr.flags.writeable = False
        sched = NoiseSchedule(beta, alpha, alpha_bar, np.sqrt(sigma2))
        sched.sigma.flags.writeable = False
        return sched

    def to_dict(self) -> dict:
        return {"betas": self.beta[1:].tolist()}

    @staticmethod
    def from_dict(d: dict) -> "NoiseSchedule":
        return NoiseSchedule.from_betas(np.asarray(d["betas"], dtype=np.float64))


def linear_beta_schedule(steps: int = 400, beta_start: float = 1e-4,
                         beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly spaced betas from ``beta_start`` to ``beta_end``."""
    if steps < 1:
        raise ValueError("need at least one step")
    if beta_end < beta_start:
        raise ValueError("beta_end must be >= beta_start")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, steps))


def default_tau(steps: int) -> tuple[int, ...]:
    """Skip-step subsequence 1, 5, 10, 15, ... ending exactly at ``steps``."""
    tau = [1] + list(range(5, steps + 1, 5))
    if tau[-1] != steps:
        tau.append(steps)
    return tuple(tau)


@dataclass(frozen=True)
class DiffusionConfig:
    """Schedule plus the sampling controls: skip subsequence ``tau`` and the
    number of downstream refinement steps."""

    schedule: NoiseSchedule
    tau: tuple[int, ...] = ()
    refine_steps: int = 1

    def __post_init__(self):
        tau = tuple(int(t) for t in self.tau) or default_tau(self.schedule.steps)
        if any(b <= a for a, b in zip(tau, tau[1:])):
            raise ValueError("tau must be strictly increasing")
        if tau[0] < 1:
            raise ValueError("tau must start at a step >= 1")
        if tau[-1] != self.schedule.steps:
            raise ValueError(f"tau must end at T = {self.schedule.steps}")
        object.__setattr__(self, "tau", tau)
        if self.refine_steps < 0:
            raise ValueError("refine_steps must be >= 0")


def forward_noising(x0: np.ndarray, t: int, eps: np.ndarray,
                    schedule: NoiseSchedule) -> np.ndarray:
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`` for ``1 <= t <= T``."""
    if not 1 <= t <= schedule.steps:
        raise ValueError(f"t must be in 1..{schedule.steps}, got {t}")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError("x0 and eps must share a shape")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def denoising_loss(score: np.ndarray, eps: np.ndarray) -> float:
    """Mean over the leading batch axis of ``||score + eps||^2``."""
    score = np.asarray(score, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if score.shape != eps.shape:
        raise ValueError("score and eps must share a shape")
    diff = (score + eps).reshape(score.shape[0], -1)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def _start_state(cond, rng, initial):
    if initial is not None:
        return np.array(initial, dtype=np.float64, copy=True)
    if rng is None:
        raise ValueError("need either an initial state or an rng to draw one")
    u_cond = cond[0]
    return rng.standard_normal(np.shape(u_cond))


def ddpm_sample(denoiser, cond, config: DiffusionConfig, rng=None,
                initial=None) -> np.ndarray:
    """Ancestral sampling through every step ``T..1``.

    ``cond = (u_cond, source)`` is handed to the denoiser unchanged; the
    start is drawn from ``rng`` unless ``initial`` is given.  With
    ``rng=None`` every noise injection is zero (the deterministic limit used
    by the tests); the final step injects no noise either way.
    """
    sched = config.schedule
    u_cond, source = cond
    u = _start_state(cond, rng, initial)
    for t in range(sched.steps, 0, -1):
        score = denoiser(u, u_cond, source, t)
        coef = (1.0 - sched.alpha[t]) / np.sqrt(1.0 - sched.alpha_bar[t])
        u = (u + coef * score) / np.sqrt(sched.alpha[t])
        if t > 1 and rng is not None:
            u = u + sched.sigma[t] * rng.standard_normal(u.shape)
    return u


def ddim_update(u, score, ab_now, ab_next):
    """One deterministic skip step from noise level ``ab_now`` to ``ab_next``."""
    ratio = np.sqrt(ab_next / ab_now)
    return ratio * u + (np.sqrt(1.0 - ab_now) * ratio - np.sqrt(1.0 - ab_next)) * score


def ddim_sample(denoiser, cond, config: DiffusionConfig, rng=None,
                initial=None) -> np.ndarray:
    """Deterministic skip-step sampling down the ``tau`` subsequence."""
    sched = config.schedule
    u_cond, source = cond
    u = _start_state(cond, rng, initial)
    tau = config.tau
    for i in range(len(tau) - 1, -1, -1):
        t = tau[i]
        t_next = tau[i - 1] if i > 0 else 0
        score = denoiser(u, u_cond, source, t)
        u = ddim_update(u, score, sched.alpha_bar[t], sched.alpha_bar[t_next])
    return u
