"""Shared helpers for the test suite."""

import numpy as np


def fd_jacobian_error(system, u, rng, n_dirs=5, eps=1e-6, residual=None):
    """Worst directional mismatch ||J v - central FD|| / ||v||.

    ``residual`` overrides the differenced map (defaults to the system's own).
    """
    res = residual if residual is not None else system.residual
    jac = system.jacobian(u)
    worst = 0.0
    for _ in range(n_dirs):
        v = rng.standard_normal(u.shape)
        numeric = (res(u + eps * v) - res(u - eps * v)) / (2.0 * eps)
        analytic = jac @ v
        worst = max(worst, np.linalg.norm(analytic - numeric) / np.linalg.norm(v))
    return worst


def periodic_laplacian_eigenvalue(k_int, cells):
    """Eigenvalue of minus the discrete periodic Laplacian for mode k."""
    h = 1.0 / cells
    return (2.0 / h ** 2) * (1.0 - np.cos(2.0 * np.pi * k_int * h))


def dirichlet_laplacian_eigenvalue(k_int, cells):
    h = 1.0 / cells
    return (2.0 / h ** 2) * (1.0 - np.cos(np.pi * k_int * h))


def gaussian_exact_score(schedule, mean, std):
    """Ideal score network for scalar data drawn from N(mean, std^2).

    The forward marginal at step t is N(sqrt(abar_t) mean, abar_t std^2 +
    1 - abar_t); the optimal noise predictor is its standardised deviation,
    and the network convention is its negative.
    """

    def score(u, u_cond, source, t):
        ab = schedule.alpha_bar[t]
        var = ab * std ** 2 + 1.0 - ab
        return -np.sqrt(1.0 - ab) * (u - np.sqrt(ab) * mean) / var

    return score


def gaussian_ancestral_moments(schedule, mean, std):
    """Exact (mean, variance) of the ancestral chain output under the ideal
    score, starting from a standard normal at step T.

    Each update is affine in the state, so the moments obey a linear
    recursion; this is the closed form the sampler is checked against.
    """
    m, v = 0.0, 1.0
    for t in range(schedule.steps, 0, -1):
        ab = schedule.alpha_bar[t]
        var = ab * std ** 2 + 1.0 - ab
        shrink = (1.0 - schedule.alpha[t]) / var
        gain = (1.0 - shrink) / np.sqrt(schedule.alpha[t])
        offset = shrink * np.sqrt(ab) * mean / np.sqrt(schedule.alpha[t])
        m = gain * m + offset
        noise = schedule.sigma[t] if t > 1 else 0.0
        v = gain ** 2 * v + noise ** 2
    return m, v
