"""Damped least-squares solvers and implicit Euler time marching.

The workhorse is a Levenberg-Marquardt iteration on the residual systems of
:mod:`pgdm.operators`: solve ``(J^T J + lam diag(J^T J)) delta = -J^T r``,
accept the step only if it does not increase ``||r||`` (halving ``lam``),
otherwise keep the iterate and double ``lam``.  A single undamped
Gauss-Newton step is the refinement primitive used downstream.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .errors import ConvergenceError
from .fields import Field, GridSpec
from .operators import EquationSpec, ResidualSystem, step_system


@dataclass(frozen=True)
class LMConfig:
    """Initial damping, residual-norm tolerance, attempt budget."""

    damping: float = 0.5
    tolerance: float = 1e-5
    max_iterations: int = 500

    def __post_init__(self):
        if self.damping <= 0:
            raise ValueError("damping must be positive")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


def _flatten(system: ResidualSystem, u0):
    if isinstance(u0, Field):
        return np.asarray(u0.values, dtype=np.float64).ravel().copy(), True
    u = np.asarray(u0, dtype=np.float64).ravel().copy()
    if u.size != system.n:
        raise ValueError(f"initial iterate has size {u.size}, system has {system.n}")
    return u, False


def _wrap(system: ResidualSystem, u, as_field):
    if as_field:
        return Field(system.grid, u.reshape(system.grid.spatial_shape))
    return u


def _solve_normal(A, rhs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MatrixRankWarning)
        delta = spsolve(A.tocsr(), rhs)
    if not np.all(np.isfinite(delta)):
        raise np.linalg.LinAlgError("normal equations are singular")
    return delta


def levenberg_marquardt(system: ResidualSystem, u0, config: LMConfig | None = None,
                        callback=None):
    """Drive ``||r||`` below tolerance; returns (solution, attempts).

    ``u0`` may be a :class:`Field` (result is one too) or a flat/spatial
    array.  Every linear solve counts as one attempt; rejected steps keep the
    iterate and only raise the damping.  ``callback``, if given, receives the
    residual norm after every accepted step.

    Raises :class:`ConvergenceError` (carrying the best iterate) when the
    attempt budget runs out and ``numpy.linalg.LinAlgError`` on singular
    normal equations or non-finite residuals at the initial iterate.
    """
    config = config or LMConfig()
    u, as_field = _flatten(system, u0)
    r = system.residual(u)
    rnorm = float(np.linalg.norm(r))
    if not np.isfinite(rnorm):
        raise np.linalg.LinAlgError("residual is not finite at the initial iterate")
    lam = config.damping
    attempts = 0
    while rnorm >= config.tolerance:
        if attempts >= config.max_iterations:
            raise ConvergenceError(
                f"no convergence in {attempts} attempts (||r|| = {rnorm:.3e})",
                best=_wrap(system, u, as_field), residual_norm=rnorm,
                iterations=attempts)
        jac = system.jacobian(u)
        jtj = (jac.T @ jac).tocsr()
        grad = jac.T @ r
        diag = jtj.diagonal()
        accepted = False
        while not accepted:
            if attempts >= config.max_iterations:
                raise ConvergenceError(
                    f"no convergence in {attempts} attempts (||r|| = {rnorm:.3e})",
                    best=_wrap(system, u, as_field), residual_norm=rnorm,
                    iterations=attempts)
            delta = _solve_normal(jtj + sp.diags(lam * diag), -grad)
            attempts += 1
            r_new = system.residual(u + delta)
            rnorm_new = float(np.linalg.norm(r_new))
            if not np.isfinite(rnorm_new) or rnorm_new > rnorm:
                lam *= 2.0  # reject, keep the iterate
            else:
                lam /= 2.0
                u = u + delta
                r, rnorm = r_new, rnorm_new
                accepted = True
                if callback is not None:
                    callback(rnorm)
    return _wrap(system, u, as_field), attempts


def gauss_newton_step(system: ResidualSystem, u):
    """One undamped step: solve ``J^T J delta = -J^T r`` and add it."""
    uf, as_field = _flatten(system, u)
    r = system.residual(uf)
    jac = system.jacobian(uf)
    delta = _solve_normal((jac.T @ jac).tocsr(), -(jac.T @ r))
    return _wrap(system, uf + delta, as_field)


def implicit_euler_rollout(equation: EquationSpec, u0: Field, grid: GridSpec,
                           config: LMConfig | None = None) -> Field:
    """March ``grid.time_steps`` implicit Euler steps from ``u0``.

    Each step solves its residual system by LM warm-started at the previous
    state.  The returned trajectory holds the post-initial states only; the
    initial condition stays with the caller.
    """
    if grid.time_steps <= 0:
        raise ValueError("rollout needs a grid with time_steps > 0")
    if grid.dt != equation.dt:
        raise ValueError(f"grid dt {grid.dt} differs from equation dt {equation.dt}")
    if grid.boundary is not equation.boundary:
        raise ValueError("grid and equation boundary conventions differ")
    spatial = grid.spatial()
    if u0.grid != spatial:
        raise ValueError("initial condition must live on the spatial grid")
    prev = np.asarray(u0.values)
    slices = np.empty(grid.shape)
    for n in range(grid.time_steps):
        system = step_system(equation, spatial, prev)
        try:
            state, _ = levenberg_marquardt(system, prev.ravel(), config)
        except ConvergenceError as err:
            raise ConvergenceError(
                f"time step {n + 1}/{grid.time_steps}: {err}",
                best=err.best, residual_norm=err.residual_norm,
                iterations=err.iterations) from err
        prev = state.reshape(spatial.spatial_shape)
        slices[n] = prev
    return Field(grid, slices)
