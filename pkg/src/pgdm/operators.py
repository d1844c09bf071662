"""Discretized equations: stencils, residual systems, spectral helpers.

Three model problems on the unit square/cube, all discretized with the
standard second-order 5/7-point Laplacian stencil on the grids of
:mod:`pgdm.fields`:

* nonlinear Poisson ``-kappa lap(u) + u^3 = a`` with zero Dirichlet data,
* Allen-Cahn ``u_t = kappa lap(u) + gamma u (1/4 - u^2)``, periodic,
* incompressible Navier-Stokes in vorticity form
  ``w_t + mu (vel . grad w) = nu lap(w) + f``, periodic, with the velocity
  recovered spectrally from the streamfunction of ``w``.

Time stepping for the latter two is implicit Euler, expressed as nonlinear
residual systems ``r(u^{n+1}) = 0`` that the solvers in :mod:`pgdm.nlsolve`
drive to tolerance.  A semi-implicit Crank-Nicolson pseudo-spectral scheme
doubles as the trusted reference for Navier-Stokes.

Flat vectors use row-major (C) ordering of the spatial array throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.fft import fft2, ifft2, fftn, ifftn

from .fields import Boundary, Field, GridSpec

SIN_COS_DIAGONAL = "sin-cos-diagonal"


class EquationKind(str, enum.Enum):
    NONLINEAR_POISSON = "nonlinear_poisson"
    ALLEN_CAHN = "allen_cahn"
    NAVIER_STOKES = "navier_stokes"


@dataclass(frozen=True)
class EquationSpec:
    """Equation family plus its coefficients and time discretization.

    ``diffusion_coeff`` multiplies the Laplacian, ``reaction_coeff`` the
    Allen-Cahn double-well term, ``transport_coeff`` the Navier-Stokes
    advection.  ``forcing`` is a descriptor dict such as
    ``{"type": "sin-cos-diagonal", "amplitude": 0.2}``.
    """

    kind: EquationKind
    diffusion_coeff: float
    reaction_coeff: float = 0.0
    transport_coeff: float = 0.0
    forcing: dict | None = None
    boundary: Boundary = Boundary.PERIODIC
    dt: float | None = None
    time_steps: int = 0

    def __post_init__(self):
        if not isinstance(self.kind, EquationKind):
            object.__setattr__(self, "kind", EquationKind(self.kind))
        if not isinstance(self.boundary, Boundary):
            object.__setattr__(self, "boundary", Boundary(self.boundary))
        if self.diffusion_coeff <= 0:
            raise ValueError("diffusion coefficient must be positive")
        if self.kind is EquationKind.NONLINEAR_POISSON:
            if self.boundary is not Boundary.DIRICHLET_ZERO or self.time_steps != 0:
                raise ValueError("the Poisson problem is static with zero Dirichlet data")
        else:
            if self.boundary is not Boundary.PERIODIC:
                raise ValueError("evolution problems here are periodic")
            if self.time_steps <= 0 or self.dt is None or self.dt <= 0:
                raise ValueError("evolution problems need dt > 0 and time_steps > 0")
        if self.forcing is not None:
            if self.forcing.get("type") != SIN_COS_DIAGONAL:
                raise ValueError(f"unknown forcing type {self.forcing.get('type')!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "diffusion_coeff": self.diffusion_coeff,
            "reaction_coeff": self.reaction_coeff,
            "transport_coeff": self.transport_coeff,
            "forcing": self.forcing,
            "boundary": self.boundary.value,
            "dt": self.dt,
            "time_steps": self.time_steps,
        }

    @staticmethod
    def from_dict(d: dict) -> "EquationSpec":
        return EquationSpec(
            kind=EquationKind(d["kind"]),
            diffusion_coeff=d["diffusion_coeff"],
            reaction_coeff=d.get("reaction_coeff", 0.0),
            transport_coeff=d.get("transport_coeff", 0.0),
            forcing=d.get("forcing"),
            boundary=Boundary(d["boundary"]),
            dt=d.get("dt"),
            time_steps=d.get("time_steps", 0),
        )


def nonlinear_poisson(diffusion_coeff: float = 5e-4) -> EquationSpec:
    return EquationSpec(EquationKind.NONLINEAR_POISSON, diffusion_coeff,
                        boundary=Boundary.DIRICHLET_ZERO)


def allen_cahn(kappa: float = 1e-3, gamma: float = 5.0,
               dt: float = 0.05, time_steps: int = 10) -> EquationSpec:
    return EquationSpec(EquationKind.ALLEN_CAHN, kappa, reaction_coeff=gamma,
                        dt=dt, time_steps=time_steps)


def navier_stokes(nu: float = 2e-4, mu: float = 4.0, amplitude: float = 0.2,
                  dt: float = 0.05, time_steps: int = 40) -> EquationSpec:
    return EquationSpec(EquationKind.NAVIER_STOKES, nu, transport_coeff=mu,
                        forcing={"type": SIN_COS_DIAGONAL, "amplitude": amplitude},
                        dt=dt, time_steps=time_steps)


# ---------------------------------------------------------------------------
# stencil operators

def _second_difference_1d(grid: GridSpec) -> sp.csr_matrix:
    """1D second-difference matrix scaled by 1/h^2."""
    n = grid.nodes_per_dim
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    mat = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if grid.boundary is Boundary.PERIODIC:
        mat[0, n - 1] = 1.0
        mat[n - 1, 0] = 1.0
    # Dirichlet: the dropped neighbors are the zero boundary values
    return (mat.tocsr() * (1.0 / grid.h ** 2)).tocsr()


def _first_difference_1d(grid: GridSpec) -> sp.csr_matrix:
    """Central first difference (u_{i+1} - u_{i-1}) / 2h, periodic closure."""
    if grid.boundary is not Boundary.PERIODIC:
        raise ValueError("central differences with wraparound need a periodic grid")
    n = grid.nodes_per_dim
    off = np.ones(n - 1)
    mat = sp.diags([-off, off], [-1, 1], format="lil")
    mat[0, n - 1] = -1.0
    mat[n - 1, 0] = 1.0
    return (mat.tocsr() * (1.0 / (2.0 * grid.h))).tocsr()


def _kron_along_axis(one_d: sp.spmatrix, grid: GridSpec, axis: int) -> sp.csr_matrix:
    eye = sp.identity(grid.nodes_per_dim, format="csr")
    factors = [eye] * grid.spatial_dim
    factors[axis] = one_d.tocsr()
    out = factors[0]
    for f in factors[1:]:
        out = sp.kron(out, f, format="csr")
    return out


def laplacian_matrix(grid: GridSpec) -> sp.csr_matrix:
    """Sparse discrete Laplacian on the flattened spatial array."""
    d2 = _second_difference_1d(grid)
    total = _kron_along_axis(d2, grid, 0)
    for axis in range(1, grid.spatial_dim):
        total = total + _kron_along_axis(d2, grid, axis)
    return total.tocsr()


def gradient_matrices(grid: GridSpec) -> tuple[sp.csr_matrix, ...]:
    """Central-difference first derivative per spatial axis (periodic)."""
    d1 = _first_difference_1d(grid)
    return tuple(_kron_along_axis(d1, grid, axis) for axis in range(grid.spatial_dim))


def _shift(values, step, axis, boundary):
    if boundary is Boundary.PERIODIC:
        return np.roll(values, -step, axis=axis)
    out = np.zeros_like(values)
    src = [slice(None)] * values.ndim
    dst = [slice(None)] * values.ndim
    if step > 0:
        src[axis] = slice(step, None)
        dst[axis] = slice(None, -step)
    else:
        src[axis] = slice(None, step)
        dst[axis] = slice(-step, None)
    out[tuple(dst)] = values[tuple(src)]
    return out


def discrete_laplacian_apply(u: Field) -> Field:
    """Matrix-free stencil application, time slices handled independently."""
    grid = u.grid
    values = np.asarray(u.values)
    acc = -2.0 * grid.spatial_dim * values
    offset = values.ndim - grid.spatial_dim
    for axis in range(offset, values.ndim):
        acc = acc + _shift(values, 1, axis, grid.boundary)
        acc = acc + _shift(values, -1, axis, grid.boundary)
    return Field(grid, acc / grid.h ** 2)


def forcing_on_grid(equation: EquationSpec, grid: GridSpec) -> np.ndarray:
    """Evaluate the forcing descriptor on the spatial nodes (zero if absent)."""
    if equation.forcing is None:
        return np.zeros(grid.spatial_shape)
    amp = float(equation.forcing["amplitude"])
    x = grid.node_coordinates()
    mats = np.meshgrid(*[x] * grid.spatial_dim, indexing="ij")
    s = sum(mats)
    return amp * (np.sin(2.0 * np.pi * s) + np.cos(2.0 * np.pi * s))


# ---------------------------------------------------------------------------
# spectral helpers (periodic grids)

def _wavenumbers(grid: GridSpec):
    k = np.fft.fftfreq(grid.cells) * grid.cells
    return np.meshgrid(*[k] * grid.spatial_dim, indexing="ij")


def _derivative_wavenumbers(grid: GridSpec):
    # odd-order spectral derivatives of real fields need the (unpaired)
    # Nyquist mode zeroed, otherwise taking the real part breaks symmetry
    k = np.fft.fftfreq(grid.cells) * grid.cells
    if grid.cells % 2 == 0:
        k = k.copy()
        k[grid.cells // 2] = 0.0
    return np.meshgrid(*[k] * grid.spatial_dim, indexing="ij")


def _inverse_laplacian_multiplier(grid: GridSpec) -> np.ndarray:
    """Spectral multiplier for psi with lap(psi) = -w: 1/(4 pi^2 |m|^2) with
    the zero mode (mean) and the unpaired Nyquist modes truncated.  The
    truncation is what makes the recovered velocity exactly divergence-free."""
    mx, my = _wavenumbers(grid)
    ksq = 4.0 * np.pi ** 2 * (mx ** 2 + my ** 2)
    inv = np.zeros_like(ksq)
    inv[ksq > 0] = 1.0 / ksq[ksq > 0]
    if grid.cells % 2 == 0:
        nyq = grid.cells / 2.0
        inv[(np.abs(mx) == nyq) | (np.abs(my) == nyq)] = 0.0
    return inv


def _velocity_components(w_values: np.ndarray, grid: GridSpec):
    """Velocity (vx, vy) with lap(psi) = -w, vx = dpsi/dy, vy = -dpsi/dx."""
    mx, my = _wavenumbers(grid)
    psi_hat = fft2(w_values) * _inverse_laplacian_multiplier(grid)
    vx = np.real(ifft2(2j * np.pi * my * psi_hat))
    vy = np.real(ifft2(-2j * np.pi * mx * psi_hat))
    return vx, vy


def velocity_from_vorticity(w: Field) -> tuple[Field, Field]:
    """Spectral velocity recovery on a periodic 2D grid."""
    grid = w.grid
    if grid.boundary is not Boundary.PERIODIC or grid.spatial_dim != 2:
        raise ValueError("vorticity transport is a periodic 2D construction")
    if grid.time_steps != 0:
        raise ValueError("pass a single time slice")
    vx, vy = _velocity_components(np.asarray(w.values), grid)
    return Field(grid, vx), Field(grid, vy)


# ---------------------------------------------------------------------------
# residual systems

class ResidualSystem:
    """Nonlinear system r(u) = 0 on flat vectors, with a sparse Jacobian."""

    grid: GridSpec
    n: int

    def residual(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, u: np.ndarray) -> sp.csr_matrix:
        raise NotImplementedError


def _check_static(grid: GridSpec):
    if grid.time_steps != 0:
        raise ValueError("residual systems act on single time slices")


class PoissonSystem(ResidualSystem):
    """``r(u) = -kappa lap_d(u) + u^3 - a`` on the Dirichlet interior."""

    def __init__(self, equation: EquationSpec, grid: GridSpec, source):
        if equation.kind is not EquationKind.NONLINEAR_POISSON:
            raise ValueError("expected the nonlinear Poisson equation")
        _check_static(grid)
        if grid.boundary is not Boundary.DIRICHLET_ZERO:
            raise ValueError("Poisson grid must be zero-Dirichlet")
        self.grid = grid
        self.n = grid.node_count
        self.kappa = equation.diffusion_coeff
        src = source.values if isinstance(source, Field) else np.asarray(source)
        if src.shape != grid.spatial_shape:
            raise ValueError("source shape does not match the grid")
        self.source = src.ravel()
        self.lap = laplacian_matrix(grid)

    def residual(self, u):
        return -self.kappa * (self.lap @ u) + u ** 3 - self.source

    def jacobian(self, u):
        return (-self.kappa * self.lap + sp.diags(3.0 * u * u)).tocsr()


class AllenCahnStepSystem(ResidualSystem):
    """One implicit Euler step of Allen-Cahn:
    ``r(u) = u - dt (kappa lap_d(u) + gamma u (1/4 - u^2)) - u_prev``."""

    def __init__(self, equation: EquationSpec, grid: GridSpec, u_prev):
        if equation.kind is not EquationKind.ALLEN_CAHN:
            raise ValueError("expected the Allen-Cahn equation")
        _check_static(grid)
        if grid.boundary is not Boundary.PERIODIC:
            raise ValueError("Allen-Cahn grid must be periodic")
        self.grid = grid
        self.n = grid.node_count
        self.kappa = equation.diffusion_coeff
        self.gamma = equation.reaction_coeff
        self.dt = equation.dt
        prev = u_prev.values if isinstance(u_prev, Field) else np.asarray(u_prev)
        if prev.shape != grid.spatial_shape:
            raise ValueError("previous state shape does not match the grid")
        self.u_prev = prev.ravel()
        self.lap = laplacian_matrix(grid)
        self.eye = sp.identity(self.n, format="csr")

    def residual(self, u):
        rate = self.kappa * (self.lap @ u) + self.gamma * u * (0.25 - u ** 2)
        return u - self.dt * rate - self.u_prev

    def jacobian(self, u):
        react = sp.diags(self.gamma * (0.25 - 3.0 * u * u))
        return (self.eye - self.dt * (self.kappa * self.lap + react)).tocsr()


class NavierStokesStepSystem(ResidualSystem):
    """One implicit Euler step of the vorticity equation.

    ``r(w) = w - w_prev + dt (mu vel(w).grad_d(w) - nu lap_d(w) - f)`` with
    the velocity recovered spectrally from ``w`` itself and central
    differences for the transport gradient.

    The default Jacobian lags the velocity at the linearization point
    (Picard), which keeps it sparse; ``exact_jacobian=True`` adds the dense
    velocity-sensitivity block and is meant for small verification grids.
    """

    def __init__(self, equation: EquationSpec, grid: GridSpec, w_prev,
                 exact_jacobian: bool = False):
        if equation.kind is not EquationKind.NAVIER_STOKES:
            raise ValueError("expected the Navier-Stokes vorticity equation")
        _check_static(grid)
        if grid.boundary is not Boundary.PERIODIC or grid.spatial_dim != 2:
            raise ValueError("vorticity transport is a periodic 2D construction")
        self.grid = grid
        self.n = grid.node_count
        self.nu = equation.diffusion_coeff
        self.mu = equation.transport_coeff
        self.dt = equation.dt
        prev = w_prev.values if isinstance(w_prev, Field) else np.asarray(w_prev)
        if prev.shape != grid.spatial_shape:
            raise ValueError("previous state shape does not match the grid")
        self.w_prev = prev.ravel()
        self.lap = laplacian_matrix(grid)
        self.dx, self.dy = gradient_matrices(grid)
        self.forcing = forcing_on_grid(equation, grid).ravel()
        self.eye = sp.identity(self.n, format="csr")
        self.exact_jacobian = exact_jacobian
        self._vel_basis = None

    def _velocity_flat(self, w):
        vx, vy = _velocity_components(w.reshape(self.grid.spatial_shape), self.grid)
        return vx.ravel(), vy.ravel()

    def residual(self, w):
        vx, vy = self._velocity_flat(w)
        transport = vx * (self.dx @ w) + vy * (self.dy @ w)
        diffusion = self.lap @ w
        return w - self.w_prev + self.dt * (
            self.mu * transport - self.nu * diffusion - self.forcing)

    def frozen_velocity_residual(self, w0):
        """The map the Picard Jacobian linearizes: velocity pinned at w0."""
        vx, vy = self._velocity_flat(np.asarray(w0, dtype=np.float64))

        def res(w):
            transport = vx * (self.dx @ w) + vy * (self.dy @ w)
            return w - self.w_prev + self.dt * (
                self.mu * transport - self.nu * (self.lap @ w) - self.forcing)

        return res

    def _velocity_basis(self):
        # columns: velocity response to each unit vorticity impulse
        if self._vel_basis is None:
            k = self.grid.cells
            basis = np.eye(self.n).reshape(self.n, k, k)
            mx, my = _wavenumbers(self.grid)
            inv = _inverse_laplacian_multiplier(self.grid)
            psi_hat = fftn(basis, axes=(1, 2)) * inv
            vx_cols = np.real(ifftn(2j * np.pi * my * psi_hat, axes=(1, 2)))
            vy_cols = np.real(ifftn(-2j * np.pi * mx * psi_hat, axes=(1, 2)))
            self._vel_basis = (vx_cols.reshape(self.n, self.n).T,
                               vy_cols.reshape(self.n, self.n).T)
        return self._vel_basis

    def jacobian(self, w):
        vx, vy = self._velocity_flat(w)
        advect = sp.diags(vx) @ self.dx + sp.diags(vy) @ self.dy
        jac = self.eye + self.dt * (self.mu * advect - self.nu * self.lap)
        if self.exact_jacobian:
            vx_mat, vy_mat = self._velocity_basis()
            wx = np.asarray(self.dx @ w)
            wy = np.asarray(self.dy @ w)
            sens = wx[:, None] * vx_mat + wy[:, None] * vy_mat
            jac = sp.csr_matrix(jac.toarray() + self.dt * self.mu * sens)
        return jac.tocsr()


def step_system(equation: EquationSpec, grid: GridSpec, u_prev) -> ResidualSystem:
    """Implicit Euler step system for an evolution equation."""
    if equation.kind is EquationKind.ALLEN_CAHN:
        return AllenCahnStepSystem(equation, grid, u_prev)
    if equation.kind is EquationKind.NAVIER_STOKES:
        return NavierStokesStepSystem(equation, grid, u_prev)
    raise ValueError(f"{equation.kind.value} is not an evolution equation")


def poisson_system(equation: EquationSpec, grid: GridSpec, source) -> ResidualSystem:
    return PoissonSystem(equation, grid, source)


# ---------------------------------------------------------------------------
# Navier-Stokes reference scheme

class CrankNicolsonNS:
    """Semi-implicit pseudo-spectral scheme: diffusion Crank-Nicolson,
    transport and forcing explicit, derivatives spectral."""

    def __init__(self, equation: EquationSpec, grid: GridSpec, dt: float):
        if equation.kind is not EquationKind.NAVIER_STOKES:
            raise ValueError("expected the Navier-Stokes vorticity equation")
        _check_static(grid)
        if grid.boundary is not Boundary.PERIODIC or grid.spatial_dim != 2:
            raise ValueError("vorticity transport is a periodic 2D construction")
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.grid = grid
        self.dt = dt
        self.mu = equation.transport_coeff
        mx, my = _wavenumbers(grid)
        self.dkx, self.dky = _derivative_wavenumbers(grid)
        self.ksq = 4.0 * np.pi ** 2 * (mx ** 2 + my ** 2)
        self.inv_ksq = _inverse_laplacian_multiplier(grid)
        half = 0.5 * dt * equation.diffusion_coeff * self.ksq
        self.explicit_factor = 1.0 - half
        self.implicit_factor = 1.0 / (1.0 + half)
        self.forcing_hat = fft2(forcing_on_grid(equation, grid))

    def step(self, w_values: np.ndarray) -> np.ndarray:
        w_hat = fft2(w_values)
        psi_hat = w_hat * self.inv_ksq
        vx = np.real(ifft2(2j * np.pi * self.dky * psi_hat))
        vy = np.real(ifft2(-2j * np.pi * self.dkx * psi_hat))
        wx = np.real(ifft2(2j * np.pi * self.dkx * w_hat))
        wy = np.real(ifft2(2j * np.pi * self.dky * w_hat))
        transport_hat = fft2(vx * wx + vy * wy)
        new_hat = (self.explicit_factor * w_hat
                   + self.dt * (self.forcing_hat - self.mu * transport_hat)
                   ) * self.implicit_factor
        return np.real(ifft2(new_hat))


def reference_step_ns(w: Field, equation: EquationSpec, dt: float) -> Field:
    """One Crank-Nicolson reference step (convenience wrapper)."""
    scheme = CrankNicolsonNS(equation, w.grid, dt)
    return Field(w.grid, scheme.step(np.asarray(w.values)))
