"""Grids, fields, spline super-resolution and the on-disk field format.

Everything in the package lives on uniform grids over the unit square or cube
with mesh width ``h = 1/K`` for ``K`` cells per dimension.  Two boundary
conventions exist and they decide which nodes carry unknowns:

* ``DIRICHLET_ZERO``: the boundary value is identically zero and only the
  ``K - 1`` interior nodes ``x_i = i/K`` (``i = 1..K-1``) are stored.
* ``PERIODIC``: ``K`` nodes ``x_i = i/K`` (``i = 0..K-1``); the node at 1 is
  identified with the node at 0.

Time-dependent fields carry ``K_t`` post-initial time slices on a leading
axis; time is never interpolated, only the spatial axes are.  Cubic spline
interpolation (CSI) closes the spline with the boundary data: zero-valued end
knots and natural end conditions for Dirichlet problems, periodic closure for
periodic ones.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import FieldFormatError

_MAGIC = b"PGDMFLD1"


class Boundary(str, enum.Enum):
    """Boundary convention of a grid."""

    DIRICHLET_ZERO = "dirichlet_zero"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the unit domain.

    Parameters
    ----------
    spatial_dim : int
        Number of spatial dimensions, 2 or 3.
    cells : int
        Cells per dimension ``K``; the mesh width is ``1/K``.  At least 4.
    boundary : Boundary
        Node/boundary convention, see the module docstring.
    time_steps : int, optional
        Number of stored time slices ``K_t`` (0 for static problems).
    dt : float, optional
        Time step size; required iff ``time_steps > 0``.
    """

    spatial_dim: int
    cells: int
    boundary: Boundary
    time_steps: int = 0
    dt: float | None = None

    def __post_init__(self):
        if self.spatial_dim not in (2, 3):
            raise ValueError(f"spatial_dim must be 2 or 3, got {self.spatial_dim}")
        if self.cells < 4:
            raise ValueError(f"need at least 4 cells per dimension, got {self.cells}")
        if self.time_steps < 0:
            raise ValueError(f"time_steps must be >= 0, got {self.time_steps}")
        if self.time_steps > 0:
            if self.dt is None or not self.dt > 0:
                raise ValueError("time-dependent grids need dt > 0")
        elif self.dt is not None:
            raise ValueError("static grids take dt=None")
        if not isinstance(self.boundary, Boundary):
            object.__setattr__(self, "boundary", Boundary(self.boundary))

    @property
    def h(self) -> float:
        """Mesh width ``1/K``."""
        return 1.0 / self.cells

    @property
    def nodes_per_dim(self) -> int:
        if self.boundary is Boundary.DIRICHLET_ZERO:
            return self.cells - 1
        return self.cells

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return (self.nodes_per_dim,) * self.spatial_dim

    @property
    def shape(self) -> tuple[int, ...]:
        """Array shape of a field on this grid (time axis leading, if any)."""
        if self.time_steps > 0:
            return (self.time_steps,) + self.spatial_shape
        return self.spatial_shape

    @property
    def node_count(self) -> int:
        return self.nodes_per_dim ** self.spatial_dim

    def node_coordinates(self) -> np.ndarray:
        """1D coordinates of the stored nodes along one axis."""
        if self.boundary is Boundary.DIRICHLET_ZERO:
            return np.arange(1, self.cells) * self.h
        return np.arange(self.cells) * self.h

    def with_cells(self, cells: int) -> "GridSpec":
        """Same grid layout at a different resolution."""
        return GridSpec(self.spatial_dim, cells, self.boundary,
                        self.time_steps, self.dt)

    def spatial(self) -> "GridSpec":
        """This grid with the time axis dropped."""
        if self.time_steps == 0:
            return self
        return GridSpec(self.spatial_dim, self.cells, self.boundary)

    def to_dict(self) -> dict:
        return {"spatial_dim": self.spatial_dim, "cells": self.cells,
                "boundary": self.boundary.value,
                "time_steps": self.time_steps, "dt": self.dt}

    @staticmethod
    def from_dict(d: dict) -> "GridSpec":
        return GridSpec(int(d["spatial_dim"]), int(d["cells"]),
                        Boundary(d["boundary"]),
                        int(d.get("time_steps", 0)), d.get("dt"))


@dataclass(frozen=True)
class Field:
    """Immutable sampled field: a grid plus a float64 array of node values.

    The value array is copied on construction and marked read-only; its shape
    must equal ``grid.shape`` and all entries must be finite.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if v.shape != self.grid.shape:
            raise ValueError(
                f"value shape {v.shape} does not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def _spatial_axes(grid: GridSpec) -> range:
    offset = 1 if grid.time_steps > 0 else 0
    return range(offset, offset + grid.spatial_dim)


def _interpolate_axis(values, src: GridSpec, target_x, axis):
    """Cubic-spline interpolate one spatial axis onto new coordinates."""
    x = src.node_coordinates()
    if src.boundary is Boundary.PERIODIC:
        # close the period: repeat node 0 at x = 1
        knots = np.concatenate([x, [1.0]])
        first = np.take(values, [0], axis=axis)
        padded = np.concatenate([values, first], axis=axis)
        spline = CubicSpline(knots, padded, axis=axis, bc_type="periodic")
    else:
        # the boundary value 0 is data, end conditions are natural
        knots = np.concatenate([[0.0], x, [1.0]])
        zshape = list(values.shape)
        zshape[axis] = 1
        zeros = np.zeros(zshape)
        padded = np.concatenate([zeros, values, zeros], axis=axis)
        spline = CubicSpline(knots, padded, axis=axis, bc_type="natural")
    return spline(target_x)


def _check_compatible(src: GridSpec, target: GridSpec):
    if target.boundary is not src.boundary:
        raise ValueError("source and target grids use different boundary conventions")
    if target.spatial_dim != src.spatial_dim:
        raise ValueError("source and target grids have different spatial dimension")
    if target.time_steps != src.time_steps or (
            target.time_steps > 0 and target.dt != src.dt):
        raise ValueError("time axes must agree; time is never interpolated")


def csi_upsample(src: Field, target: GridSpec) -> Field:
    """Lift a field to a finer grid by tensor-product cubic spline interpolation.

    Each spatial axis is interpolated in turn with the boundary-appropriate
    spline closure; on a time-dependent field every time slice is lifted
    independently.  Node values of ``src`` are reproduced exactly wherever
    target nodes coincide with source nodes.

    Parameters
    ----------
    src : Field
        Field to upsample.
    target : GridSpec
        Grid with ``target.cells >= src.grid.cells`` and identical boundary
        convention, spatial dimension and time axis.
    """
    _check_compatible(src.grid, target)
    if target.cells < src.grid.cells:
        raise ValueError(
            f"csi_upsample needs target cells >= source cells "
            f"({target.cells} < {src.grid.cells})")
    values = np.asarray(src.values)
    tx = target.node_coordinates()
    for axis in _spatial_axes(target):
        values = _interpolate_axis(values, src.grid, tx, axis)
    return Field(target, values)


def restrict(src: Field, target: GridSpec) -> Field:
    """Restrict a field to a coarser grid.

    When target nodes are a subset of source nodes (integer cell ratio, which
    holds for both boundary conventions here) values are injected exactly;
    otherwise the same spline machinery as :func:`csi_upsample` evaluates the
    source at the target nodes.
    """
    _check_compatible(src.grid, target)
    if target.cells > src.grid.cells:
        raise ValueError(
            f"restrict needs target cells <= source cells "
            f"({target.cells} > {src.grid.cells})")
    if src.grid.cells % target.cells == 0:
        r = src.grid.cells // target.cells
        if src.grid.boundary is Boundary.PERIODIC:
            sl = slice(None, None, r)
        else:
            sl = slice(r - 1, None, r)
        index = [slice(None)] * (1 if target.time_steps > 0 else 0)
        index += [sl] * target.spatial_dim
        return Field(target, src.values[tuple(index)])
    values = np.asarray(src.values)
    tx = target.node_coordinates()
    for axis in _spatial_axes(target):
        values = _interpolate_axis(values, src.grid, tx, axis)
    return Field(target, values)


def relative_l2_error(u, ref) -> float:
    """``||u - ref||_2 / ||ref||_2`` over all entries (time slices included).

    Accepts :class:`Field` or plain arrays; shapes must match and the
    reference must have nonzero norm.
    """
    uv = u.values if isinstance(u, Field) else np.asarray(u, dtype=np.float64)
    rv = ref.values if isinstance(ref, Field) else np.asarray(ref, dtype=np.float64)
    if isinstance(u, Field) and isinstance(ref, Field) and u.grid != ref.grid:
        raise ValueError("fields live on different grids")
    if uv.shape != rv.shape:
        raise ValueError(f"shape mismatch: {uv.shape} vs {rv.shape}")
    denom = float(np.linalg.norm(rv.ravel()))
    if denom == 0.0:
        raise ValueError("reference field has zero norm")
    return float(np.linalg.norm((uv - rv).ravel())) / denom


def write_field(field, path) -> None:
    """Serialize a field (or bare array) to the binary field format.

    Layout: 8-byte ASCII magic ``PGDMFLD1``, u32 little-endian rank, ``rank``
    u32 little-endian dims, then the row-major float64 little-endian payload.
    """
    values = field.values if isinstance(field, Field) else np.asarray(field, np.float64)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", values.ndim))
        fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_field(path, grid: GridSpec | None = None):
    """Read a field file; returns the array, or a :class:`Field` when ``grid``
    is supplied (the format itself stores no grid metadata)."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < len(_MAGIC) or data[:len(_MAGIC)] != _MAGIC:
        raise FieldFormatError(f"{path}: bad magic, not a field file")
    offset = len(_MAGIC)

    def take(n, what):
        nonlocal offset
        if len(data) < offset + n:
            missing = offset + n - len(data)
            raise FieldFormatError(f"{path}: truncated {what}, {missing} bytes missing")
        chunk = data[offset:offset + n]
        offset += n
        return chunk

    (rank,) = struct.unpack("<I", take(4, "rank"))
    if rank == 0 or rank > 4:
        raise FieldFormatError(f"{path}: unsupported rank {rank}")
    dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
    count = int(np.prod(dims))
    payload = take(8 * count, "payload")
    if offset != len(data):
        raise FieldFormatError(f"{path}: {len(data) - offset} trailing bytes")
    values = np.frombuffer(payload, dtype="<f8").reshape(dims)
    if grid is None:
        return values.copy()
    return Field(grid, values)
