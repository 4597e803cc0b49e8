"""Domain geometry, uniform grids, nodal fields and trajectories.

Everything downstream (solver, bound checkers, cascade machinery) works
with the immutable containers defined here.  Sup-norms are taken over
grid nodes only; refinement studies are the tool for quantifying the
nodal-vs-continuum gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROBIN = "robin"
DIRICHLET = "dirichlet"

INTERVAL = "interval"
RECTANGLE = "rectangle"


@dataclass(frozen=True)
class Domain:
    """An open interval (x_lo, x_hi) or axis-aligned rectangle."""

    kind: str
    x_lo: float
    x_hi: float
    y_lo: float | None = None
    y_hi: float | None = None

    def __post_init__(self):
        if self.kind not in (INTERVAL, RECTANGLE):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if not self.x_lo < self.x_hi:
            raise ValueError("domain requires x_lo < x_hi")
        if self.kind == RECTANGLE:
            if self.y_lo is None or self.y_hi is None:
                raise ValueError("rectangle requires y bounds")
            if not self.y_lo < self.y_hi:
                raise ValueError("domain requires y_lo < y_hi")

    @property
    def dim(self) -> int:
        return 1 if self.kind == INTERVAL else 2

    @property
    def volume(self) -> float:
        if self.kind == INTERVAL:
            return self.x_hi - self.x_lo
        return (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)


def interval(x_lo: float = 0.0, x_hi: float = 1.0) -> Domain:
    return Domain(INTERVAL, float(x_lo), float(x_hi))


def rectangle(x_lo, x_hi, y_lo, y_hi) -> Domain:
    return Domain(RECTANGLE, float(x_lo), float(x_hi), float(y_lo), float(y_hi))


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform tensor grid; boundary nodes lie exactly on the boundary."""

    domain: Domain
    n_x: int
    n_y: int | None = None
    x: np.ndarray = field(init=False, repr=False, compare=False)
    y: np.ndarray | None = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_x < 3:
            raise ValueError("n_x must be at least 3")
        if self.domain.kind == RECTANGLE:
            if self.n_y is None or self.n_y < 3:
                raise ValueError("rectangle grid needs n_y >= 3")
        elif self.n_y is not None:
            raise ValueError("interval grid must not set n_y")
        xs = np.linspace(self.domain.x_lo, self.domain.x_hi, self.n_x)
        xs.setflags(write=False)
        object.__setattr__(self, "x", xs)
        if self.n_y is not None:
            ys = np.linspace(self.domain.y_lo, self.domain.y_hi, self.n_y)
            ys.setflags(write=False)
            object.__setattr__(self, "y", ys)
        else:
            object.__setattr__(self, "y", None)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def h_x(self) -> float:
        return (self.domain.x_hi - self.domain.x_lo) / (self.n_x - 1)

    @property
    def h_y(self) -> float | None:
        if self.n_y is None:
            return None
        return (self.domain.y_hi - self.domain.y_lo) / (self.n_y - 1)

    @property
    def h_max(self) -> float:
        return self.h_x if self.n_y is None else max(self.h_x, self.h_y)

    @property
    def shape(self) -> tuple:
        return (self.n_x,) if self.n_y is None else (self.n_y, self.n_x)

    @property
    def n_nodes(self) -> int:
        return self.n_x if self.n_y is None else self.n_x * self.n_y

    def meshes(self):
        """Coordinate arrays shaped like a field (X, Y); Y is None in 1-D."""
        if self.n_y is None:
            return self.x, None
        X, Y = np.meshgrid(self.x, self.y)
        return X, Y

    def node_location(self, flat_index: int):
        """(x[, y]) coordinates of a node given its flat row-major index."""
        if self.n_y is None:
            return (float(self.x[flat_index]),)
        iy, ix = divmod(flat_index, self.n_x)
        return (float(self.x[ix]), float(self.y[iy]))

    def boundary_mask(self) -> np.ndarray:
        """Boolean array over the field shape marking boundary nodes."""
        if self.n_y is None:
            m = np.zeros(self.n_x, dtype=bool)
            m[0] = m[-1] = True
            return m
        m = np.zeros((self.n_y, self.n_x), dtype=bool)
        m[0, :] = m[-1, :] = True
        m[:, 0] = m[:, -1] = True
        return m


def grid_1d(n_x: int, x_lo: float = 0.0, x_hi: float = 1.0) -> SpatialGrid:
    return SpatialGrid(interval(x_lo, x_hi), n_x)


def grid_2d(n_x: int, n_y: int, x_lo=0.0, x_hi=1.0, y_lo=0.0, y_hi=1.0) -> SpatialGrid:
    return SpatialGrid(rectangle(x_lo, x_hi, y_lo, y_hi), n_x, n_y)


class Field:
    """Immutable nodal values on a grid."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: SpatialGrid, values):
        values = np.array(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
        bad = np.flatnonzero(~np.isfinite(values.ravel()))
        if bad.size:
            i = int(bad[0])
            raise ValueError(f"non-finite field value at node {i} {grid.node_location(i)}")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    def __repr__(self):
        return f"Field(shape={self.values.shape}, sup={sup_norm_space(self):.6g})"


class Trajectory:
    """Time-indexed fields on a shared grid, sampled at t_0=0 < ... < t_N."""

    __slots__ = ("grid", "times", "values")

    def __init__(self, grid: SpatialGrid, times, values):
        times = np.array(times, dtype=float)
        values = np.array(values, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("trajectory needs at least one time sample")
        if times[0] != 0.0:
            raise ValueError("trajectory must start at t=0")
        if np.any(np.diff(times) <= 0):
            raise ValueError("time samples must be strictly increasing")
        if values.shape != (times.size, *grid.shape):
            raise ValueError("trajectory values must have one field per sample")
        if not np.all(np.isfinite(values)):
            raise ValueError("trajectory contains non-finite values")
        times.setflags(write=False)
        values.setflags(write=False)
        self.grid = grid
        self.times = times
        self.values = values

    @property
    def n_samples(self) -> int:
        return self.times.size

    def field(self, i: int) -> Field:
        return Field(self.grid, self.values[i])

    def sup_space_per_sample(self) -> np.ndarray:
        flat = np.abs(self.values.reshape(self.n_samples, -1))
        return flat.max(axis=1)

    def __repr__(self):
        return f"Trajectory(samples={self.n_samples}, T={self.times[-1]:.6g})"


def sup_norm_space(f: Field) -> float:
    """max_x |f(x)| over grid nodes; raises naming the node on non-finite data."""
    vals = f.values.ravel()
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"non-finite field value at node {i} {f.grid.node_location(i)}")
    return float(np.max(np.abs(vals)))


def sup_norm_spacetime(traj: Trajectory) -> float:
    """max over samples of the spatial sup-norm."""
    if traj.n_samples == 0:
        raise ValueError("empty trajectory")
    return float(traj.sup_space_per_sample().max())


def diff_trajectory(t1: Trajectory, t2: Trajectory) -> Trajectory:
    """Pointwise t1 - t2; grids and time samples must match exactly."""
    if t1.grid is not t2.grid and t1.grid != t2.grid:
        raise ValueError("trajectories live on different grids")
    if not np.array_equal(t1.times, t2.times):
        raise ValueError("trajectories have different time samples")
    return Trajectory(t1.grid, t1.times, t1.values - t2.values)
