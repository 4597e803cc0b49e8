"""Crank-Nicolson finite-difference solver for disturbed parabolic systems.

The continuous model is u_t - div(a grad u) + c u + h(x,t,u) = f with
either Robin data (a du/dnu + m u = d) or Dirichlet data (u = d) on the
boundary, posed on an interval or an axis-aligned rectangle.

Discretization: second-order conservative five/three-point stencils in
space with midpoint-sampled diffusion; Robin rows eliminate a ghost node
through the centered boundary-derivative formula, which keeps the full
scheme second order (the diffusion expression is therefore evaluated at
midpoints half a cell outside the domain).  Time stepping is
Crank-Nicolson; the nonlinear reaction is handled by a damped Newton
iteration per step.  Dirichlet values are imposed strongly, and no
compatibility between the initial and boundary data is required - an
initial-instant mismatch is absorbed over the first few steps.

Boundary and forcing data are pluggable (expression-backed by default,
sampled arrays or callables for coupled systems), which is what the
cascade and closed-loop modules build on.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from .core import DIRICHLET, ROBIN, Field, SpatialGrid, Trajectory, grid_1d
from .expressions import Expression, parse_expression
from .gains import CoefficientBounds

MINIMUM_SAMPLING_FACTOR = 10  # coefficient minima sampled at 10x grid resolution


class SolverError(RuntimeError):
    """Newton or sweep divergence; carries the residual history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class ConfigError(ValueError):
    """Invalid scenario description."""


# ---------------------------------------------------------------------------
# reaction terms


@dataclass(frozen=True)
class ReactionTerm:
    """Nonlinear reaction h(x[,y],t,u) from a small catalog.

    ``log_poly`` is u*ln(1+u^2) (odd, increasing, super-linear growth);
    ``odd_cubic`` is u^3.  Custom entries supply an expression over
    (x, y, t, u) and get a finite-difference derivative (relative step
    1e-7).  ``growth_exponent``/``growth_constant`` declare the envelope
    |h| <= c0 (1 + |u|^lambda); ``monotone`` declares that h is
    nondecreasing in u.
    """

    kind: str = "zero"
    scale: float = 1.0
    expr: Expression | None = None
    growth_exponent: float = 1.0
    growth_constant: float = 1.0
    monotone: bool = True

    def __post_init__(self):
        if self.kind not in ("zero", "log_poly", "odd_cubic", "custom"):
            raise ConfigError(f"unknown reaction kind {self.kind!r}")
        if self.kind == "custom" and self.expr is None:
            raise ConfigError("custom reaction needs an expression over (x, y, t, u)")
        if self.growth_constant <= 0:
            raise ConfigError("growth constant must be positive")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def value(self, x, y, t, u):
        if self.kind == "zero":
            return np.zeros_like(u)
        if self.kind == "log_poly":
            return self.scale * u * np.log1p(u * u)
        if self.kind == "odd_cubic":
            return self.scale * u ** 3
        env = {"x": x, "t": t, "u": u}
        if y is not None:
            env["y"] = y
        return np.broadcast_to(np.asarray(self.expr(**env), dtype=float), np.shape(u)).copy()

    def derivative(self, x, y, t, u):
        if self.kind == "zero":
            return np.zeros_like(u)
        if self.kind == "log_poly":
            u2 = u * u
            return self.scale * (np.log1p(u2) + 2.0 * u2 / (1.0 + u2))
        if self.kind == "odd_cubic":
            return 3.0 * self.scale * u * u
        step = 1e-7 * np.maximum(1.0, np.abs(u))
        return (self.value(x, y, t, u + step) - self.value(x, y, t, u - step)) / (2.0 * step)


def reaction_zero() -> ReactionTerm:
    return ReactionTerm("zero")


def reaction_log_poly(scale: float = 1.0) -> ReactionTerm:
    return ReactionTerm("log_poly", scale=scale, growth_exponent=3.0,
                        growth_constant=max(2.0, 2.0 * scale), monotone=scale >= 0)


def reaction_odd_cubic(scale: float = 1.0) -> ReactionTerm:
    return ReactionTerm("odd_cubic", scale=scale, growth_exponent=3.0,
                        growth_constant=max(1.0, scale), monotone=scale >= 0)


# ---------------------------------------------------------------------------
# coefficients and boundary data


@dataclass(frozen=True)
class Coefficients:
    """Spatial coefficient expressions with cached minima.

    ``declared_minima`` overrides the sampled minima when the user knows
    the exact values (the sampling rule probes at 10x grid resolution).
    ``c`` may take negative values (destabilizing reaction); bound
    checking then refuses to assert anything, but simulation proceeds.
    """

    a: Expression
    c: Expression
    m: Expression | None = None
    declared_a_min: float | None = None
    declared_c_min: float | None = None
    declared_m_min: float | None = None

    def sampled_minima(self, grid: SpatialGrid):
        """(a_min, c_min, m_min) on a 10x-refined probe of the domain."""
        n = MINIMUM_SAMPLING_FACTOR * (grid.n_x - 1) + 1
        xs = np.linspace(grid.domain.x_lo, grid.domain.x_hi, n)
        if grid.dim == 1:
            env = {"x": xs}
            a_min = float(np.min(self.a(**env) * np.ones_like(xs)))
            c_min = float(np.min(self.c(**env) * np.ones_like(xs)))
            m_min = None
            if self.m is not None:
                mb = self.m(x=np.array([grid.domain.x_lo, grid.domain.x_hi]))
                m_min = float(np.min(np.asarray(mb) * np.ones(2)))
        else:
            ny = MINIMUM_SAMPLING_FACTOR * (grid.n_y - 1) + 1
            ys = np.linspace(grid.domain.y_lo, grid.domain.y_hi, ny)
            X, Y = np.meshgrid(xs, ys)
            env = {"x": X, "y": Y}
            a_min = float(np.min(self.a(**env) * np.ones_like(X)))
            c_min = float(np.min(self.c(**env) * np.ones_like(X)))
            m_min = None
            if self.m is not None:
                bx = np.concatenate([xs, xs, np.full(ny, xs[0]), np.full(ny, xs[-1])])
                by = np.concatenate([np.full(n, ys[0]), np.full(n, ys[-1]), ys, ys])
                m_min = float(np.min(np.asarray(self.m(x=bx, y=by)) * np.ones_like(bx)))
        if self.declared_a_min is not None:
            a_min = self.declared_a_min
        if self.declared_c_min is not None:
            c_min = self.declared_c_min
        if self.declared_m_min is not None:
            m_min = self.declared_m_min
        return a_min, c_min, m_min


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary condition kind plus the disturbance expression d(x[,y],t)."""

    kind: str
    data: Expression

    def __post_init__(self):
        if self.kind not in (ROBIN, DIRICHLET):
            raise ConfigError(f"unknown boundary kind {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    """One complete initial-boundary-value problem with disturbances."""

    grid: SpatialGrid
    horizon: float
    dt: float
    coefficients: Coefficients
    reaction: ReactionTerm
    forcing: Expression
    boundary: BoundarySpec
    u0: Expression
    bounds: CoefficientBounds | None = field(default=None, compare=False)
    c_min_raw: float = field(default=0.0, compare=False)

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def initial_values(self) -> np.ndarray:
        X, Y = self.grid.meshes()
        env = {"x": X} if Y is None else {"x": X, "y": Y}
        vals = np.asarray(self.u0(**env), dtype=float) * np.ones(self.grid.shape)
        return vals

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.n_steps * self.dt, self.n_steps + 1)


def make_scenario(grid: SpatialGrid, horizon: float, dt: float,
                  coefficients: Coefficients, reaction: ReactionTerm,
                  forcing: Expression, boundary: BoundarySpec,
                  u0: Expression) -> Scenario:
    """Validate and cache-complete a scenario (the assembly entry point)."""
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if horizon < dt:
        raise ConfigError("horizon must be at least one step")
    n_steps = round(horizon / dt)
    if abs(n_steps * dt - horizon) > 1e-8 * max(1.0, horizon):
        raise ConfigError("horizon must be an integer multiple of dt")
    if boundary.kind == ROBIN and coefficients.m is None:
        raise ConfigError("Robin boundary needs a trace coefficient m")
    a_min, c_min, m_min = coefficients.sampled_minima(grid)
    if a_min <= 0:
        raise ConfigError(_nonpositive_message("a", coefficients.a, grid))
    if boundary.kind == ROBIN and m_min is not None and m_min <= 0:
        raise ConfigError(_nonpositive_message("m", coefficients.m, grid, boundary_only=True))
    lam_cap = 1.0 + 2.0 / grid.dim
    if not 1.0 <= reaction.growth_exponent <= lam_cap + 1e-12:
        raise ConfigError(
            f"growth exponent {reaction.growth_exponent} outside [1, {lam_cap}] for dimension {grid.dim}")
    bounds = None
    if c_min >= 0:
        bounds = CoefficientBounds(a_min, c_min, m_min if m_min is not None else 1.0)
    sc = Scenario(grid, float(horizon), float(dt), coefficients, reaction,
                  forcing, boundary, u0, bounds=bounds, c_min_raw=c_min)
    sc.initial_values()  # fail early if u0 is not evaluable on the nodes
    return sc


def _nonpositive_message(name, expr, grid, boundary_only=False):
    n = MINIMUM_SAMPLING_FACTOR * (grid.n_x - 1) + 1
    xs = np.linspace(grid.domain.x_lo, grid.domain.x_hi, n)
    if boundary_only:
        xs = np.array([grid.domain.x_lo, grid.domain.x_hi])
    if grid.dim == 1:
        vals = np.asarray(expr(x=xs)) * np.ones_like(xs)
        i = int(np.argmin(vals))
        return f"coefficient {name} is nonpositive at x={xs[i]:.6g} (value {vals[i]:.6g})"
    return f"coefficient {name} is nonpositive somewhere on the sampling grid"


# ---------------------------------------------------------------------------
# data providers (forcing and boundary values over time)


class ExpressionForcing:
    def __init__(self, grid: SpatialGrid, expr: Expression):
        X, Y = grid.meshes()
        self._env = {"x": X} if Y is None else {"x": X, "y": Y}
        self._expr = expr
        self._shape = grid.shape

    def __call__(self, t: float) -> np.ndarray:
        out = self._expr(t=t, **self._env)
        return (np.asarray(out, dtype=float) * np.ones(self._shape)).ravel()


class SampledForcing:
    """Forcing given per time sample (full fields); used by coupled chains."""

    def __init__(self, times: np.ndarray, values: np.ndarray):
        self.times = times
        self.values = values

    def __call__(self, t: float) -> np.ndarray:
        i = int(round((t - self.times[0]) / (self.times[1] - self.times[0])))
        if not math.isclose(self.times[i], t, rel_tol=0.0, abs_tol=1e-9 * max(1.0, self.times[-1])):
            raise ValueError(f"forcing sampled at {self.times[i]}, requested t={t}")
        return self.values[i].ravel()


class ExpressionBoundary:
    """Boundary values from the scenario's d(x[,y],t) expression."""

    def __init__(self, grid: SpatialGrid, expr: Expression):
        self._expr = expr
        if grid.dim == 1:
            self._xb = np.array([grid.domain.x_lo, grid.domain.x_hi])
            self._yb = None
        else:
            xb, yb = _boundary_coords(grid)
            self._xb, self._yb = xb, yb

    def __call__(self, t: float) -> np.ndarray:
        env = {"x": self._xb, "t": t}
        if self._yb is not None:
            env["y"] = self._yb
        return np.asarray(self._expr(**env), dtype=float) * np.ones_like(self._xb)


class SampledBoundary:
    """Boundary values given per time sample (per boundary node)."""

    def __init__(self, times: np.ndarray, values: np.ndarray):
        self.times = times
        self.values = values

    def __call__(self, t: float) -> np.ndarray:
        i = int(round((t - self.times[0]) / (self.times[1] - self.times[0])))
        if not math.isclose(self.times[i], t, rel_tol=0.0, abs_tol=1e-9 * max(1.0, self.times[-1])):
            raise ValueError(f"boundary data sampled at {self.times[i]}, requested t={t}")
        return self.values[i]


class CallableBoundary:
    def __init__(self, fn):
        self._fn = fn

    def __call__(self, t: float) -> np.ndarray:
        return np.asarray(self._fn(t), dtype=float)


def _boundary_coords(grid: SpatialGrid):
    """Coordinates of boundary nodes, ordered to match _boundary_indices."""
    idx = _boundary_indices(grid)
    if grid.dim == 1:
        return grid.x[idx], None
    X, Y = grid.meshes()
    return X.ravel()[idx], Y.ravel()[idx]


def _boundary_indices(grid: SpatialGrid) -> np.ndarray:
    """Flat indices of boundary nodes (1-D: the two endpoints)."""
    mask = grid.boundary_mask().ravel()
    return np.flatnonzero(mask)


# ---------------------------------------------------------------------------
# spatial operator assembly


class _Operator1D:
    """Tridiagonal A = -(a u')' + c u with Robin ghost rows or Dirichlet rows."""

    def __init__(self, grid: SpatialGrid, coeffs: Coefficients, kind: str):
        x = grid.x
        h = grid.h_x
        self.kind = kind
        self.n = grid.n_x
        mid = np.asarray(coeffs.a(x=x[:-1] + h / 2)) * np.ones(self.n - 1)
        cv = np.asarray(coeffs.c(x=x)) * np.ones(self.n)
        lo = np.zeros(self.n)
        di = np.zeros(self.n)
        up = np.zeros(self.n)
        di[1:-1] = (mid[:-1] + mid[1:]) / h ** 2 + cv[1:-1]
        lo[1:-1] = -mid[:-1] / h ** 2
        up[1:-1] = -mid[1:] / h ** 2
        self.bindex = np.array([0, self.n - 1])
        if kind == ROBIN:
            a_out_l = float(np.asarray(coeffs.a(x=x[0] - h / 2)))
            a_out_r = float(np.asarray(coeffs.a(x=x[-1] + h / 2)))
            a_l = float(np.asarray(coeffs.a(x=x[0])))
            a_r = float(np.asarray(coeffs.a(x=x[-1])))
            m_l = float(np.asarray(coeffs.m(x=x[0])))
            m_r = float(np.asarray(coeffs.m(x=x[-1])))
            di[0] = (mid[0] + a_out_l) / h ** 2 + 2 * a_out_l * m_l / (a_l * h) + cv[0]
            up[0] = -(mid[0] + a_out_l) / h ** 2
            di[-1] = (mid[-1] + a_out_r) / h ** 2 + 2 * a_out_r * m_r / (a_r * h) + cv[-1]
            lo[-1] = -(mid[-1] + a_out_r) / h ** 2
            # affine part: A u + g with g = -coef * d at each boundary node
            self.gcoef = np.array([-2 * a_out_l / (a_l * h), -2 * a_out_r / (a_r * h)])
        else:
            # strong Dirichlet rows: operator row is zero, identity added at stepping
            self.gcoef = None
        self.lo, self.di, self.up = lo, di, up

    def apply(self, u: np.ndarray) -> np.ndarray:
        out = self.di * u
        out[:-1] += self.up[:-1] * u[1:]
        out[1:] += self.lo[1:] * u[:-1]
        if self.kind == DIRICHLET:
            out[self.bindex] = 0.0
        return out

    def affine(self, bvals: np.ndarray) -> np.ndarray:
        g = np.zeros(self.n)
        if self.gcoef is not None:
            g[self.bindex] = self.gcoef * bvals
        return g

    def banded_m_plus(self, dt: float) -> np.ndarray:
        ab = np.zeros((3, self.n))
        ab[1] = 1.0 + dt / 2 * self.di
        ab[0, 1:] = dt / 2 * self.up[:-1]
        ab[2, :-1] = dt / 2 * self.lo[1:]
        if self.kind == DIRICHLET:
            ab[1, self.bindex] = 1.0
            ab[0, 1] = 0.0
            ab[2, -2] = 0.0
        return ab

    def solve_newton_system(self, ab: np.ndarray, hprime: np.ndarray,
                            dt: float, rhs: np.ndarray) -> np.ndarray:
        j = ab.copy()
        j[1] += dt / 2 * hprime
        return solve_banded((1, 1), j, rhs)


class _Operator2D:
    """Sparse five-point A on a rectangle with Robin ghosts or Dirichlet rows."""

    def __init__(self, grid: SpatialGrid, coeffs: Coefficients, kind: str):
        nx, ny = grid.n_x, grid.n_y
        hx, hy = grid.h_x, grid.h_y
        X, Y = grid.meshes()
        self.kind = kind
        self.n = nx * ny
        self.shape = (ny, nx)
        self.bindex = _boundary_indices(grid)
        cv = (np.asarray(coeffs.c(x=X, y=Y)) * np.ones_like(X)).ravel()

        def a_at(xq, yq):
            return np.asarray(coeffs.a(x=xq, y=yq)) * np.ones_like(xq)

        ax_w = a_at(X - hx / 2, Y)   # west midpoints, includes outside column
        ax_e = a_at(X + hx / 2, Y)
        ay_s = a_at(X, Y - hy / 2)
        ay_n = a_at(X, Y + hy / 2)

        A = sp.lil_matrix((self.n, self.n))
        g_coef = np.zeros(self.n)
        mvals = None
        if kind == ROBIN:
            mvals = np.zeros_like(X)
            xb, yb = _boundary_coords(grid)
            mb = np.asarray(coeffs.m(x=xb, y=yb)) * np.ones_like(xb)
            mflat = mvals.ravel()
            mflat[self.bindex] = mb
            mvals = mflat.reshape(self.shape)

        def k(iy, ix):
            return iy * nx + ix

        for iy in range(ny):
            for ix in range(nx):
                row = k(iy, ix)
                diag = cv[row]
                if kind == DIRICHLET and (ix in (0, nx - 1) or iy in (0, ny - 1)):
                    continue  # strong row: zero operator, identity at stepping
                # x-direction
                if 0 < ix < nx - 1:
                    diag += (ax_w[iy, ix] + ax_e[iy, ix]) / hx ** 2
                    A[row, k(iy, ix - 1)] = -ax_w[iy, ix] / hx ** 2
                    A[row, k(iy, ix + 1)] = -ax_e[iy, ix] / hx ** 2
                else:
                    # Robin ghost in x
                    inner = k(iy, 1) if ix == 0 else k(iy, nx - 2)
                    a_out = ax_w[iy, 0] if ix == 0 else ax_e[iy, nx - 1]
                    a_in = ax_e[iy, 0] if ix == 0 else ax_w[iy, nx - 1]
                    a_bd = float(a_at(np.array(X[iy, ix]), np.array(Y[iy, ix])))
                    diag += (a_in + a_out) / hx ** 2 + 2 * a_out * mvals[iy, ix] / (a_bd * hx)
                    A[row, inner] = A[row, inner] - (a_in + a_out) / hx ** 2
                    g_coef[row] += -2 * a_out / (a_bd * hx)
                # y-direction
                if 0 < iy < ny - 1:
                    diag += (ay_s[iy, ix] + ay_n[iy, ix]) / hy ** 2
                    A[row, k(iy - 1, ix)] = A[row, k(iy - 1, ix)] - ay_s[iy, ix] / hy ** 2
                    A[row, k(iy + 1, ix)] = A[row, k(iy + 1, ix)] - ay_n[iy, ix] / hy ** 2
                else:
                    inner = k(1, ix) if iy == 0 else k(ny - 2, ix)
                    a_out = ay_s[0, ix] if iy == 0 else ay_n[ny - 1, ix]
                    a_in = ay_n[0, ix] if iy == 0 else ay_s[ny - 1, ix]
                    a_bd = float(a_at(np.array(X[iy, ix]), np.array(Y[iy, ix])))
                    diag += (a_in + a_out) / hy ** 2 + 2 * a_out * mvals[iy, ix] / (a_bd * hy)
                    A[row, inner] = A[row, inner] - (a_in + a_out) / hy ** 2
                    g_coef[row] += -2 * a_out / (a_bd * hy)
                A[row, row] = diag
        self.A = A.tocsr()
        self.g_coef = g_coef if kind == ROBIN else None

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.A @ u

    def affine(self, bvals: np.ndarray) -> np.ndarray:
        g = np.zeros(self.n)
        if self.g_coef is not None:
            g[self.bindex] = self.g_coef[self.bindex] * bvals
        return g

    def m_plus(self, dt: float) -> sp.csr_matrix:
        m = sp.identity(self.n, format="csr") + dt / 2 * self.A
        if self.kind == DIRICHLET:
            m = m.tolil()
            for row in self.bindex:
                m.rows[row] = [int(row)]
                m.data[row] = [1.0]
            m = m.tocsr()
        return m


# ---------------------------------------------------------------------------
# time stepping


class TimeStepper:
    """Crank-Nicolson stepping engine bound to one scenario.

    ``forcing``/``boundary`` default to the scenario's expressions and
    can be swapped for sampled or callable providers (cascade coupling,
    boundary feedback).  ``residual_log`` records the accepted Newton
    residual of every step.
    """

    def __init__(self, scenario: Scenario, forcing=None, boundary=None,
                 newton_tol: float = 1e-12, max_newton: int = 50):
        self.scenario = scenario
        g = scenario.grid
        self.grid = g
        self.kind = scenario.boundary.kind
        self.forcing = forcing if forcing is not None else ExpressionForcing(g, scenario.forcing)
        self.boundary = boundary if boundary is not None else ExpressionBoundary(g, scenario.boundary.data)
        self.newton_tol = newton_tol
        self.max_newton = max_newton
        self.residual_log: list[float] = []
        if g.dim == 1:
            self.op = _Operator1D(g, scenario.coefficients, self.kind)
        else:
            self.op = _Operator2D(g, scenario.coefficients, self.kind)
        self._dt_cache = None
        self._xflat = None
        self._yflat = None
        X, Y = g.meshes()
        self._xflat = np.asarray(X).ravel() if g.dim > 1 else g.x
        self._yflat = np.asarray(Y).ravel() if g.dim > 1 else None
        self._interior_mask = np.ones(g.n_nodes, dtype=bool)
        if self.kind == DIRICHLET:
            self._interior_mask[self.op.bindex] = False

    def _prepare(self, dt: float):
        if self._dt_cache == dt:
            return
        self._dt_cache = dt
        if self.grid.dim == 1:
            self._m_plus = self.op.banded_m_plus(dt)
        else:
            self._m_plus = self.op.m_plus(dt)
            self._lu = splu(self._m_plus.tocsc()) if self.scenario.reaction.is_zero else None

    def _h(self, t, u):
        vals = self.scenario.reaction.value(self._xflat, self._yflat, t, u)
        if self.kind == DIRICHLET:
            vals = np.where(self._interior_mask, vals, 0.0)
        return vals

    def _hprime(self, t, u):
        vals = self.scenario.reaction.derivative(self._xflat, self._yflat, t, u)
        if self.kind == DIRICHLET:
            vals = np.where(self._interior_mask, vals, 0.0)
        return vals

    def _m_plus_apply(self, v):
        if self.grid.dim == 1:
            out = v + self._dt_cache / 2 * self.op.apply(v)
            if self.kind == DIRICHLET:
                out[self.op.bindex] = v[self.op.bindex]
            return out
        return self._m_plus @ v

    def step_values(self, u: np.ndarray, t: float, dt: float,
                    f_pair=None, b_pair=None) -> np.ndarray:
        """Advance nodal values from t to t+dt; returns the new values.

        ``f_pair``/``b_pair`` optionally supply (value at t, value at
        t+dt) for the forcing field and boundary data, overriding the
        bound providers for this single step.
        """
        self._prepare(dt)
        t1 = t + dt
        f0, f1 = f_pair if f_pair is not None else (self.forcing(t), self.forcing(t1))
        b0, b1 = b_pair if b_pair is not None else (self.boundary(t), self.boundary(t1))
        rhs = u - dt / 2 * (self.op.apply(u) + self._h(t, u)) + dt / 2 * (f0 + f1)
        if self.kind == ROBIN:
            rhs -= dt / 2 * (self.op.affine(b0) + self.op.affine(b1))
        else:
            rhs[self.op.bindex] = b1
        # Newton on F(v) = M+ v + dt/2 h(t1, v) - rhs
        v = u.copy()
        if self.kind == DIRICHLET:
            v[self.op.bindex] = b1
        history = []
        scale = max(1.0, float(np.max(np.abs(rhs))))
        tol = self.newton_tol * scale
        fv = self._m_plus_apply(v) + dt / 2 * self._h(t1, v) - rhs
        res = float(np.max(np.abs(fv)))
        for _ in range(self.max_newton):
            history.append(res)
            if res <= tol:
                break
            hp = self._hprime(t1, v)
            if self.grid.dim == 1:
                delta = self.op.solve_newton_system(self._m_plus, hp, dt, -fv)
            else:
                if self.scenario.reaction.is_zero and self._lu is not None:
                    delta = self._lu.solve(-fv)
                else:
                    j = self._m_plus + dt / 2 * sp.diags(hp)
                    delta = splu(j.tocsc()).solve(-fv)
            s = 1.0
            while True:
                v_try = v + s * delta
                fv_try = self._m_plus_apply(v_try) + dt / 2 * self._h(t1, v_try) - rhs
                res_try = float(np.max(np.abs(fv_try)))
                if res_try < res or res_try <= tol:
                    v, fv, res = v_try, fv_try, res_try
                    break
                s /= 2
                if s < 1e-6:
                    raise SolverError(
                        f"Newton damping stalled at t={t1:.6g} (residual {res:.3e})", history)
        else:
            if res > tol:
                raise SolverError(
                    f"Newton failed to reach tolerance at t={t1:.6g} (residual {res:.3e})", history)
        history.append(res)
        if not np.all(np.isfinite(v)):
            raise SolverError(f"non-finite state after step to t={t1:.6g}", history)
        self.residual_log.append(res)
        return v

    def solve(self) -> Trajectory:
        sc = self.scenario
        u = sc.initial_values().ravel().astype(float)
        times = sc.times()
        out = np.empty((times.size, u.size))
        out[0] = u
        f_next = self.forcing(0.0)
        b_next = self.boundary(0.0)
        for i in range(sc.n_steps):
            t = times[i]
            f0, b0 = f_next, b_next
            f_next = self.forcing(times[i + 1])
            b_next = self.boundary(times[i + 1])
            u = self.step_values(u, t, sc.dt, f_pair=(f0, f_next), b_pair=(b0, b_next))
            out[i + 1] = u
        return Trajectory(sc.grid, times, out.reshape(times.size, *sc.grid.shape))


def step(state: Field, t: float, dt: float, scenario: Scenario) -> Field:
    """One Crank-Nicolson step of ``scenario`` from the given state."""
    if state.grid != scenario.grid:
        raise ValueError("state lives on a different grid")
    stepper = TimeStepper(scenario)
    vals = stepper.step_values(state.values.ravel().copy(), t, dt)
    return Field(scenario.grid, vals.reshape(scenario.grid.shape))


def solve(scenario: Scenario, forcing=None, boundary=None,
          newton_tol: float = 1e-12, max_newton: int = 50) -> Trajectory:
    """Solve the scenario over its horizon; samples at 0, dt, ..., T."""
    return TimeStepper(scenario, forcing=forcing, boundary=boundary,
                       newton_tol=newton_tol, max_newton=max_newton).solve()


# ---------------------------------------------------------------------------
# manufactured-solution convergence measurement


@dataclass
class ConvergenceResult:
    p_space: float
    p_time: float
    space_errors: list
    time_errors: list

    @property
    def space_exact(self) -> bool:
        return math.isinf(self.p_space)

    @property
    def time_exact(self) -> bool:
        return math.isinf(self.p_time)


def _sup_error(traj: Trajectory, exact: Expression) -> float:
    X, Y = traj.grid.meshes()
    err = 0.0
    for i, t in enumerate(traj.times):
        env = {"x": X, "t": t} if Y is None else {"x": X, "y": Y, "t": t}
        ue = np.asarray(exact(**env)) * np.ones(traj.grid.shape)
        err = max(err, float(np.max(np.abs(traj.values[i] - ue))))
    return err


def _refit(scenario: Scenario, n_x: int, n_y, dt: float) -> Scenario:
    g = scenario.grid
    grid = SpatialGrid(g.domain, n_x, n_y)
    return Scenario(grid, scenario.horizon, dt, scenario.coefficients,
                    scenario.reaction, scenario.forcing, scenario.boundary,
                    scenario.u0, bounds=scenario.bounds, c_min_raw=scenario.c_min_raw)


def _slope(pairs) -> float:
    hs = np.log([p[0] for p in pairs])
    es = np.array([p[1] for p in pairs])
    if np.max(es) < 1e-11:
        return math.inf  # errors at rounding level: stencil-exact
    es = np.log(np.maximum(es, 1e-300))
    coef = np.polyfit(hs, es, 1)
    return float(coef[0])


def convergence_order(scenario: Scenario, exact: Expression, refinements: int = 4,
                      base_dt_time: float | None = None, jobs: int = 1) -> ConvergenceResult:
    """Measured convergence orders on h- and dt-refinement ladders.

    The space ladder halves h and dt together (both second order, so the
    slope in h is the combined order); the time ladder halves dt on the
    finest spatial grid, starting coarse enough for the time error to
    dominate.  Errors are sup-norms over all nodes and samples against
    the exact expression.  ``jobs`` > 1 runs the independent ladder
    levels in a thread pool.
    """
    if refinements < 3:
        raise ValueError("need at least 3 refinement levels for a slope")
    g = scenario.grid
    space_cases = []
    for lev in range(refinements):
        n_x = (g.n_x - 1) * 2 ** lev + 1
        n_y = None if g.n_y is None else (g.n_y - 1) * 2 ** lev + 1
        space_cases.append(_refit(scenario, n_x, n_y, scenario.dt / 2 ** lev))
    n_x = (g.n_x - 1) * 2 ** (refinements - 1) + 1
    n_y = None if g.n_y is None else (g.n_y - 1) * 2 ** (refinements - 1) + 1
    dt0 = base_dt_time if base_dt_time is not None else scenario.horizon / 16.0
    time_cases = [_refit(scenario, n_x, n_y, dt0 / 2 ** lev) for lev in range(refinements)]

    def run(sc):
        return _sup_error(solve(sc), exact)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            space_errs = list(pool.map(run, space_cases))
            time_errs = list(pool.map(run, time_cases))
    else:
        space_errs = [run(sc) for sc in space_cases]
        time_errs = [run(sc) for sc in time_cases]
    space_errors = [(sc.grid.h_max, e) for sc, e in zip(space_cases, space_errs)]
    time_errors = [(sc.dt, e) for sc, e in zip(time_cases, time_errs)]
    for name, errs in (("space", space_errors), ("time", time_errors)):
        vals = [e for _, e in errs]
        if any(b > a * 1.0000001 for a, b in zip(vals, vals[1:])) and max(vals) > 1e-11:
            warnings.warn(f"{name} errors do not decrease monotonically: {vals}")
    return ConvergenceResult(_slope(space_errors), _slope(time_errors),
                             space_errors, time_errors)


# ---------------------------------------------------------------------------
# scenario presets used across tests and docs

def heat_preset(n_x: int = 101, dt: float = 1e-3, horizon: float = 1.0) -> Scenario:
    """Pure heat equation with unit absorption on (0,1), Dirichlet zero."""
    return make_scenario(
        grid_1d(n_x), horizon, dt,
        Coefficients(parse_expression("1"), parse_expression("1"), parse_expression("1")),
        reaction_zero(), parse_expression("0"),
        BoundarySpec(DIRICHLET, parse_expression("0")),
        parse_expression("sin(pi*x)"))


def explicit_solution_preset(k: float = 1.0, n_x: int = 201, dt: float = 1e-3,
                             horizon: float = 2.0) -> Scenario:
    """Heat equation on (0, pi/2) whose exact solution is k sin(t) sin(x)."""
    k_r = repr(float(k))
    return make_scenario(
        grid_1d(n_x, 0.0, math.pi / 2), horizon, dt,
        Coefficients(parse_expression("1"), parse_expression("0"), parse_expression("1")),
        reaction_zero(),
        parse_expression(f"sqrt(2)*{k_r}*sin(x)*cos(t-pi/4)"),
        BoundarySpec(DIRICHLET, parse_expression(f"{k_r}*sin(t)*sin(x)")),
        parse_expression("0"))


def superlinear_preset(n_x: int = 101, dt: float = 2e-3, horizon: float = 2.0,
                       f: str = "0.1*sin(2*pi*x)*sin(t)", d: str = "0.05") -> Scenario:
    """1-D analogue of the super-linear example: log-poly reaction, Robin data."""
    return make_scenario(
        grid_1d(n_x), horizon, dt,
        Coefficients(parse_expression("1"), parse_expression("1"), parse_expression("1")),
        reaction_log_poly(1.0), parse_expression(f),
        BoundarySpec(ROBIN, parse_expression(d)),
        parse_expression("sin(pi*x)"))
