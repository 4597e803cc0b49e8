"""Bound-verification engine.

Each checker compares a simulated trajectory against an explicit
envelope at every stored sample and produces a :class:`Report` with the
worst margin and a concrete witness location.  Margins are ``bound -
observed``; a check passes when every margin clears ``-tol`` where the
default tolerance combines a relative term with an estimated
discretization slack:

    tol = 1e-6 * (1 + bound) + 10 * (h^2 + dt^2)

The envelopes themselves are deliberately conservative, so a violation
beyond this slack indicates a bug (in the solver, in a gain, or in the
hypotheses), not bound sharpness.  Hypothesis probes (monotone reaction,
growth envelope) and the level-set diagnostic for sup-norm conclusions
live here as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DIRICHLET, ROBIN, SpatialGrid, Trajectory, diff_trajectory
from .expressions import is_zero
from .gains import GainSet, iss_bound_dirichlet, iss_bound_robin
from .solver import ReactionTerm, Scenario

PASS = "pass"
FAIL = "fail"
NOT_ASSERTED = "not-asserted"


@dataclass(frozen=True)
class SampleCheck:
    t: float
    observed: float
    bound: float
    margin: float
    tol: float


@dataclass(frozen=True)
class LevelMeasure:
    level: float
    measure: float


@dataclass
class Report:
    """Outcome of one bound check."""

    check: str
    verdict: str
    worst_margin: float
    worst_location: tuple | None
    samples_checked: int
    details: list = field(default_factory=list)
    notes: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == PASS


def default_tolerance(bound: float, grid: SpatialGrid, dt: float) -> float:
    return 1e-6 * (1.0 + bound) + 10.0 * (grid.h_max ** 2 + dt ** 2)


def _witness(traj: Trajectory, i: int) -> tuple:
    flat = np.abs(traj.values[i].ravel())
    node = int(np.argmax(flat))
    return (*traj.grid.node_location(node), float(traj.times[i]))


def _report_from_samples(name: str, traj: Trajectory, observed, bounds, tols) -> Report:
    details = []
    worst_i = 0
    worst = math.inf
    ok = True
    for i in range(len(observed)):
        margin = bounds[i] - observed[i]
        details.append(SampleCheck(float(traj.times[i]), float(observed[i]),
                                   float(bounds[i]), float(margin), float(tols[i])))
        if margin < -tols[i]:
            ok = False
        if margin < worst:
            worst = margin
            worst_i = i
    return Report(check=name, verdict=PASS if ok else FAIL, worst_margin=float(worst),
                  worst_location=_witness(traj, worst_i), samples_checked=len(observed),
                  details=details)


def _nodal_env(grid: SpatialGrid):
    X, Y = grid.meshes()
    return {"x": X} if Y is None else {"x": X, "y": Y}


def running_sup_forcing(scenario: Scenario, times) -> np.ndarray:
    """Running sup over nodes and samples of |f| up to each sample time."""
    env = _nodal_env(scenario.grid)
    sups = np.empty(len(times))
    for i, t in enumerate(times):
        vals = np.asarray(scenario.forcing(t=t, **env)) * np.ones(scenario.grid.shape)
        sups[i] = np.max(np.abs(vals))
    return np.maximum.accumulate(sups)


def running_sup_boundary(scenario: Scenario, times) -> np.ndarray:
    """Running sup over boundary nodes and samples of |d|."""
    from .solver import _boundary_coords
    xb, yb = _boundary_coords(scenario.grid)
    sups = np.empty(len(times))
    for i, t in enumerate(times):
        env = {"x": xb, "t": t}
        if yb is not None:
            env["y"] = yb
        vals = np.asarray(scenario.boundary.data(**env)) * np.ones_like(xb)
        sups[i] = np.max(np.abs(vals))
    return np.maximum.accumulate(sups)


def check_iss(traj: Trajectory, scenario: Scenario, g: GainSet,
              tol: float | None = None) -> Report:
    """Spatial sup-norm at every sample against the exponential ISS envelope."""
    if g.boundary_kind != scenario.boundary.kind:
        raise ValueError("gain set boundary kind does not match the scenario")
    if scenario.c_min_raw <= 0 or not scenario.reaction.monotone:
        return Report("iss", NOT_ASSERTED, math.nan, None, 0,
                      notes="hypotheses not met: need c_min > 0 and a monotone reaction")
    observed = traj.sup_space_per_sample()
    u0_sup = observed[0]
    f_sups = running_sup_forcing(scenario, traj.times)
    d_sups = running_sup_boundary(scenario, traj.times)
    bound_fn = iss_bound_robin if g.boundary_kind == ROBIN else iss_bound_dirichlet
    bounds = np.array([bound_fn(t, u0_sup, f_sups[i], d_sups[i], g)
                       for i, t in enumerate(traj.times)])
    tols = [default_tolerance(b, scenario.grid, scenario.dt) if tol is None else tol
            for b in bounds]
    return _report_from_samples("iss", traj, observed, bounds, tols)


def _require_same_but_disturbances(sc1: Scenario, sc2: Scenario):
    same = (sc1.grid == sc2.grid and sc1.dt == sc2.dt and sc1.horizon == sc2.horizon
            and sc1.coefficients.a == sc2.coefficients.a
            and sc1.coefficients.c == sc2.coefficients.c
            and sc1.coefficients.m == sc2.coefficients.m
            and sc1.reaction == sc2.reaction
            and sc1.boundary.kind == sc2.boundary.kind
            and sc1.u0 == sc2.u0)
    if not same:
        raise ValueError("scenarios differ beyond the disturbance pair (f, d)")


def check_rkes(traj_pair, scenario_pair, g: GainSet, tol: float | None = None) -> Report:
    """Space-time sup of the solution difference against the linear RKES bound.

    Both scenarios must share everything except (f, d); the bound is
    checked on every growing window [0, T_i].
    """
    traj1, traj2 = traj_pair
    sc1, sc2 = scenario_pair
    _require_same_but_disturbances(sc1, sc2)
    d = diff_trajectory(traj1, traj2)
    observed = np.maximum.accumulate(d.sup_space_per_sample())
    env = _nodal_env(sc1.grid)
    f_diffs = np.empty(d.n_samples)
    for i, t in enumerate(d.times):
        v1 = np.asarray(sc1.forcing(t=t, **env)) * np.ones(sc1.grid.shape)
        v2 = np.asarray(sc2.forcing(t=t, **env)) * np.ones(sc1.grid.shape)
        f_diffs[i] = np.max(np.abs(v1 - v2))
    from .solver import _boundary_coords
    xb, yb = _boundary_coords(sc1.grid)
    benv = {"x": xb} if yb is None else {"x": xb, "y": yb}
    d_diffs = np.empty(d.n_samples)
    for i, t in enumerate(d.times):
        v1 = np.asarray(sc1.boundary.data(t=t, **benv)) * np.ones_like(xb)
        v2 = np.asarray(sc2.boundary.data(t=t, **benv)) * np.ones_like(xb)
        d_diffs[i] = np.max(np.abs(v1 - v2))
    f_run = np.maximum.accumulate(f_diffs)
    d_run = np.maximum.accumulate(d_diffs)
    bounds = g.l_f * f_run + g.l_d * d_run
    tols = [default_tolerance(b, sc1.grid, sc1.dt) if tol is None else tol for b in bounds]
    return _report_from_samples("rkes", d, observed, bounds, tols)


def check_decay(traj: Trajectory, c_min: float, u0_sup: float,
                tol: float | None = None, scenario: Scenario | None = None) -> Report:
    """Zero-input decay: spatial sup at T bounded by u0_sup * exp(-c_min T)."""
    if c_min <= 0:
        raise ValueError("decay check needs c_min > 0")
    if scenario is not None:
        if not (is_zero(scenario.forcing) and is_zero(scenario.boundary.data)):
            raise ValueError("decay check requires zero disturbances in the scenario")
    observed = traj.sup_space_per_sample()
    bounds = u0_sup * np.exp(-c_min * traj.times)
    dt = float(traj.times[1] - traj.times[0]) if traj.n_samples > 1 else 0.0
    tols = [default_tolerance(b, traj.grid, dt) if tol is None else tol for b in bounds]
    return _report_from_samples("decay", traj, observed, bounds, tols)


def monotonicity_probe(reaction: ReactionTerm, n_samples: int = 256, rng=None) -> bool:
    """Sampled check that (h(.,xi1)-h(.,xi2))(xi1-xi2) >= 0."""
    rng = np.random.default_rng(0) if rng is None else rng
    xs = rng.uniform(0.0, 1.0, n_samples)
    ys = rng.uniform(0.0, 1.0, n_samples)
    ts = rng.uniform(0.0, 10.0, n_samples)
    scale = 10.0 ** rng.uniform(-2, 3, (2, n_samples))
    xi1 = rng.choice([-1, 1], n_samples) * scale[0]
    xi2 = rng.choice([-1, 1], n_samples) * scale[1]
    h1 = reaction.value(xs, ys, ts, xi1)
    h2 = reaction.value(xs, ys, ts, xi2)
    return bool(np.all((h1 - h2) * (xi1 - xi2) >= -1e-12))


def growth_probe(reaction: ReactionTerm, growth_exponent: float,
                 growth_constant: float, n_samples: int = 256, rng=None) -> bool:
    """Sampled check of |h| <= c0 (1 + |xi|^lambda) on |xi| <= 1e3."""
    rng = np.random.default_rng(1) if rng is None else rng
    xs = rng.uniform(0.0, 1.0, n_samples)
    ys = rng.uniform(0.0, 1.0, n_samples)
    ts = rng.uniform(0.0, 10.0, n_samples)
    xi = rng.choice([-1, 1], n_samples) * 10.0 ** rng.uniform(-3, 3, n_samples)
    h = reaction.value(xs, ys, ts, xi)
    env = growth_constant * (1.0 + np.abs(xi) ** growth_exponent)
    return bool(np.all(np.abs(h) <= env + 1e-12))


def level_set_diagnostic(traj: Trajectory, k0: float, forcing_term: float,
                         tol: float | None = None, k0_mirror: float | None = None,
                         n_levels: int = 13) -> Report:
    """Level-set conclusion check for a difference (or zero-input) trajectory.

    (a) pointwise: max w over all samples <= k0 + forcing_term + tol,
    mirrored for -w with ``k0_mirror`` (defaults to k0); (b) for a
    ladder of levels k above k0 the discrete measure of {w > k}
    (node-count fraction times domain volume) is non-increasing in k and
    vanishes at the top level k0 + forcing_term + tol.
    """
    if k0_mirror is None:
        k0_mirror = k0
    dt = float(traj.times[1] - traj.times[0]) if traj.n_samples > 1 else 0.0
    cap_plus = k0 + forcing_term
    cap_minus = k0_mirror + forcing_term
    tol_eff = default_tolerance(max(cap_plus, cap_minus), traj.grid, dt) if tol is None else tol

    w = traj.values
    max_w = float(np.max(w))
    max_neg = float(np.max(-w))
    margins = [cap_plus - max_w, cap_minus - max_neg]
    ok = margins[0] >= -tol_eff and margins[1] >= -tol_eff

    volume = traj.grid.domain.volume
    n_nodes = traj.grid.n_nodes
    levels = np.linspace(k0, cap_plus + tol_eff, n_levels)
    flat = w.reshape(traj.n_samples, -1)
    measures = []
    for k in levels:
        frac = np.max(np.sum(flat > k, axis=1)) / n_nodes
        measures.append(LevelMeasure(float(k), float(frac * volume)))
    mono = all(measures[i].measure >= measures[i + 1].measure for i in range(len(measures) - 1))
    vanish = measures[-1].measure == 0.0
    ok = ok and mono and vanish

    worst = min(margins)
    i_side = int(np.argmin(margins))
    arr = w if i_side == 0 else -w
    i_t, i_node = np.unravel_index(int(np.argmax(arr.reshape(traj.n_samples, -1))),
                                   (traj.n_samples, n_nodes))
    notes = []
    if not mono:
        notes.append("level-set measures not monotone")
    if not vanish:
        notes.append("top level-set measure nonzero")
    return Report(check="level-set", verdict=PASS if ok else FAIL,
                  worst_margin=float(worst),
                  worst_location=(*traj.grid.node_location(int(i_node)), float(traj.times[i_t])),
                  samples_checked=traj.n_samples, details=measures,
                  notes="; ".join(notes))
