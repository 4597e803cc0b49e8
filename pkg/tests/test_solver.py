import math

import numpy as np
import pytest

from pdesup.core import DIRICHLET, ROBIN, Field, grid_1d, grid_2d, sup_norm_space
from pdesup.expressions import parse_expression
from pdesup.solver import (
    BoundarySpec,
    Coefficients,
    ConfigError,
    ReactionTerm,
    convergence_order,
    explicit_solution_preset,
    heat_preset,
    make_scenario,
    reaction_log_poly,
    reaction_odd_cubic,
    reaction_zero,
    solve,
    step,
    superlinear_preset,
)

E = parse_expression


def _scenario_1d(a="1", c="1", m="1", reaction=None, f="0", kind=DIRICHLET,
                 d="0", u0="sin(pi*x)", n_x=101, dt=1e-3, T=0.1, x_hi=1.0):
    return make_scenario(
        grid_1d(n_x, 0.0, x_hi), T, dt,
        Coefficients(E(a), E(c), E(m)),
        reaction or reaction_zero(), E(f),
        BoundarySpec(kind, E(d)), E(u0))


def test_assemble_heat_preset():
    sc = heat_preset()
    assert sc.bounds.a_min == 1.0
    assert sc.bounds.c_min == 1.0
    assert sc.n_steps == 1000


def test_assemble_rejects_negative_m():
    with pytest.raises(ConfigError):
        _scenario_1d(m="-1", kind=ROBIN)


def test_assemble_rejects_nonpositive_a():
    with pytest.raises(ConfigError, match="coefficient a"):
        _scenario_1d(a="x-1")  # vanishes at the right endpoint


def test_assemble_superlinear_preset():
    sc = superlinear_preset()
    assert sc.reaction.kind == "log_poly"
    assert sc.reaction.monotone
    assert sc.boundary.kind == ROBIN


def test_assemble_growth_exponent_dimension_cap():
    sc2d = make_scenario(
        grid_2d(9, 9), 0.01, 1e-3,
        Coefficients(E("1"), E("1"), E("1")),
        reaction_zero(), E("0"), BoundarySpec(DIRICHLET, E("0")),
        E("sin(pi*x)*sin(pi*y)"))
    assert sc2d.dim == 2
    with pytest.raises(ConfigError, match="growth exponent"):
        make_scenario(
            grid_2d(9, 9), 0.01, 1e-3,
            Coefficients(E("1"), E("1"), E("1")),
            reaction_log_poly(), E("0"), BoundarySpec(DIRICHLET, E("0")),
            E("0"))


def test_zero_fixed_point():
    sc = _scenario_1d(u0="0", T=0.05)
    traj = solve(sc)
    assert np.all(traj.values == 0.0)


def test_single_step_heat_mode():
    # pure heat: one CN step on the first Dirichlet eigenmode
    sc = _scenario_1d(c="0", n_x=201, dt=1e-3)
    f0 = Field(sc.grid, np.sin(np.pi * sc.grid.x))
    f1 = step(f0, 0.0, 1e-3, sc)
    expect = math.exp(-math.pi ** 2 * 1e-3) * np.sin(np.pi * sc.grid.x)
    err = np.max(np.abs(f1.values - expect))
    assert err < 5e-7  # O(dt^3 + dt*h^2) with pi^4/12-sized constants


def test_manufactured_explicit_solution():
    sc = explicit_solution_preset(k=1.0, n_x=201, dt=1e-3, horizon=2.0)
    traj = solve(sc)
    X = sc.grid.x
    err = 0.0
    for i, t in enumerate(traj.times):
        err = max(err, np.max(np.abs(traj.values[i] - math.sin(1) * 0 - np.sin(t) * np.sin(X))))
    assert err < 1e-3
    assert err < 1e-4  # second-order scheme is well below the looser bar


def test_manufactured_residual_after_substitution():
    # substituting the exact solution into one discrete step leaves only
    # truncation: step from exact state stays within O(dt^3 + dt h^2)
    sc = explicit_solution_preset(k=1.0, n_x=201, dt=1e-3)
    X = sc.grid.x
    t = 0.7
    f0 = Field(sc.grid, np.sin(t) * np.sin(X))
    f1 = step(f0, t, sc.dt, sc)
    expect = np.sin(t + sc.dt) * np.sin(X)
    assert np.max(np.abs(f1.values - expect)) < 5e-9


def test_destabilized_growth():
    # u_t = u_xx + 15 u grows like e^{(15-pi^2) t} on the first mode
    sc = _scenario_1d(c="-15", n_x=101, dt=1e-3, T=1.0)
    traj = solve(sc)
    growth = sup_norm_space(traj.field(-1)) / sup_norm_space(traj.field(0))
    assert growth > 20.0
    assert growth == pytest.approx(math.exp(15 - math.pi ** 2), rel=0.05)


def test_linear_superposition():
    kw = dict(n_x=81, dt=2e-3, T=0.2, kind=ROBIN)
    s1 = _scenario_1d(f="sin(pi*x)*cos(t)", d="0.3", u0="sin(pi*x)", **kw)
    s2 = _scenario_1d(f="x*(1-x)", d="0.1*sin(t)", u0="x", **kw)
    s12 = _scenario_1d(f="sin(pi*x)*cos(t)+x*(1-x)", d="0.3+0.1*sin(t)",
                       u0="sin(pi*x)+x", **kw)
    t1, t2, t12 = solve(s1), solve(s2), solve(s12)
    assert np.max(np.abs(t1.values + t2.values - t12.values)) < 1e-10


def test_discrete_maximum_estimate_robin():
    # f = d = 0, monotone reaction, c >= 1: sup-norm non-increasing and
    # bounded by the initial sup at every step
    sc = _scenario_1d(c="1", reaction=reaction_log_poly(), kind=ROBIN,
                      u0="sin(pi*x)+0.3*sin(3*pi*x)", n_x=101, dt=1e-3, T=0.5)
    traj = solve(sc)
    sups = traj.sup_space_per_sample()
    assert np.all(sups <= sups[0] + 1e-10)
    assert np.all(np.diff(sups) <= 1e-10)


def test_newton_residuals_logged():
    from pdesup.solver import TimeStepper
    sc = _scenario_1d(reaction=reaction_odd_cubic(0.5), kind=ROBIN, T=0.02,
                      n_x=51, dt=1e-3, u0="sin(pi*x)")
    st = TimeStepper(sc)
    st.solve()
    assert len(st.residual_log) == sc.n_steps
    assert max(st.residual_log) <= 1e-12


def test_robin_variable_coefficients_manufactured():
    # u = exp(-t) cos(x), a = 1 + x/2, c = 1, m = 2 on (0,1)
    f = "exp(-t)*((1+x/2)*cos(x)+sin(x)/2)"
    # only the endpoint values of d are used; interpolate them linearly in x
    d = "exp(-t)*(2*(1-x)+(2*cos(1)-1.5*sin(1))*x)"
    sc = make_scenario(
        grid_1d(101), 0.5, 1e-3,
        Coefficients(E("1+x/2"), E("1"), E("2")),
        reaction_zero(), E(f), BoundarySpec(ROBIN, E(d)), E("cos(x)"))
    traj = solve(sc)
    exact = np.exp(-traj.times)[:, None] * np.cos(sc.grid.x)[None, :]
    assert np.max(np.abs(traj.values - exact)) < 2e-5


def test_convergence_orders_manufactured():
    sc = explicit_solution_preset(k=1.0, n_x=26, dt=4e-3, horizon=2.0)
    res = convergence_order(sc, E("sin(t)*sin(x)"), refinements=4)
    assert res.p_space >= 1.9
    assert res.p_time >= 1.9


def test_convergence_exact_on_linear_solution():
    # stationary u = x with compatible data is reproduced to rounding
    sc = make_scenario(
        grid_1d(11), 0.1, 1e-2,
        Coefficients(E("1"), E("0"), E("1")),
        reaction_zero(), E("0"), BoundarySpec(DIRICHLET, E("x")), E("x"))
    res = convergence_order(sc, E("x"), refinements=3)
    assert res.space_exact and res.time_exact


def test_convergence_needs_three_levels():
    sc = explicit_solution_preset(n_x=26, dt=4e-3)
    with pytest.raises(ValueError):
        convergence_order(sc, E("sin(t)*sin(x)"), refinements=2)


def test_2d_heat_decay_dirichlet():
    sc = make_scenario(
        grid_2d(21, 21), 0.05, 1e-3,
        Coefficients(E("1"), E("0"), E("1")),
        reaction_zero(), E("0"), BoundarySpec(DIRICHLET, E("0")),
        E("sin(pi*x)*sin(pi*y)"))
    traj = solve(sc)
    decay = sup_norm_space(traj.field(-1))
    assert decay == pytest.approx(math.exp(-2 * math.pi ** 2 * 0.05), rel=2e-3)


def test_2d_robin_maximum_estimate():
    sc = make_scenario(
        grid_2d(17, 17), 0.1, 2e-3,
        Coefficients(E("1"), E("1"), E("1")),
        reaction_zero(), E("0"), BoundarySpec(ROBIN, E("0")),
        E("sin(pi*x)*sin(pi*y)+0.2"))
    traj = solve(sc)
    sups = traj.sup_space_per_sample()
    assert np.all(np.diff(sups) <= 1e-10)


def test_2d_robin_manufactured_convergence():
    # u = exp(-t) cos(x-1/2) cos(y-1/2) on (0,1)^2 with a = c = m = 1: the
    # Robin datum is the same single expression on all four edges by symmetry
    f = "2*exp(-t)*cos(x-1/2)*cos(y-1/2)"
    d = "exp(-t)*(cos(1/2)-sin(1/2))*cos(x-1/2)*cos(y-1/2)/cos(1/2)"

    def run(n, dt):
        sc = make_scenario(
            grid_2d(n, n), 0.08, dt,
            Coefficients(E("1"), E("1"), E("1")),
            reaction_zero(), E(f), BoundarySpec(ROBIN, E(d)),
            E("cos(x-1/2)*cos(y-1/2)"))
        traj = solve(sc)
        X, Y = sc.grid.meshes()
        exact = (np.exp(-traj.times)[:, None, None]
                 * (np.cos(X - 0.5) * np.cos(Y - 0.5))[None, :, :])
        return np.max(np.abs(traj.values - exact))

    e1 = run(11, 4e-3)
    e2 = run(21, 2e-3)
    order = math.log2(e1 / e2)
    assert order > 1.7
