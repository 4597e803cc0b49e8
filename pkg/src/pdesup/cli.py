"""Command-line experiment orchestration and CSV emission.

Commands: simulate, gains, verify-iss, verify-rkes, verify-decay,
backstep, cascade, convergence.  Exit codes: 0 all checks pass (or
nothing asserted), 1 a bound check failed, 2 configuration or parse
error, 3 numerical failure (Newton or sweep divergence).

CSV outputs are byte-deterministic for a fixed config and version:
floats are printed with repr-faithful 17 significant digits, UTF-8,
LF line endings.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import backstepping, cascade as cascade_mod, harness
from .config import (
    cascade_from_config,
    check_settings_from_config,
    load_config,
    rkes_pair_from_config,
    scenario_from_config,
)
from .core import DIRICHLET, ROBIN
from .expressions import ParseError
from .gains import (
    CoefficientBounds,
    closed_loop_forcing_gain,
    geometry_factor,
    kernel_bound_constant,
    rkes_gains_dirichlet,
    rkes_gains_robin,
    sobolev_constants_1d,
    superlinear_gain,
)
from .solver import ConfigError, SolverError, convergence_order, solve

EXIT_PASS = 0
EXIT_BOUND_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL = 3


def _fmt(v) -> str:
    if v is None:
        return "nan"
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(c if isinstance(c, str) else _fmt(c) for c in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _write_trajectory(path: Path, traj):
    g = traj.grid
    rows = []
    if g.dim == 1:
        for i, t in enumerate(traj.times):
            for j, x in enumerate(g.x):
                rows.append((t, x, traj.values[i, j]))
        _write_csv(path, ("t", "x", "u"), rows)
    else:
        for i, t in enumerate(traj.times):
            for iy, y in enumerate(g.y):
                for ix, x in enumerate(g.x):
                    rows.append((t, x, y, traj.values[i, iy, ix]))
        _write_csv(path, ("t", "x", "y", "u"), rows)


def _write_supnorms(path: Path, traj, f_sups, d_sups, bounds):
    sups = traj.sup_space_per_sample()
    rows = []
    for i, t in enumerate(traj.times):
        b = bounds[i] if bounds is not None else math.nan
        margin = b - sups[i] if bounds is not None else math.nan
        rows.append((t, sups[i], f_sups[i], d_sups[i], b, margin))
    _write_csv(path, ("t", "sup_space", "running_sup_f", "running_sup_d",
                      "bound", "margin"), rows)


def _write_report(path: Path, reports):
    rows = []
    for rep in reports:
        wx = rep.worst_location[0] if rep.worst_location else math.nan
        wt = rep.worst_location[-1] if rep.worst_location else math.nan
        rows.append((rep.check, rep.verdict, rep.worst_margin, wx, wt))
    _write_csv(path, ("check", "verdict", "worst_margin", "witness_x", "witness_t"), rows)


def _gain_set(scenario, settings):
    c_s, c_p = sobolev_constants_1d()
    if scenario.dim != 1:
        if settings.c_s is None or settings.c_p is None:
            raise ConfigError("2-D bound checks need c_s and c_p in [check] "
                              "(conditional on supplied constants)")
        c_s, c_p = settings.c_s, settings.c_p
    else:
        c_s = settings.c_s if settings.c_s is not None else c_s
        c_p = settings.c_p if settings.c_p is not None else c_p
    vol = scenario.grid.domain.volume
    if scenario.boundary.kind == ROBIN:
        return rkes_gains_robin(scenario.bounds, vol, c_s, settings.q)
    return rkes_gains_dirichlet(scenario.bounds, vol, c_s, c_p, settings.q)


def _exit_from_report(rep) -> int:
    if rep.verdict == harness.FAIL:
        return EXIT_BOUND_FAILED
    return EXIT_PASS


def cmd_simulate(cp, out: Path, settings, args) -> int:
    sc = scenario_from_config(cp)
    traj = solve(sc)
    _write_trajectory(out / "trajectory.csv", traj)
    f_sups = harness.running_sup_forcing(sc, traj.times)
    d_sups = harness.running_sup_boundary(sc, traj.times)
    bounds = None
    if sc.bounds is not None and sc.c_min_raw > 0 and sc.reaction.monotone:
        rep = harness.check_iss(traj, sc, _gain_set(sc, settings), settings.tol)
        bounds = [d.bound for d in rep.details]
    _write_supnorms(out / "supnorms.csv", traj, f_sups, d_sups, bounds)
    print(f"simulated {traj.n_samples} samples; final sup-norm "
          f"{traj.sup_space_per_sample()[-1]:.6g}")
    return EXIT_PASS


def cmd_gains(cp, out: Path, settings, args) -> int:
    c_s, c_p = sobolev_constants_1d()
    rows = [
        ("c_s_1d", c_s, "1-D embedding constant, norm+gradient form"),
        ("c_p_1d", c_p, "1-D embedding constant, zero-trace gradient form"),
    ]
    sc = None
    try:
        sc = scenario_from_config(cp)
    except ConfigError:
        pass
    vol = sc.grid.domain.volume if sc is not None else 1.0
    q = settings.q
    rows.append(("geometry_factor", geometry_factor(vol, q),
                 f"volume^((q-2)/q) * 2^((3q-4)/(2q-4)) at volume={_fmt(vol)}, q={_fmt(q)}"))
    if sc is not None and sc.bounds is not None:
        try:
            g = _gain_set(sc, settings)
            rows.append(("l_f", g.l_f, "in-domain sup-norm gain"))
            rows.append(("l_d", g.l_d, "boundary sup-norm gain"))
            rows.append(("decay_rate", g.decay_rate, "zero-input exponential rate"))
            if g.c_0 is not None:
                rows.append(("c_0", g.c_0, "combined Dirichlet in-domain constant"))
        except (ConfigError, ValueError):
            pass
    if settings.c is not None and settings.sigma is not None:
        m = kernel_bound_constant(settings.c, settings.sigma, 1e-12)
        rows.append(("M", m, f"kernel series bound at c={_fmt(settings.c)}, "
                             f"sigma={_fmt(settings.sigma)}"))
        rows.append(("C", closed_loop_forcing_gain(settings.c),
                     "closed-loop in-domain gain"))
    if settings.n is not None:
        rows.append(("superlinear_gain", superlinear_gain(settings.n, vol),
                     f"flat-boundary in-domain gain at n={settings.n}, volume={_fmt(vol)}"))
    _write_csv(out / "gains.csv", ("name", "value", "provenance"), rows)
    for name, value, _ in rows:
        print(f"{name} = {_fmt(value)}")
    return EXIT_PASS


def cmd_verify_iss(cp, out: Path, settings, args) -> int:
    sc = scenario_from_config(cp)
    traj = solve(sc)
    rep = harness.check_iss(traj, sc, _gain_set(sc, settings), settings.tol)
    f_sups = harness.running_sup_forcing(sc, traj.times)
    d_sups = harness.running_sup_boundary(sc, traj.times)
    bounds = [d.bound for d in rep.details] if rep.details else None
    _write_supnorms(out / "supnorms.csv", traj, f_sups, d_sups, bounds)
    _write_report(out / "report.csv", [rep])
    print(f"iss: {rep.verdict} (worst margin {_fmt(rep.worst_margin)})")
    return _exit_from_report(rep)


def cmd_verify_rkes(cp, out: Path, settings, args) -> int:
    sc1, sc2 = rkes_pair_from_config(cp)
    t1, t2 = solve(sc1), solve(sc2)
    rep = harness.check_rkes((t1, t2), (sc1, sc2), _gain_set(sc1, settings), settings.tol)
    _write_report(out / "report.csv", [rep])
    print(f"rkes: {rep.verdict} (worst margin {_fmt(rep.worst_margin)})")
    return _exit_from_report(rep)


def cmd_verify_decay(cp, out: Path, settings, args) -> int:
    sc = scenario_from_config(cp)
    traj = solve(sc)
    u0_sup = float(np.max(np.abs(sc.initial_values())))
    rep = harness.check_decay(traj, sc.bounds.c_min, u0_sup, settings.tol, scenario=sc)
    _write_report(out / "report.csv", [rep])
    print(f"decay: {rep.verdict} (worst margin {_fmt(rep.worst_margin)})")
    return _exit_from_report(rep)


def cmd_backstep(cp, out: Path, settings, args) -> int:
    from .config import _expr
    if settings.c is None or settings.sigma is None:
        raise ConfigError("[check] needs c and sigma for the closed loop")
    sc = scenario_from_config(cp)
    d0 = _expr(cp, "disturbances", "d0", "0")
    d1 = _expr(cp, "disturbances", "d1", "0")
    res = backstepping.simulate_closed_loop(
        settings.c, settings.sigma, sc.u0, sc.forcing, d0, d1,
        sc.grid, sc.dt, sc.horizon, tol=settings.tol)
    _write_trajectory(out / "trajectory.csv", res.u)
    _write_trajectory(out / "trajectory_target.csv", res.w)
    _write_report(out / "report.csv", [res.report])
    m = kernel_bound_constant(settings.c, settings.sigma, 1e-12)
    _write_csv(out / "gains.csv", ("name", "value", "provenance"), [
        ("M", m, "kernel series bound"),
        ("C", closed_loop_forcing_gain(settings.c), "closed-loop in-domain gain"),
        ("max_kernel", res.kernel.triangle_max_abs(), "series kernel sup"),
    ])
    print(f"closed loop: {res.report.verdict} "
          f"(worst margin {_fmt(res.report.worst_margin)})")
    return _exit_from_report(res.report)


def cmd_cascade(cp, out: Path, settings, args) -> int:
    spec = cascade_from_config(cp)
    trajs = cascade_mod.simulate_cascade(spec)
    rep = cascade_mod.verify_cascade(spec, trajs, settings.tol)
    for j, tr in enumerate(trajs, start=1):
        sups = tr.sup_space_per_sample()
        rows = [(t, sups[i]) for i, t in enumerate(tr.times)]
        _write_csv(out / f"supnorms_{j}.csv", ("t", "sup_space"), rows)
    _write_report(out / "report.csv", [rep])
    print(f"cascade[{spec.topology}]: {rep.verdict} "
          f"(small-gain {_fmt(spec.small_gain)}; worst margin {_fmt(rep.worst_margin)})")
    return _exit_from_report(rep)


def cmd_convergence(cp, out: Path, settings, args) -> int:
    sc = scenario_from_config(cp)
    if settings.exact is None:
        raise ConfigError("[check] needs exact = <expression> for convergence")
    res = convergence_order(sc, settings.exact, settings.refinements)
    rows = [("space", h, e) for h, e in res.space_errors]
    rows += [("time", d, e) for d, e in res.time_errors]
    _write_csv(out / "convergence.csv", ("ladder", "step", "sup_error"), rows)
    _write_csv(out / "orders.csv", ("direction", "order"), [
        ("space", res.p_space), ("time", res.p_time)])
    print(f"orders: space {_fmt(res.p_space)}, time {_fmt(res.p_time)}")
    return EXIT_PASS


_COMMANDS = {
    "simulate": cmd_simulate,
    "gains": cmd_gains,
    "verify-iss": cmd_verify_iss,
    "verify-rkes": cmd_verify_rkes,
    "verify-decay": cmd_verify_decay,
    "backstep": cmd_backstep,
    "cascade": cmd_cascade,
    "convergence": cmd_convergence,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pdesup",
        description="simulate disturbed parabolic PDEs and verify sup-norm stability bounds")
    p.add_argument("command", choices=sorted(_COMMANDS))
    p.add_argument("--config", required=True, help="scenario file (INI sections)")
    p.add_argument("--out", default="out", help="output directory for CSV artifacts")
    p.add_argument("--tol", type=float, default=None,
                   help="override the default check tolerance")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for randomized hypothesis probes")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel workers for independent runs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cp = load_config(args.config)
        settings = check_settings_from_config(cp)
        if args.tol is not None:
            from dataclasses import replace
            settings = replace(settings, tol=args.tol)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cp, out, settings, args)
    except (ConfigError, ParseError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except SolverError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
