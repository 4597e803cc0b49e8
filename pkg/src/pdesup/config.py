"""Scenario-file parsing.

Scenario files are flat INI text with sections [domain], [grid],
[coefficients], [initial], [reaction], [disturbances], [boundary],
[cascade], [check]; every function-valued entry is an expression string
over x[, y] and t (radians, dimensionless).  See the README for the key
reference and examples.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path

from .cascade import CascadeSpec, SubsystemSpec, build_cascade
from .core import DIRICHLET, ROBIN, SpatialGrid, grid_1d, grid_2d
from .expressions import Expression, ParseError, parse_expression
from .solver import (
    BoundarySpec,
    Coefficients,
    ConfigError,
    ReactionTerm,
    Scenario,
    make_scenario,
    reaction_log_poly,
    reaction_odd_cubic,
    reaction_zero,
)


def load_config(path) -> configparser.ConfigParser:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(p.read_text(encoding="utf-8"))
    except configparser.Error as e:
        raise ConfigError(f"config parse error: {e}") from None
    return cp


def _expr(cp, section, key, default=None, variables=("x", "y", "t")) -> Expression | None:
    if not cp.has_option(section, key):
        if default is None:
            return None
        return parse_expression(default, variables)
    try:
        return parse_expression(cp.get(section, key), variables)
    except ParseError as e:
        raise ConfigError(f"[{section}] {key}: {e}") from None


def _float(cp, section, key, default=None) -> float | None:
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    if raw.lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: not a number: {raw!r}") from None


def _int(cp, section, key, default=None) -> int | None:
    v = _float(cp, section, key, default)
    if v is None:
        return None
    return int(v)


def grid_from_config(cp) -> SpatialGrid:
    kind = cp.get("domain", "kind", fallback="interval").strip()
    x_lo = _float(cp, "domain", "x_lo", 0.0)
    x_hi = _float(cp, "domain", "x_hi", 1.0)
    n_x = _int(cp, "grid", "n_x", 101)
    if kind == "interval":
        return grid_1d(n_x, x_lo, x_hi)
    if kind == "rectangle":
        y_lo = _float(cp, "domain", "y_lo", 0.0)
        y_hi = _float(cp, "domain", "y_hi", 1.0)
        n_y = _int(cp, "grid", "n_y", n_x)
        return grid_2d(n_x, n_y, x_lo, x_hi, y_lo, y_hi)
    raise ConfigError(f"unknown domain kind {kind!r}")


def reaction_from_config(cp, section="reaction", suffix="") -> ReactionTerm:
    kind = cp.get(section, "kind" + suffix, fallback="zero").strip()
    scale = _float(cp, section, "scale" + suffix, 1.0)
    if kind == "zero":
        return reaction_zero()
    if kind == "log_poly":
        return reaction_log_poly(scale)
    if kind == "odd_cubic":
        return reaction_odd_cubic(scale)
    if kind == "custom":
        expr = _expr(cp, section, "expr" + suffix, variables=("x", "y", "t", "u"))
        if expr is None:
            raise ConfigError("custom reaction needs expr")
        lam = _float(cp, section, "lambda" + suffix, 1.0)
        c0 = _float(cp, section, "c0" + suffix, 1.0)
        monotone = cp.getboolean(section, "monotone" + suffix, fallback=False)
        return ReactionTerm("custom", scale=scale, expr=expr, growth_exponent=lam,
                            growth_constant=c0, monotone=monotone)
    raise ConfigError(f"unknown reaction kind {kind!r}")


def coefficients_from_config(cp, section="coefficients", suffix="") -> Coefficients:
    return Coefficients(
        a=_expr(cp, section, "a" + suffix, "1"),
        c=_expr(cp, section, "c" + suffix, "0"),
        m=_expr(cp, section, "m" + suffix, "1"),
        declared_a_min=_float(cp, section, "a_min" + suffix),
        declared_c_min=_float(cp, section, "c_min" + suffix),
        declared_m_min=_float(cp, section, "m_min" + suffix),
    )


def _boundary_expr(cp, grid, d_key) -> Expression:
    """One d(x[,y],t) expression; intervals may give d_left/d_right instead.

    Separate endpoint expressions are joined by linear interpolation in
    x, which is exact at the two nodes where the value is used.
    """
    lk, rk = d_key + "_left", d_key + "_right"
    if cp.has_option("disturbances", lk) or cp.has_option("disturbances", rk):
        if grid.dim != 1:
            raise ConfigError("d_left/d_right are for interval domains only")
        left = cp.get("disturbances", lk, fallback="0")
        right = cp.get("disturbances", rk, fallback="0")
        lo, hi = grid.domain.x_lo, grid.domain.x_hi
        span = hi - lo
        text = (f"(({left}))*(({hi!r})-x)/({span!r})"
                f"+(({right}))*(x-({lo!r}))/({span!r})")
        return _parse_joined(text)
    return _expr(cp, "disturbances", d_key, "0")


def _parse_joined(text: str) -> Expression:
    try:
        return parse_expression(text)
    except ParseError as e:
        raise ConfigError(f"[disturbances] d_left/d_right: {e}") from None


def scenario_from_config(cp, f_key="f", d_key="d") -> Scenario:
    """Assemble the (single-system) scenario a config file describes."""
    grid = grid_from_config(cp)
    dt = _float(cp, "grid", "dt", 1e-3)
    horizon = _float(cp, "grid", "T", 1.0)
    kind = cp.get("boundary", "kind", fallback="dirichlet").strip().lower()
    if kind not in (ROBIN, DIRICHLET):
        raise ConfigError(f"unknown boundary kind {kind!r}")
    f = _expr(cp, "disturbances", f_key, "0")
    d = _boundary_expr(cp, grid, d_key)
    u0 = _expr(cp, "initial", "u0", "0")
    return make_scenario(grid, horizon, dt, coefficients_from_config(cp),
                         reaction_from_config(cp), f, BoundarySpec(kind, d), u0)


def rkes_pair_from_config(cp) -> tuple[Scenario, Scenario]:
    """The two scenarios of a relative-stability check: (f,d) and (f2,d2)."""
    first = scenario_from_config(cp)
    second = scenario_from_config(cp, f_key="f2", d_key="d2")
    return first, second


def cascade_from_config(cp) -> CascadeSpec:
    if not cp.has_section("cascade"):
        raise ConfigError("config has no [cascade] section")
    grid = grid_from_config(cp)
    dt = _float(cp, "grid", "dt", 1e-3)
    horizon = _float(cp, "grid", "T", 1.0)
    k = _int(cp, "cascade", "k")
    if k is None:
        raise ConfigError("[cascade] needs k")
    topology = cp.get("cascade", "topology", fallback="").strip()
    subs = []
    for j in range(1, k + 1):
        coeffs = Coefficients(
            a=_expr(cp, "cascade", f"a_{j}", cp.get("cascade", "a", fallback="1")),
            c=_expr(cp, "cascade", f"c_{j}", cp.get("cascade", "c", fallback="0")),
            m=_expr(cp, "cascade", f"m_{j}", cp.get("cascade", "m", fallback="1")),
        )
        u0 = _expr(cp, "cascade", f"phi_{j}", "0")
        if cp.has_option("cascade", f"reaction_{j}"):
            rx_kind = cp.get("cascade", f"reaction_{j}").strip()
            rx = {"zero": reaction_zero, "log_poly": reaction_log_poly,
                  "odd_cubic": reaction_odd_cubic}.get(rx_kind)
            if rx is None:
                raise ConfigError(f"unknown cascade reaction {rx_kind!r}")
            reaction = rx()
        else:
            reaction = reaction_zero()
        subs.append(SubsystemSpec(coeffs, reaction, u0))
    external_d = _expr(cp, "cascade", "d")
    external_f = _expr(cp, "cascade", "f")
    boundary_exprs = None
    if topology.startswith("dirichlet"):
        boundary_exprs = [_expr(cp, "cascade", f"d_{j}", "0") for j in range(1, k + 1)]
    q = _float(cp, "check", "q", math.inf) if cp.has_section("check") else math.inf
    c_s = _float(cp, "check", "c_s") if cp.has_section("check") else None
    c_p = _float(cp, "check", "c_p") if cp.has_section("check") else None
    return build_cascade(subs, topology, grid, dt, horizon, external_d=external_d,
                         external_f=external_f, boundary_exprs=boundary_exprs,
                         q=q, c_s=c_s, c_p=c_p)


@dataclass(frozen=True)
class CheckSettings:
    q: float = math.inf
    tol: float | None = None
    c_s: float | None = None
    c_p: float | None = None
    c: float | None = None
    sigma: float | None = None
    n: int | None = None
    exact: Expression | None = None
    refinements: int = 4


def check_settings_from_config(cp) -> CheckSettings:
    if not cp.has_section("check"):
        return CheckSettings()
    return CheckSettings(
        q=_float(cp, "check", "q", math.inf),
        tol=_float(cp, "check", "tol"),
        c_s=_float(cp, "check", "c_s"),
        c_p=_float(cp, "check", "c_p"),
        c=_float(cp, "check", "c"),
        sigma=_float(cp, "check", "sigma"),
        n=_int(cp, "check", "n"),
        exact=_expr(cp, "check", "exact"),
        refinements=_int(cp, "check", "refinements", 4),
    )
