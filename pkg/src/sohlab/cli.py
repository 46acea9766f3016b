"""Command-line entry point: ``sohlab <command> --config run.cfg``.

Config files are ``key = value`` lines grouped under ``[section]`` headers;
``#`` starts a comment. Keys written before the first header are global
(``command``, ``seed``, ``output_dir``, ``deterministic``) or, failing
that, belong to the command's own section, so ``d = 1.0`` / ``m = 2`` is a
complete ``coeffs`` config.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass, field
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from .coefficients import CoefficientSet, Kernel, compute_coefficients
from .errors import ConfigurationError, DomainError, SohLabError
from .particles import (ParticleParams, empirical_fields, global_order_parameter,
                        make_ensemble, run_particles)
from .scenarios import (ComparisonReport, MillingParams, RiemannSpec, compare_fields,
                        mill_residual, milling_profile_shape, milling_solution,
                        noisy_band_fields, noisy_fields, riemann_init,
                        sample_riemann_particles)
from .soh import SohGrid, SohSolverConfig, soh_run, uniform_fields

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

COMMANDS = ("coeffs", "particles", "soh", "riemann-compare", "mill-check")
HOME_SECTION = {"coeffs": "coeffs", "particles": "particles", "soh": "soh",
                "riemann-compare": "riemann", "mill-check": "mill"}


# --------------------------------------------------------------------------
# typed keys
# --------------------------------------------------------------------------

class _Invalid(Exception):
    pass


def _real(text):
    try:
        x = float(text)
    except ValueError:
        raise _Invalid(f"expected a real number, got {text!r}") from None
    if not math.isfinite(x):
        raise _Invalid(f"expected a finite number, got {text!r}")
    return x


def _int(text):
    try:
        return int(text)
    except ValueError:
        raise _Invalid(f"expected an integer, got {text!r}") from None


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise _Invalid(f"expected a boolean, got {text!r}")


def _list(item):
    def parse(text):
        parts = [p.strip() for p in text.split(",")]
        if not parts or any(not p for p in parts):
            raise _Invalid(f"expected a comma-separated list, got {text!r}")
        return tuple(item(p) for p in parts)
    return parse


@dataclass(frozen=True)
class Key:
    kind: str               # real, int, bool, enum, reals, ints, str
    default: object = None
    required: bool = False
    choices: tuple = ()
    check: object = None    # (predicate, description)

    def parse(self, text):
        if self.kind == "enum":
            if text not in self.choices:
                raise _Invalid(f"expected one of {', '.join(self.choices)}, got {text!r}")
            value = text
        else:
            value = {"real": _real, "int": _int, "bool": _bool, "str": str,
                     "reals": _list(_real), "ints": _list(_int)}[self.kind](text)
        if self.check is not None:
            pred, desc = self.check
            items = value if isinstance(value, tuple) else (value,)
            if not all(pred(v) for v in items):
                raise _Invalid(f"must be {desc}, got {text!r}")
        return value


POS = (lambda x: x > 0, "positive")
NONNEG = (lambda x: x >= 0, "nonnegative")
DIMS = (lambda x: x in (2, 3), "2 or 3")
UNIT_CFL = (lambda x: 0 < x <= 1, "in (0, 1]")
AT_LEAST_4 = (lambda x: x >= 4, "at least 4")
N_THETA = (lambda x: x >= 64, "at least 64")
RIEMANN_DEFAULTS = {"rho_l": 2.0, "angle_l": 1.7, "rho_r": 1.0, "angle_r": 0.5}

GLOBAL_KEYS = {
    "command": Key("enum", choices=COMMANDS),
    "seed": Key("int", 0, check=NONNEG),
    "output_dir": Key("str", "out"),
    "deterministic": Key("bool", False),
}

_COEFF_KEYS = {
    "eta0": Key("real", 0.0, check=NONNEG),
    "kernel": Key("enum", "indicator", choices=("indicator", "gaussian")),
    "kernel_radius": Key("real", 1.0, check=POS),
    "n_theta": Key("int", 2048, check=N_THETA),
}

SCHEMAS = {
    "coeffs": {
        "coeffs": {"d": Key("real", check=POS), "d_grid": Key("reals", check=POS),
                   "m": Key("int", required=True, check=DIMS), **_COEFF_KEYS},
    },
    "particles": {
        "particles": {
            "n": Key("int", required=True, check=(lambda x: x >= 1, "at least 1")),
            "m": Key("int", 2, check=DIMS),
            "c": Key("real", 1.0, check=POS),
            "nu": Key("real", required=True, check=POS),
            "D": Key("real", 0.0, check=NONNEG),
            "R": Key("real", required=True, check=POS),
            "dt": Key("real", required=True, check=POS),
            "box": Key("reals", required=True, check=POS),
            "noise_model": Key("enum", "brownian", choices=("brownian", "uniform_cone")),
            "d_angle": Key("real", 0.0, check=NONNEG),
            "parallel": Key("bool", False),
            "t_end": Key("real", required=True, check=POS),
            "snapshot_every": Key("real", check=POS),
            "init": Key("enum", "isotropic", choices=("isotropic", "aligned")),
            "write_trajectory": Key("bool", True),
        },
    },
    "soh": {
        "soh": {
            "d": Key("real", required=True, check=POS),
            **_COEFF_KEYS,
            "cells": Key("ints", required=True, check=AT_LEAST_4),
            "box": Key("reals", required=True, check=POS),
            "cfl": Key("real", 0.5, check=UNIT_CFL),
            "viscous": Key("bool", False),
            "nonhyperbolic_fix": Key("bool", True),
            "dt_cap": Key("real", check=POS),
            "t_end": Key("real", required=True, check=POS),
            "snapshot_every": Key("real", check=POS),
            "scheme": Key("enum", "relaxation", choices=("relaxation", "nonconservative")),
        },
        "scenario": {
            "kind": Key("enum", "uniform", choices=("uniform", "riemann", "noisy", "band")),
            "rho0": Key("real", 1.0, check=POS),
            "angle0": Key("real", 0.0),
            **{k: Key("real", v, check=POS if k.startswith("rho") else None)
               for k, v in RIEMANN_DEFAULTS.items()},
            "interface": Key("real", check=POS),
            "rho_noise": Key("real", 0.2, check=(lambda x: 0 <= x < 1, "in [0, 1)")),
            "angle_noise": Key("real", 0.3, check=NONNEG),
            "smooth": Key("int", 0, check=NONNEG),
            "rho_in": Key("real", 2.0, check=POS),
            "rho_out": Key("real", 0.5, check=POS),
            "center": Key("real"),
            "width": Key("real", 1.0, check=POS),
        },
    },
    "riemann-compare": {
        "riemann": {
            **{k: Key("real", v, check=POS if k.startswith("rho") else None)
               for k, v in RIEMANN_DEFAULTS.items()},
            "interface": Key("real", check=POS),
            "d": Key("real", 0.25, check=POS),
            "box": Key("reals", (20.0, 1.0), check=POS),
            "cells": Key("int", 200, check=AT_LEAST_4),
            "t_end": Key("real", 30.0, check=POS),
            "snapshot_every": Key("real", check=POS),
            "min_count": Key("int", 20, check=NONNEG),
        },
        "particles": {
            "n": Key("int", 100_000, check=(lambda x: x >= 1, "at least 1")),
            "c": Key("real", 1.0, check=POS),
            "nu": Key("real", 4.0, check=POS),
            "R": Key("real", 0.1, check=POS),
            "dt": Key("real", 0.025, check=POS),
            "parallel": Key("bool", False),
        },
        "soh": {
            "cfl": Key("real", 0.5, check=UNIT_CFL),
            "viscous": Key("bool", True),
            "eta0": Key("real", check=NONNEG),
            "n_theta": Key("int", 2048, check=N_THETA),
        },
    },
    "mill-check": {
        "mill": {
            "d": Key("real", required=True, check=POS),
            "c2": Key("real", check=POS),
            "rho0": Key("real", 1.0, check=POS),
            "r0": Key("real", 1.0, check=POS),
            "r_min": Key("real", 1.0, check=POS),
            "r_max": Key("real", 3.0, check=POS),
            "grids": Key("ints", (121, 241, 481, 961), check=(lambda x: x >= 8, "at least 8")),
            "n_theta": Key("int", 2048, check=N_THETA),
        },
    },
}


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfigIssue:
    line: object            # int, "--set" or None for whole-file problems
    key: str
    message: str

    def __str__(self):
        if self.line is None:
            where = "end of file"
        elif self.line == "--set":
            where = "--set"
        else:
            where = f"line {self.line}"
        return f"{where}: {self.key}: {self.message}"


class ConfigError(ConfigurationError):
    """All problems found in a config document."""

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


@dataclass(frozen=True)
class RunConfig:
    """Validated run description.

    ``params`` maps ``"section.key"`` to typed values (tuples for lists);
    every key of the command's schema is present, unset optional keys
    hold None.
    """

    command: str
    params: dict = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0
    deterministic: bool = False

    def section(self, name):
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}


def _split_lines(text, origin=None):
    """Yield ``(line_label, section, key, value)`` or issues for malformed lines."""
    section = None
    for number, raw in enumerate(text.splitlines(), start=1):
        label = origin or number
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or not line[1:-1].strip():
                yield ConfigIssue(label, line, "malformed section header")
                continue
            section = line[1:-1].strip()
            yield ("section", label, section)
            continue
        if "=" not in line:
            yield ConfigIssue(label, line, "expected 'key = value'")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            yield ConfigIssue(label, line, "missing key name")
            continue
        yield (label, section, key, value)


def parse_config(text, command=None, overrides=()):
    """Parse a config document into a :class:`RunConfig`.

    ``command`` (e.g. from the command line) must agree with a ``command``
    key in the document if both are given. ``overrides`` are ``key=value``
    strings with dotted ``section.key`` names applied after the file.
    Raises :class:`ConfigError` listing every problem found.
    """
    issues = []
    entries = []
    for item in _split_lines(text):
        if isinstance(item, ConfigIssue):
            issues.append(item)
        elif item[0] != "section":
            entries.append(item)
    sections_seen = {item[2]: item[1] for item in _split_lines(text)
                     if not isinstance(item, ConfigIssue) and item[0] == "section"}
    for ov in overrides:
        if "=" not in ov:
            issues.append(ConfigIssue("--set", ov, "expected 'key=value'"))
            continue
        key, value = (s.strip() for s in ov.split("=", 1))
        sec, _, name = key.rpartition(".")
        entries.append(("--set", sec or None, name, value))

    # resolve the command first: it selects the schema
    declared = [(lab, val) for lab, sec, key, val in entries if sec is None and key == "command"]
    doc_command = declared[-1][1] if declared else None
    if command is not None and doc_command is not None and command != doc_command:
        issues.append(ConfigIssue(declared[-1][0], "command",
                                  f"file declares {doc_command!r} but {command!r} was requested"))
    command = command if command is not None else doc_command
    if command is None:
        issues.append(ConfigIssue(None, "command", "missing required key"))
        raise ConfigError(issues)
    if command not in COMMANDS:
        issues.append(ConfigIssue(declared[-1][0] if declared else None, "command",
                                  f"expected one of {', '.join(COMMANDS)}, got {command!r}"))
        raise ConfigError(issues)

    schema = SCHEMAS[command]
    for sec, label in sections_seen.items():
        if sec not in schema:
            issues.append(ConfigIssue(label, f"[{sec}]", f"unknown section for {command}"))

    values, where = {}, {}
    for label, sec, key, raw in entries:
        if sec is None and key in GLOBAL_KEYS:
            full, spec = key, GLOBAL_KEYS[key]
        else:
            sec = HOME_SECTION[command] if sec is None else sec
            if sec not in schema:
                if label == "--set":
                    issues.append(ConfigIssue(label, f"{sec}.{key}", "unknown section"))
                continue
            full, spec = f"{sec}.{key}", schema[sec].get(key)
            if spec is None:
                issues.append(ConfigIssue(label, full, "unknown key"))
                continue
        if full in where and label != "--set" and where[full] != "--set":
            issues.append(ConfigIssue(label, full, f"duplicate key (first set on line {where[full]},"
                                                   f" again on line {label})"))
            continue
        try:
            values[full] = spec.parse(raw)
            where[full] = label
        except _Invalid as exc:
            issues.append(ConfigIssue(label, full, str(exc)))
            where[full] = label

    params = {}
    for sec, keys in schema.items():
        for key, spec in keys.items():
            full = f"{sec}.{key}"
            if full in values:
                params[full] = values[full]
            elif full in where:
                continue      # present but invalid, already reported
            elif spec.required:
                issues.append(ConfigIssue(None, full, "missing required key"))
            else:
                params[full] = spec.default
    if command == "coeffs" and not any(f"coeffs.{k}" in values or f"coeffs.{k}" in where
                                       for k in ("d", "d_grid")):
        issues.append(ConfigIssue(None, "coeffs.d", "missing required key (give d or d_grid)"))
    if issues:
        raise ConfigError(issues)
    glob = {k: values.get(k, GLOBAL_KEYS[k].default) for k in GLOBAL_KEYS if k != "command"}
    return RunConfig(command=command, params=params, **glob)


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def serialize_config(cfg):
    """Canonical text form of ``cfg``; unset optional keys are omitted."""
    lines = [f"command = {cfg.command}", f"seed = {cfg.seed}",
             f"output_dir = {cfg.output_dir}",
             f"deterministic = {_format_value(cfg.deterministic)}"]
    for sec in SCHEMAS[cfg.command]:
        items = [(k, v) for k, v in cfg.section(sec).items() if v is not None]
        if items:
            lines.append("")
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {_format_value(v)}" for k, v in items)
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

class _Outputs:
    """Collects CSV texts; everything is written only after the run succeeds."""

    def __init__(self):
        self.files = {}

    def add(self, name, header, rows):
        self.files[name] = sio.csv_text(header, rows)


def _kernel(sec, m):
    return Kernel(sec.get("kernel", "indicator"), sec.get("kernel_radius", 1.0), m)


def _cmd_coeffs(cfg, out):
    sec = cfg.section("coeffs")
    grid = sec["d_grid"] if sec["d_grid"] is not None else ()
    ds = tuple(grid) + ((sec["d"],) if sec["d"] is not None else ())
    rows = []
    for d in ds:
        cs = compute_coefficients(d, sec["m"], eta0=sec["eta0"], kernel=_kernel(sec, sec["m"]),
                                  n_theta=sec["n_theta"])
        rows.append(cs.as_row())
        print(f"d={d:g} m={cs.m} c1={cs.c1:.6f} c2={cs.c2:.6f} c3={cs.c3:.6g}")
    out.add("coefficients.csv", CoefficientSet.CSV_HEADER, rows)


def _cmd_particles(cfg, out):
    sec = cfg.section("particles")
    p = ParticleParams(n=sec["n"], m=sec["m"], c=sec["c"], nu=sec["nu"], D=sec["D"], R=sec["R"],
                       dt=sec["dt"], box=sec["box"], noise_model=sec["noise_model"],
                       d_angle=sec["d_angle"], seed=cfg.seed,
                       parallel=sec["parallel"] and not cfg.deterministic)
    aligned = np.eye(p.m)[0] if sec["init"] == "aligned" else None
    ens = make_ensemble(p, aligned=aligned)
    order = [(ens.t, ens.step, global_order_parameter(ens))]

    def record(e):
        order.append((e.t, e.step, global_order_parameter(e)))

    snaps = run_particles(ens, p, sec["t_end"], sec["snapshot_every"] or sec["t_end"],
                          callback=record)
    if sec["write_trajectory"]:
        out.add("trajectory.csv", sio.trajectory_header(p.m),
                (row for s in snaps for row in sio.trajectory_rows(s)))
    out.add("order_parameter.csv", ("t", "step", "order_parameter"), order)
    print(f"particles: {p.n} steps={snaps[-1].step} final order parameter {order[-1][2]:.4f}")


def _soh_coefficients(d, sec, eta0=None):
    eta0 = sec.get("eta0", 0.0) if eta0 is None else eta0
    return compute_coefficients(d, 2, eta0=eta0, kernel=_kernel(sec, 2),
                                n_theta=sec.get("n_theta", 2048))


def _field_snapshots(out, name, snaps):
    grid = snaps[0].grid
    out.add(name, sio.field_header(grid, snaps[0].m),
            (row for s in snaps for row in sio.field_rows(s)))


def _cmd_soh(cfg, out):
    sec, scen = cfg.section("soh"), cfg.section("scenario")
    grid = SohGrid(sec["cells"], sec["box"])
    gen = np.random.default_rng(cfg.seed)
    u0 = (math.cos(scen["angle0"]), math.sin(scen["angle0"]))
    kind = scen["kind"]
    if kind == "uniform":
        init = uniform_fields(grid, scen["rho0"], u0)
    elif kind == "riemann":
        iface = scen["interface"] if scen["interface"] is not None else grid.box[0] / 2
        init = riemann_init(RiemannSpec.from_angles(scen["rho_l"], scen["angle_l"], scen["rho_r"],
                                                    scen["angle_r"], iface), grid)
    elif kind == "noisy":
        init = noisy_fields(grid, scen["rho0"], u0, gen, scen["rho_noise"], scen["angle_noise"],
                            scen["smooth"])
    else:
        center = scen["center"] if scen["center"] is not None else grid.box[0] / 2
        init = noisy_band_fields(grid, scen["rho_in"], scen["rho_out"], center, scen["width"], u0,
                                 gen, scen["rho_noise"], scen["angle_noise"])
    coeffs = _soh_coefficients(sec["d"], sec)
    solver = SohSolverConfig(coeffs, cfl=sec["cfl"], viscous=sec["viscous"],
                             dt_cap=sec["dt_cap"], nonhyperbolic_fix=sec["nonhyperbolic_fix"])
    diag = {}
    snaps = soh_run(init, solver, sec["t_end"], sec["snapshot_every"], scheme=sec["scheme"],
                    diagnostics=diag)
    _field_snapshots(out, "fields.csv", snaps)
    out.add("coefficients.csv", CoefficientSet.CSV_HEADER, [coeffs.as_row()])
    print(f"soh: {diag.get('steps', 0)} steps, mass {snaps[0].mass():.12g} -> {snaps[-1].mass():.12g}")


def _cmd_riemann(cfg, out):
    rs, ps, ss = cfg.section("riemann"), cfg.section("particles"), cfg.section("soh")
    box = tuple(rs["box"])
    if len(box) != 2:
        raise DomainError("riemann.box needs two edge lengths (x, transverse)")
    grid = SohGrid((rs["cells"],), (box[0],))
    iface = rs["interface"] if rs["interface"] is not None else box[0] / 2
    spec = RiemannSpec.from_angles(rs["rho_l"], rs["angle_l"], rs["rho_r"], rs["angle_r"], iface)
    d, nu, R = rs["d"], ps["nu"], ps["R"]
    eta0 = ss["eta0"] if ss["eta0"] is not None else R * R * nu
    coeffs = _soh_coefficients(d, ss, eta0=eta0)
    solver = SohSolverConfig(coeffs, cfl=ss["cfl"], viscous=ss["viscous"])
    every = rs["snapshot_every"] or rs["t_end"]

    init = riemann_init(spec, grid)
    relax = soh_run(init, solver, rs["t_end"], every)
    naive = soh_run(init, solver, rs["t_end"], every, scheme="nonconservative")

    gen = np.random.default_rng(cfg.seed)
    ens, mass_each = sample_riemann_particles(spec, grid, d, ps["n"], box, gen, seed=cfg.seed)
    p = ParticleParams(n=ps["n"], m=2, c=ps["c"], nu=nu, D=d * nu, R=R, dt=ps["dt"], box=box,
                       seed=cfg.seed, parallel=ps["parallel"] and not cfg.deterministic)
    psnaps = run_particles(ens, p, rs["t_end"], every)
    total = mass_each * ps["n"]
    pfields = [empirical_fields(s, grid, mass=total, min_count=rs["min_count"]) for s in psnaps]

    pairs = {"comparison.csv": (relax, pfields), "comparison_naive.csv": (relax, naive),
             "comparison_naive_particles.csv": (naive, pfields)}
    for name, (ref, other) in pairs.items():
        mask = other is pfields
        reports = [compare_fields(a, _at(other, a.t), mask_empty=mask) for a in ref]
        out.add(name, ComparisonReport.CSV_HEADER, [r.as_row() for r in reports])
    _field_snapshots(out, "particles.csv", pfields)
    _field_snapshots(out, "soh.csv", relax)
    _field_snapshots(out, "soh_naive.csv", naive)
    out.add("coefficients.csv", CoefficientSet.CSV_HEADER, [coeffs.as_row()])
    last = compare_fields(relax[-1], pfields[-1])
    gap = compare_fields(relax[-1], naive[-1], mask_empty=False)
    print(f"riemann t={last.t:g}: relax-vs-particles l1_rho={last.l1_rho:.4f} "
          f"l1_u={last.l1_u:.4f}; relax-vs-naive l1_rho={gap.l1_rho:.4f}")


def _at(snaps, t):
    for s in snaps:
        if math.isclose(s.t, t, rel_tol=1e-9, abs_tol=1e-9):
            return s
    raise SohLabError(f"no snapshot at t={t}")


def _cmd_mill(cfg, out):
    sec = cfg.section("mill")
    if not sec["r_min"] < sec["r_max"]:
        raise DomainError("mill.r_min must be below mill.r_max")
    coeffs = compute_coefficients(sec["d"], 2, n_theta=sec["n_theta"])
    c2 = sec["c2"] if sec["c2"] is not None else coeffs.c2
    coeffs = CoefficientSet(d=coeffs.d, m=2, c1=coeffs.c1, c2=c2, c3=0.0)
    p = MillingParams(sec["rho0"], sec["r0"], c2, sec["d"])
    rows, prev = [], None
    for n in sec["grids"]:
        mass, mom, h = mill_residual(p, coeffs, n, (sec["r_min"], sec["r_max"]))
        order = math.log(prev[1] / mom) / math.log(prev[0] / h) if prev else float("nan")
        rows.append((n, h, mass, mom, order))
        prev = (h, mom)
    out.add("mill_residual.csv", ("n", "h", "mass_residual", "momentum_residual", "order"), rows)
    r = np.linspace(sec["r_min"], sec["r_max"], 101)
    rho, _ = milling_solution(p, np.stack([r, np.zeros_like(r)], axis=1))
    out.add("mill_profile.csv", ("r", "rho"), zip(r, rho))
    print(f"mill: c2/d={p.exponent:.4f} ({milling_profile_shape(p)}), orders "
          + ", ".join(f"{row[4]:.3f}" for row in rows[1:]))


DISPATCH = {"coeffs": _cmd_coeffs, "particles": _cmd_particles, "soh": _cmd_soh,
            "riemann-compare": _cmd_riemann, "mill-check": _cmd_mill}


def _versions():
    import numba
    import scipy
    return {"sohlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def run(cfg):
    """Execute ``cfg``; returns the list of written paths.

    Outputs are rendered in memory and written with temp-then-rename only
    after the command finishes, so a failed run leaves no partial files.
    """
    out = _Outputs()
    DISPATCH[cfg.command](cfg, out)
    text = serialize_config(cfg)
    rows = [("meta", "command", cfg.command), ("meta", "config_sha256", sio.sha256_text(text)),
            ("meta", "seed", cfg.seed), ("meta", "deterministic", cfg.deterministic)]
    rows += [("version", k, v) for k, v in _versions().items()]
    rows += [("file", name, sio.sha256_text(body)) for name, body in sorted(out.files.items())]
    rows.append(("file", "config.cfg", sio.sha256_text(text)))
    dest = Path(cfg.output_dir)
    written = [sio.atomic_write_text(dest / name, body) for name, body in out.files.items()]
    written.append(sio.atomic_write_text(dest / "config.cfg", text))
    written.append(sio.atomic_write_text(dest / "manifest.csv",
                                         sio.csv_text(("kind", "name", "value"), rows)))
    return written


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def _fail(code, kind, messages):
    print(json.dumps({"status": "error", "exit_code": code, "kind": kind, "errors": messages}),
          file=sys.stderr)
    return code


def build_parser():
    ap = argparse.ArgumentParser(prog="sohlab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="key = value config file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a key (section.key=value); repeatable")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, help="random seed (overrides seed)")
    ap.add_argument("--deterministic", action="store_true",
                    help="force serial kernels for bit-reproducible output")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if args.out is not None:
        overrides.append(f"output_dir={args.out}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.deterministic:
        overrides.append("deterministic=true")
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        cfg = parse_config(text, command=args.command, overrides=overrides)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", [str(i) for i in exc.issues])
    except (OSError, UnicodeDecodeError) as exc:
        return _fail(EXIT_CONFIG, "config", [f"cannot read config: {exc}"])
    try:
        run(cfg)
    except (ConfigurationError, DomainError) as exc:
        return _fail(EXIT_CONFIG, "config", [str(exc)])
    except (SohLabError, ArithmeticError, ValueError, MemoryError) as exc:
        return _fail(EXIT_RUNTIME, "runtime", [f"{type(exc).__name__}: {exc}"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
