"""Command-line front end: ``treeheat COMMAND --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from typing import Optional, Sequence

from . import __version__
from .bounds import BOUND_KINDS, Sweep, default_sweep, log_times, verify_bound
from .config import RunConfig, load_config
from .csvio import format_value, write_csv
from .errors import ConfigError, TreeHeatError
from .kernel import diagonal_kernel, full_kernel, oracle_for
from .radial import MASS_KINDS, SolverConfig
from .schrodinger import (
    RHS_KINDS,
    PotentialSpec,
    bound_rhs,
    homogeneous_shift,
    negative_moments,
    per_edge,
    radial_power,
    radial_table,
    riesz_crosscheck,
    zero_potential,
)
from .tree import (
    PointAddress,
    TreeSpec,
    dyadic_tree,
    explicit_tree,
    geometry_scan,
    half_line,
    homogeneous_tree,
    representative_point,
)

__all__ = ["COMMANDS", "build_tree", "build_solver", "build_sweep", "build_potential", "run", "main"]

COMMANDS = ("geometry", "heat", "bounds", "schrodinger", "oracle-compare")
GENERATORS = ("half_line", "explicit", "dyadic", "homogeneous")
EXIT_OK, EXIT_VIOLATION, EXIT_ERROR = 0, 1, 2


def build_tree(cfg: RunConfig) -> TreeSpec:
    """Tree from the ``[tree]`` section."""
    gen = cfg.get_str("tree", "generator", choices=GENERATORS)
    if gen == "half_line":
        return half_line()
    if gen == "explicit":
        radii = cfg.get_floats("tree", "radii")
        branch = cfg.get_ints("tree", "branchings")
        try:
            return explicit_tree(radii, branch)
        except TreeHeatError as exc:
            e = cfg.entry("tree", "radii")
            raise ConfigError(str(exc), e.line, e.column) from None
    radius = cfg.get_float("tree", "radius", lo=0, strict_lo=True)
    if gen == "dyadic":
        return dyadic_tree(cfg.get_float("tree", "d", lo=1), radius)
    b = cfg.get_int("tree", "b", lo=2)
    return homogeneous_tree(b, radius, cfg.get_float("tree", "edge", 1.0, lo=0, strict_lo=True))


def build_solver(cfg: RunConfig, refine: int = 1) -> SolverConfig:
    """Solver settings from ``[solver]``; ``refine`` multiplies ``points_per_unit``."""
    ppu = cfg.get_int("solver", "points_per_unit", 32, lo=8)
    return SolverConfig(
        domain_cut=cfg.get_float("solver", "domain_cut", 20.0, lo=0, strict_lo=True),
        points_per_unit=ppu * refine,
        n_modes=cfg.get_int("solver", "n_modes", 0, lo=0),
        t_max=cfg.get_float("solver", "t_max", 4.0, lo=0, strict_lo=True),
        mass=cfg.get_str("solver", "mass", "consistent", choices=MASS_KINDS),
    )


def build_sweep(cfg: RunConfig, spec: TreeSpec, solver: SolverConfig) -> Sweep:
    """Sample points and times from ``[sweep]`` (defaults when absent)."""
    if not cfg.has("sweep"):
        return default_sweep(spec, solver)
    if cfg.has("sweep", "times"):
        times = cfg.get_floats("sweep", "times")
    else:
        times = list(log_times(
            cfg.get_float("sweep", "t_min", 1e-2, lo=0, strict_lo=True),
            cfg.get_float("sweep", "t_max", solver.t_max, lo=0, strict_lo=True),
            cfg.get_int("sweep", "n_t", 12, lo=1),
        ))
    if cfg.has("sweep", "radii"):
        e = cfg.entry("sweep", "radii")
        radii = cfg.get_floats("sweep", "radii")
        if min(radii) < 0:
            raise ConfigError("radii must be nonnegative", e.line, e.column)
        points = tuple(representative_point(spec, r) for r in radii)
    else:
        points = default_sweep(spec, solver).points
    e = cfg.entry("sweep", "times") if cfg.has("sweep", "times") else None
    if min(times) <= 0 and e is not None:
        raise ConfigError("times must be positive", e.line, e.column)
    return Sweep(points, tuple(times))


def _parse_path(label: str) -> tuple:
    if label in ("o", ""):
        return ()
    return tuple(int(p) for p in label.split("-"))


def _read_edge_csv(path: str, base: str) -> PotentialSpec:
    full = path if os.path.isabs(path) else os.path.join(base, path)
    table: dict[tuple, tuple[list, list]] = {}
    with open(full, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or [c.strip() for c in rows[0]] != ["edge_id", "offset", "value"]:
        raise ConfigError(f"{path}: expected header edge_id,offset,value", 1, 1)
    for n, row in enumerate(rows[1:], start=2):
        try:
            key = _parse_path(row[0].strip())
            off, val = float(row[1]), float(row[2])
        except (ValueError, IndexError):
            raise ConfigError(f"{path}: malformed row", n, 1) from None
        table.setdefault(key, ([], []))
        table[key][0].append(off)
        table[key][1].append(val)
    return per_edge({k: (o, v) for k, (o, v) in table.items()})


def build_potential(cfg: RunConfig, base_dir: str = ".") -> PotentialSpec:
    """Potential from ``[potential]``."""
    kind = cfg.get_str("potential", "kind", choices=("radial_power", "radial_table", "per_edge", "zero"))
    if kind == "zero":
        return zero_potential()
    if kind == "radial_power":
        return radial_power(cfg.get_float("potential", "v0", lo=0), cfg.get_float("potential", "p", lo=0))
    if kind == "radial_table":
        e = cfg.entry("potential", "breaks")
        try:
            return radial_table(cfg.get_floats("potential", "breaks"), cfg.get_floats("potential", "values"))
        except TreeHeatError as exc:
            raise ConfigError(str(exc), e.line, e.column) from None
    return _read_edge_csv(cfg.get_str("potential", "file"), base_dir)


def _point_ok(spec: TreeSpec, solver: SolverConfig, x: PointAddress, t: float) -> bool:
    return x.radial + 6 * math.sqrt(t) <= solver.domain_cut and t <= solver.t_max


# ---------------------------------------------------------------------------
# commands


def _geometry(cfg, spec, solver, out, digest):
    d = cfg.get_float("geometry", "d", 1.0, lo=1)
    delta = cfg.get_float("geometry", "delta", 3.0, lo=2, strict_lo=True)
    default_r = spec.horizon_radius if math.isfinite(spec.horizon_radius) else solver.domain_cut
    r_max = cfg.get_float("geometry", "r_max", default_r, lo=0, strict_lo=True)
    rep = geometry_scan(spec, d, delta, r_max, cfg.get_int("geometry", "n_scan", 400, lo=100))
    rows = rep.csv_rows() + [("flag", f, 1.0, rep.grid_step) for f in rep.flags]
    write_csv(os.path.join(out, "geometry.csv"), ("quantity", "name", "value", "grid_step"), rows, digest)
    for f in rep.flags:
        print(f"flag: {f}")
    return EXIT_OK


def _heat(cfg, spec, solver, out, digest):
    sweep = build_sweep(cfg, spec, solver)
    rows = []
    for x in sweep.points:
        for t in sweep.times:
            if not _point_ok(spec, solver, x, t):
                raise ConfigError(f"sample {x.label()} at t={t:g} is beyond the cut's reach (|x| + 6 sqrt(t) > R)")
            k = diagonal_kernel(spec, solver, x, t).value
            s = math.sqrt(t)
            far = x.radial + s
            env = float(spec.g0(x.radial) / (s * spec.g0(far))) if far <= spec.horizon_radius else math.nan
            rows.append((x.label(), float(t), k, env, (math.pi * t) ** -0.5))
    write_csv(os.path.join(out, "heat.csv"), ("x_id", "t", "k", "envelope", "universal_bound"), rows, digest)
    return EXIT_OK


def _bounds(cfg, spec, solver, out, digest):
    kinds = cfg.get_words("bounds", "kinds", ("universal", "two_sided", "dim_bound"), choices=BOUND_KINDS)
    d = cfg.get_float("bounds", "d", 2.0, lo=1)
    delta = cfg.get_float("bounds", "delta", 3.0, lo=2, strict_lo=True)
    sweep = build_sweep(cfg, spec, solver)
    rows, violated = [], False
    print(f"{'bound':<14} {'verdict':<9} {'worst_margin':>14} {'constant':>14}")
    for kind in kinds:
        rep = verify_bound(kind, spec, solver, sweep, d=d, delta=delta)
        violated |= rep.violated
        const = "" if rep.empirical_constant is None else f"{rep.empirical_constant:14.6g}"
        print(f"{kind:<14} {rep.verdict:<9} {rep.worst_margin:14.6g} {const:>14}")
        rows += [(*r, rep.verdict) for r in rep.csv_rows()]
    write_csv(os.path.join(out, "bounds.csv"), ("kind", "quantity", "value", "verdict"), rows, digest)
    return EXIT_VIOLATION if violated else EXIT_OK


def _schrodinger(cfg, spec, solver, out, digest, base_dir):
    V = build_potential(cfg, base_dir)
    sec = "schrodinger"
    kinds = cfg.get_words(sec, "kinds", ("half_sharp",), choices=RHS_KINDS)
    gammas = cfg.get_floats(sec, "gamma", (0.5, 1.0))
    betas = cfg.get_floats(sec, "beta", (1.0,))
    a_values = cfg.get_floats(sec, "a", (0.0,))
    d = cfg.get_float(sec, "d", 2.0, lo=1)
    route = cfg.get_str(sec, "route", "radial" if V.is_radial else "oracle", choices=("radial", "oracle"))
    needs_c = any(k not in ("half_sharp",) for k in kinds)
    if cfg.has(sec, "C"):
        C = cfg.get_float(sec, "C", lo=0, strict_lo=True)
    elif needs_c and spec.tail == "exponential" and "homogeneous" in kinds:
        C = verify_bound("homogeneous", spec, solver).empirical_constant
    elif needs_c:
        C = verify_bound("dim_bound", spec, solver, d=d).empirical_constant
    else:
        C = math.nan
    shift = homogeneous_shift(spec) if "homogeneous" in kinds else 0.0

    rows, violated = [], False
    for gamma in gammas:
        mom = negative_moments(spec, V, gamma, solver, route=route)
        flags = f"near_zero={len(mom.flagged)}" if mom.flagged else ""
        riesz = riesz_crosscheck(mom.eigenvalues, gamma) if gamma > 0 else 0.0
        rows.append(("moment", gamma, math.nan, math.nan, mom.value, math.nan, math.nan, flags))
        rows.append(("riesz_discrepancy", gamma, math.nan, math.nan, riesz, math.nan, math.nan, ""))
        shifted = None
        for kind in kinds:
            for beta in (betas if kind in ("lieb", "two_term", "half_small", "homogeneous") else (math.nan,)):
                for a in (a_values if kind == "lt_ext" else (math.nan,)):
                    params = {"gamma": gamma, "beta": beta, "d": d, "a": a, "C": C}
                    try:
                        rhs = bound_rhs(kind, spec, V, params, solver)
                    except TreeHeatError as exc:
                        rows.append((kind, gamma, beta, a, mom.value, math.nan, math.nan, f"skipped: {exc}"))
                        continue
                    lhs = mom.value
                    if kind == "homogeneous":
                        if shifted is None:
                            shifted = negative_moments(spec, V, gamma, solver, route=route, shift=shift).value
                        lhs = shifted
                    margin = 1.0 if math.isinf(rhs.value) else (
                        (rhs.value - lhs) / rhs.value if rhs.value > 0 else (0.0 if lhs == 0 else -math.inf))
                    bad = lhs > rhs.value * (1 + 1e-9) + 1e-12
                    violated |= bad
                    fl = ";".join(f for f in (flags, "divergent" if rhs.divergent else "",
                                                "VIOLATED" if bad else "") if f)
                    rows.append((kind, gamma, beta, a, lhs, rhs.value, margin, fl))
    header = ("kind", "gamma", "beta", "a", "lhs", "rhs", "margin", "flags")
    write_csv(os.path.join(out, "schrodinger.csv"), header, rows, digest,
              comments=(f"potential {V.label()}", f"C_envelope {format_value(float(C))}"))
    print(f"{sum(1 for r in rows if r[0] in RHS_KINDS)} bound evaluations, "
          f"{'violations found' if violated else 'all hold'}")
    return EXIT_VIOLATION if violated else EXIT_OK


def _oracle_compare(cfg, spec, solver, out, digest):
    G = cfg.get_int("oracle", "max_generation", lo=0)
    sweep = build_sweep(cfg, spec, solver)
    oracle = oracle_for(spec, G, solver)
    pts = [p for p in sweep.points if len(p.path) <= G]
    floor = cfg.get_float("oracle", "floor", 1e-6, lo=0)
    rows, worst = [], 0.0
    for x in pts:
        for y in pts:
            for t in sweep.times:
                if not (_point_ok(spec, solver, x, t) and _point_ok(spec, solver, y, t)):
                    continue
                dec = full_kernel(spec, solver, x, y, t).value
                ora = oracle.kernel(x, y, t)
                scale = max(abs(ora), floor)
                err = abs(dec - ora) / scale
                if abs(ora) >= floor:
                    worst = max(worst, err)
                rows.append((x.label(), y.label(), float(t), dec, ora, err))
    summary = f"max_relative_error {format_value(worst)}"
    write_csv(os.path.join(out, "oracle_compare.csv"),
              ("x_id", "y_id", "t", "decomposition", "oracle", "relative_error"), rows, digest,
              comments=(summary, f"oracle_nodes {oracle.n_nodes}"))
    print(summary)
    return EXIT_OK


def run(command: str, config_path: str, out_dir: str, refine: int = 1) -> int:
    """Execute one command; returns the process exit status."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    cfg = load_config(config_path)
    spec = build_tree(cfg)
    solver = build_solver(cfg, refine)
    os.makedirs(out_dir, exist_ok=True)
    digest = f"{cfg.digest}-r{refine}"
    if command == "geometry":
        return _geometry(cfg, spec, solver, out_dir, digest)
    if command == "heat":
        return _heat(cfg, spec, solver, out_dir, digest)
    if command == "bounds":
        return _bounds(cfg, spec, solver, out_dir, digest)
    if command == "schrodinger":
        return _schrodinger(cfg, spec, solver, out_dir, digest, os.path.dirname(os.path.abspath(config_path)))
    return _oracle_compare(cfg, spec, solver, out_dir, digest)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _Parser(prog="treeheat", description="Heat kernels and eigenvalue bounds on radial trees.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, metavar="PATH", help="run configuration file")
    parser.add_argument("--out", default=".", metavar="DIR", help="output directory")
    parser.add_argument("--refine", type=int, default=1, metavar="N", help="multiply points_per_unit by N")
    parser.add_argument("--seed", help=argparse.SUPPRESS)
    parser.add_argument("--version", action="version", version=f"treeheat {__version__}")
    args = parser.parse_args(argv)
    if args.seed is not None:
        parser.error("--seed is not supported: no computation uses randomness")
    if args.refine < 1:
        parser.error("--refine must be a positive integer")
    try:
        return run(args.command, args.config, args.out, args.refine)
    except (TreeHeatError, OSError) as exc:
        print(f"treeheat: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
