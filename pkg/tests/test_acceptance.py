"""Acceptance criteria, one test per criterion, each at its stated tolerance."""

import filecmp
import math
import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from treeheat.bounds import (
    Sweep,
    default_sweep,
    functional_inequality_check,
    log_times,
    poincare_ratio,
    local_family,
    verify_bound,
)
from treeheat.cli import main
from treeheat.kernel import diagonal_kernel, full_kernel, oracle_for
from treeheat.radial import (
    SolverConfig,
    discretize_radial,
    ground_state_homogeneous,
    heat_kernel_1d,
    lambda_closed_form,
)
from treeheat.schrodinger import (
    bound_rhs,
    negative_moments,
    radial_power,
    riesz_crosscheck,
)
from treeheat.tree import (
    PointAddress,
    dyadic_tree,
    explicit_tree,
    half_line,
    homogeneous_tree,
    representative_point,
)


def record(n, ok, detail):
    ACCEPTANCE_LINES[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[n])


def test_criterion_01_half_line_exactness():
    start = time.perf_counter()
    spec = half_line()
    cfg = SolverConfig(domain_cut=20, points_per_unit=32, t_max=4)
    sys0 = discretize_radial(spec, 0, cfg)
    worst = 0.0
    for x in (0.0, 1.0, 2.0):
        for t in np.geomspace(0.05, 4, 25):
            exact = (4 * math.pi * t) ** -0.5 * (1 + math.exp(-x * x / t))
            worst = max(worst, abs(heat_kernel_1d(sys0, x, x, t) - exact) / exact)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-3 and elapsed <= 10
    record(1, ok, f"max rel err {worst:.2e} (tol 1e-3), {elapsed:.2f}s (limit 10s)")
    assert ok


def _test_trees():
    return [
        (half_line(), SolverConfig(domain_cut=20, points_per_unit=32, t_max=4)),
        (explicit_tree([0, 1], [1, 2]), SolverConfig(domain_cut=16, points_per_unit=32, t_max=4)),
        (explicit_tree([0, 1, 2.5], [1, 2, 3]), SolverConfig(domain_cut=16, points_per_unit=32, t_max=4)),
        (dyadic_tree(2, 80), SolverConfig(domain_cut=24, points_per_unit=16, t_max=4)),
        (dyadic_tree(3, 40), SolverConfig(domain_cut=24, points_per_unit=16, t_max=4)),
        (homogeneous_tree(2, 40), SolverConfig(domain_cut=24, points_per_unit=16, t_max=4, mass="lumped")),
    ]


def test_criterion_02_universal_bound():
    spec = half_line()
    cfg = SolverConfig(domain_cut=20, points_per_unit=32, t_max=4)
    origin = PointAddress((), 0.0)
    times = log_times(0.05, 4, 12)
    sat = max(abs(diagonal_kernel(spec, cfg, origin, t).value * math.sqrt(math.pi * t) - 1) for t in times)
    worst = 0.0
    for tree, tcfg in _test_trees():
        sweep = default_sweep(tree, tcfg, t_min=0.05)
        rep = verify_bound("universal", tree, tcfg, sweep)
        worst = max(worst, rep.empirical_constant)
    ok = sat <= 1e-3 and worst <= 1 + 1e-3
    record(2, ok, f"|k(0,0,t) sqrt(pi t) - 1| <= {sat:.2e}; max k sqrt(pi t) over trees {worst:.6f}")
    assert ok


def test_criterion_03_oracle_equivalence():
    start = time.perf_counter()
    cfg = SolverConfig(domain_cut=12, points_per_unit=16, t_max=1)
    worst = 0.0
    for radii, branch in (([0, 1], [1, 2]), ([0, 1, 2.5], [1, 2, 3])):
        spec = explicit_tree(radii, branch)
        oracle = oracle_for(spec, 3, cfg)
        pts = [
            PointAddress((), 0.5),
            PointAddress((1,), 1.5),
            PointAddress((2,), 1.5),
            PointAddress((1,) * spec.generation_of(2.75), 2.75),
            PointAddress((2,) * spec.generation_of(3.25), 3.25),
        ]
        for x in pts:
            for y in pts:
                for t in (0.25, 0.35, 0.5, 0.65, 0.8, 1.0):
                    dec = full_kernel(spec, cfg, x, y, t).value
                    ora = oracle.kernel(x, y, t)
                    worst = max(worst, abs(dec - ora) / ora)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-2 and elapsed <= 60
    record(3, ok, f"max rel err {worst:.2e} over 2 trees x 5x5x6 (tol 1e-2), {elapsed:.1f}s (limit 60s)")
    assert ok


def test_criterion_04_spectral_gap():
    closed = {b: lambda_closed_form(b)[0] for b in (2, 3, 4)}
    ref = abs(closed[2] - 0.11548912502732933) <= 1e-10 and abs(closed[4] - 0.41409367701818633) <= 1e-10
    cfg = SolverConfig(domain_cut=24, points_per_unit=32, n_modes=1)
    errs = {}
    for b in (2, 3, 4):
        lam1 = discretize_radial(homogeneous_tree(b, 24), 0, cfg).eigenvalues[0]
        errs[b] = (lam1 - closed[b]) / closed[b]
    ok = ref and all(abs(e) <= 1e-2 for e in errs.values())
    detail = ", ".join(f"b={b}: {e:+.2%}" for b, e in errs.items())
    record(4, ok, f"closed forms to 1e-10: {ref}; lambda_1 rel err at R=24 {detail} (tol 1%)")
    assert ok


def test_criterion_05_two_sided():
    spec = dyadic_tree(2, 80)
    cfg = SolverConfig(domain_cut=72, points_per_unit=32, t_max=100, mass="lumped")
    rep = verify_bound("two_sided", spec, cfg, default_sweep(spec, cfg), slope_window=(0.5, 10, 100))
    slope = rep.detail("decay_slope")
    change = rep.constant_change
    finite = all(0 < c < math.inf for c in (rep.empirical_constant, rep.lower_constant))
    ok = finite and change <= 0.10 and abs(slope + 1.0) <= 0.1 and not rep.violated
    record(5, ok, f"upper {rep.empirical_constant:.4g}, lower {rep.lower_constant:.4g}, "
                  f"change {change:.2e} (tol 0.10), slope {slope:.3f} (target -1 +- 0.1)")
    assert ok


def test_criterion_06_no_vd():
    spec = dyadic_tree(3, 40)
    cfg = SolverConfig(domain_cut=24, points_per_unit=16, t_max=4)
    rep = verify_bound("no_vd", spec, cfg, default_sweep(spec, cfg), delta=3)
    ok = not rep.violated and rep.worst_margin > 0
    record(6, ok, f"{rep.samples} samples, worst margin {rep.worst_margin:.4f}, S={rep.detail('sobolev_S'):.6f}")
    assert ok


def test_criterion_07_homogeneous():
    spec = homogeneous_tree(2, 46)
    cfg = SolverConfig(domain_cut=46, points_per_unit=32, t_max=50, mass="lumped")
    radii = (0.125, 0.5, 0.875, 1.125, 1.5, 1.875, 2.125, 2.5, 2.875)
    sweep = Sweep(tuple(representative_point(spec, r) for r in radii), log_times(1, 50, 12))
    rep = verify_bound("homogeneous", spec, cfg, sweep)
    hom = ground_state_homogeneous(2, cfg)
    lam = lambda_closed_form(2)[0]
    w_err = abs(float(hom.omega_at(1.0)) - math.cos(math.sqrt(lam)))
    ok = not rep.violated and rep.constant_change <= 0.15 and w_err <= 1e-6
    record(7, ok, f"C_b {rep.empirical_constant:.4g}, change {rep.constant_change:.2e} (tol 0.15), "
                  f"|omega_2(1) - cos sqrt(lambda_2)| {w_err:.1e}")
    assert ok


def test_criterion_08_functional_inequalities():
    margins = {}
    for tree, _ in _test_trees():
        kinds = ["poincare", "volume_doubling", "log_sobolev"]
        if tree.name.startswith(("dyadic-d3", "homogeneous")):
            kinds.append("nash")
        for kind in kinds:
            if kind == "volume_doubling" and tree.tail == "exponential":
                continue
            rep = functional_inequality_check(kind, tree)
            margins[(tree.name, kind)] = rep.worst_margin
    lhs, rhs = poincare_ratio(half_line(), next(f for f in local_family() if f.name == "linear"), 3.0, 1.5)
    exact = abs(lhs / rhs - 1 / 12) <= 1e-12
    worst_key = min(margins, key=margins.get)
    ok = exact and all(m > 0 for m in margins.values())
    record(8, ok, f"{len(margins)} checks, worst margin {margins[worst_key]:.3e} {worst_key}; "
                  f"Poincare ratio 1/12 exact: {exact}")
    assert ok


def test_criterion_09_schrodinger():
    start = time.perf_counter()
    potentials = [radial_power(v0, p) for v0 in (0.5, 2, 8) for p in (2, 3)]
    hl, d2 = half_line(), dyadic_tree(2, 80)
    hl_cfg = SolverConfig(domain_cut=40, points_per_unit=16)
    d2_cfg = SolverConfig(domain_cut=16, points_per_unit=16)
    C = verify_bound("dim_bound", d2, SolverConfig(domain_cut=24, points_per_unit=16), d=2).empirical_constant
    riesz = route = 0.0
    failures = []
    n_checks = 0
    for spec, cfg in ((hl, hl_cfg), (d2, d2_cfg)):
        for V in potentials:
            for gamma in (0.5, 1.0, 1.5, 2.0):
                res = negative_moments(spec, V, gamma, cfg)
                riesz = max(riesz, riesz_crosscheck(res.eigenvalues, gamma))
            lhs = {g: negative_moments(spec, V, g, cfg).value for g in (0.5, 1.0, 1.5)}
            sharp = bound_rhs("half_sharp", spec, V, {"gamma": 0.5}, cfg).value
            n_checks += 1
            if lhs[0.5] > sharp:
                failures.append(("half_sharp", spec.name, V.label()))
            if spec is d2:
                for gamma in (0.5, 1.0, 1.5):
                    for beta in (0.5, 1.0, 2.0):
                        r = bound_rhs("two_term", spec, V, {"gamma": gamma, "beta": beta, "d": 2, "C": C}, cfg)
                        n_checks += 1
                        if lhs[gamma] > r.value:
                            failures.append(("two_term", gamma, beta, V.label()))
                for a, gamma in ((0.0, 0.5), (0.5, 0.5)):
                    r = bound_rhs("lt_ext", spec, V, {"gamma": gamma, "a": a, "d": 2, "C": C}, cfg)
                    n_checks += 1
                    if lhs[gamma] > r.value:
                        failures.append(("lt_ext", a, gamma, V.label()))
            a_ = negative_moments(spec, V, 1.0, cfg).value
            b_ = negative_moments(spec, V, 1.0, cfg, route="oracle").value
            if a_ > 0:
                route = max(route, abs(a_ - b_) / a_)
    elapsed = time.perf_counter() - start
    ok = riesz <= 1e-6 and not failures and route <= 1e-2 and elapsed <= 300
    record(9, ok, f"riesz {riesz:.1e}, {n_checks} bound checks, {len(failures)} violated, "
                  f"route agreement {route:.1e}, {elapsed:.1f}s (limit 300s)")
    assert ok, failures


CLI_CONFIGS = {
    "half_line.cfg": """[tree]
generator = half_line
[solver]
domain_cut = 20
points_per_unit = 32
[sweep]
radii = 0 1 2
times = 0.05 0.25 1 4
[geometry]
d = 1
r_max = 20
[bounds]
kinds = universal
[potential]
kind = radial_power
v0 = 2
p = 3
[schrodinger]
kinds = half_sharp lieb
gamma = 0.5 1 1.5
beta = 1
d = 1
C = 1
[oracle]
max_generation = 0
""",
    "dyadic_d2.cfg": """[tree]
generator = dyadic
d = 2
radius = 80
[solver]
domain_cut = 16
points_per_unit = 16
t_max = 4
[sweep]
radii = 0.5 1.5 2.5
times = 0.25 1 2 4
[geometry]
d = 2
[bounds]
kinds = universal two_sided dim_bound
d = 2
[potential]
kind = radial_power
v0 = 2
p = 3
[schrodinger]
kinds = half_sharp two_term lt_ext
gamma = 0.5 1
beta = 0.5 1 2
a = 0 0.5
d = 2
C = 0.7
[oracle]
max_generation = 2
""",
}


def _cli_suite(tmp, cfgs):
    for name in cfgs:
        for cmd in ("geometry", "heat", "bounds", "schrodinger", "oracle-compare"):
            out = tmp / name.replace(".cfg", "") / cmd
            rc = main([cmd, "--config", str(tmp / "cfg" / name), "--out", str(out)])
            assert rc == 0, (name, cmd, rc)


def test_criterion_10_determinism(tmp_path, capsys):
    (tmp_path / "cfg").mkdir()
    for name, text in CLI_CONFIGS.items():
        (tmp_path / "cfg" / name).write_text(text)
    runs = [tmp_path / "run1", tmp_path / "run2"]
    for r in runs:
        r.mkdir()
        (r / "cfg").symlink_to(tmp_path / "cfg")
        _cli_suite(r, CLI_CONFIGS)
    capsys.readouterr()
    files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*.csv"))
    same = [filecmp.cmp(runs[0] / f, runs[1] / f, shallow=False) for f in files]
    ok = len(files) == 10 and all(same)
    record(10, ok, f"{sum(same)}/{len(files)} CSV files byte-identical across two runs")
    assert ok
