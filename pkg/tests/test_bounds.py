import math

import numpy as np
import pytest

from treeheat.bounds import (
    Sweep,
    TestFunction,
    decay_slope,
    default_balls,
    default_sweep,
    doubling_holds,
    functional_inequality_check,
    local_family,
    log_times,
    poincare_ratio,
    verify_bound,
    weighted_integral,
)
from treeheat.errors import DomainError, PreconditionError
from treeheat.radial import SolverConfig
from treeheat.tree import PointAddress, dyadic_tree, explicit_tree, half_line, homogeneous_tree

HL = half_line()
D2 = dyadic_tree(2, 40)
D3 = dyadic_tree(3, 40)
CFG = SolverConfig(domain_cut=16, points_per_unit=16, t_max=1.0)


def test_universal_saturates_at_origin():
    cfg = SolverConfig(domain_cut=20, points_per_unit=32, t_max=1.0)
    sweep = Sweep((PointAddress((), 0.0),), log_times(0.05, 1.0, 6))
    rep = verify_bound("universal", HL, cfg, sweep)
    assert not rep.violated
    assert abs(rep.worst_margin) < 1e-3
    assert rep.empirical_constant == pytest.approx(1.0, abs=1e-3)


def test_universal_holds_on_dyadic():
    rep = verify_bound("universal", D2, CFG)
    assert rep.verdict == "holds"
    assert rep.samples == len(default_sweep(D2, CFG))


def test_dim_bound_constant_stable():
    rep = verify_bound("dim_bound", D2, CFG, d=2)
    assert not rep.violated
    assert rep.constant_change < 0.1
    assert rep.empirical_constant > 0
    assert rep.worst_margin == pytest.approx(0.1 - rep.constant_change)


def test_no_vd_holds_on_dyadic_three():
    rep = verify_bound("no_vd", D3, CFG, delta=3)
    assert not rep.violated
    assert rep.detail("sobolev_S") > 0
    assert rep.detail("prefactor") > 0


def test_no_vd_precondition_on_half_line():
    with pytest.raises(PreconditionError):
        verify_bound("no_vd", HL, CFG, delta=3)


def test_two_sided_precondition_on_homogeneous():
    spec = homogeneous_tree(2, 30)
    cfg = SolverConfig(domain_cut=16, points_per_unit=16, t_max=1.0)
    with pytest.raises(PreconditionError):
        verify_bound("two_sided", spec, cfg)
    with pytest.raises(PreconditionError):
        verify_bound("homogeneous", D2, cfg)


def test_two_sided_lower_below_upper():
    cfg = SolverConfig(domain_cut=20, points_per_unit=16, t_max=4.0)
    rep = verify_bound("two_sided", D2, cfg)
    assert not rep.violated
    up, low = rep.detail("upper_constant"), rep.lower_constant
    # c_lo <= k sqrt(t) g(x + sqrt t) / g(x) <= c_up on the sampled set
    assert 1 / low <= up


def test_unknown_kind():
    with pytest.raises(DomainError):
        verify_bound("bogus", D2, CFG)
    with pytest.raises(DomainError):
        functional_inequality_check("bogus", D2)


def test_sweep_structure():
    sw = default_sweep(D2, CFG, n_t=5)
    radii = [p.radial for p in sw.points]
    assert radii == sorted(radii)
    assert all(r * 8 == int(r * 8) for r in radii)
    assert max(radii) <= CFG.reach()
    assert np.all(np.diff(sw.times) > 0)
    assert sw.times[-1] == pytest.approx(CFG.t_max)


def test_decay_slope_half_line():
    cfg = SolverConfig(domain_cut=40, points_per_unit=16, t_max=16.0)
    assert decay_slope(HL, cfg, 0.0, 1.0, 16.0) == pytest.approx(-0.5, abs=0.01)


def test_doubling_detection():
    assert doubling_holds(D2, 40)[0]
    assert not doubling_holds(homogeneous_tree(2, 30), 30)[0]


def test_weighted_integral_exact_for_polynomials():
    spec = explicit_tree([0, 1], [1, 2])
    # int_0^3 s^2 g(s) ds = 1/3 + 2 (27 - 1)/3
    assert weighted_integral(spec, lambda s: s**2, 0, 3) == pytest.approx(1 / 3 + 52 / 3, rel=1e-14)


def test_poincare_linear_ratio_is_one_twelfth():
    lin = [f for f in local_family() if f.name == "linear"][0]
    lhs, rhs = poincare_ratio(HL, lin, 5.0, 2.0)
    assert lhs / rhs == pytest.approx(1 / 12, rel=1e-12)
    with pytest.raises(DomainError):
        poincare_ratio(HL, lin, 5.0, 0.0)


@pytest.mark.parametrize("spec", [HL, D2, D3], ids=["half_line", "dyadic2", "dyadic3"])
def test_poincare_holds(spec):
    rep = functional_inequality_check("poincare", spec, r_max=24)
    assert not rep.violated
    assert rep.detail("max_ratio") < 1


def test_volume_doubling_below_two_c0():
    rep = functional_inequality_check("volume_doubling", D2, r_max=32)
    assert not rep.violated
    assert rep.empirical_constant <= rep.detail("two_c0")


def test_volume_doubling_needs_doubling():
    with pytest.raises(PreconditionError):
        functional_inequality_check("volume_doubling", homogeneous_tree(2, 30), r_max=30)


def test_log_sobolev_margins_positive():
    rep = functional_inequality_check("log_sobolev", D2)
    assert rep.worst_margin > 0


def test_log_sobolev_gaussian_on_half_line():
    from treeheat.bounds import global_family

    gauss = [f for f in global_family() if f.name == "gaussian"]
    rep = functional_inequality_check("log_sobolev", HL, gauss, a_values=(0.5, 1.0, 2.0))
    assert rep.samples == 3 and rep.worst_margin > 0


def test_nash_needs_sobolev():
    with pytest.raises(PreconditionError):
        functional_inequality_check("nash", HL)
    rep = functional_inequality_check("nash", D3)
    assert not rep.violated


def test_degenerate_ball_rejected():
    with pytest.raises(DomainError):
        functional_inequality_check("poincare", HL, balls=[(1.0, 0.0)])
    with pytest.raises(DomainError):
        functional_inequality_check("poincare", HL, balls=[])


def test_constant_function_skipped():
    const = TestFunction("const", lambda s: np.ones_like(s), lambda s: np.zeros_like(s))
    rep = functional_inequality_check("poincare", HL, [const], balls=[(2.0, 1.0)])
    assert rep.samples == 0 and not rep.violated


def test_default_balls_inside_range():
    balls = default_balls(D2, 10)
    assert balls and all(z + r <= 10 and r > 0 for z, r in balls)


def test_report_csv_rows():
    rep = verify_bound("universal", HL, SolverConfig(domain_cut=12, points_per_unit=16, t_max=1.0))
    rows = rep.csv_rows()
    assert rows[0][0] == "universal"
    assert all(len(r) == 3 for r in rows)
    assert math.isfinite(rep.worst_margin)
