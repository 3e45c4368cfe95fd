import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize

from treeheat.errors import DomainError, PreconditionError
from treeheat.radial import SolverConfig, lambda_closed_form
from treeheat.schrodinger import (
    bound_constants,
    bound_rhs,
    exponential_integral_factor,
    hardy_constant,
    homogeneous_shift,
    lieb_time_integral,
    negative_moments,
    partition_regions,
    per_edge,
    radial_power,
    radial_table,
    riesz_crosscheck,
    riesz_moment,
    small_beta_scan,
    split_check,
    two_term_item,
    zero_potential,
)
from treeheat.tree import dyadic_tree, explicit_tree, half_line, homogeneous_tree

HL = half_line()
T12 = explicit_tree([0, 1], [1, 2])
D2 = dyadic_tree(2, 40)
D3 = dyadic_tree(3, 40)
CFG_D2 = SolverConfig(domain_cut=16, points_per_unit=16)
WELL = radial_table([0, 3], [2.0])


def test_step_well_single_bound_state():
    # Neumann at 0: even states of a well of depth 4 and half-width 1
    res = negative_moments(HL, radial_table([0, 1], [4.0]), 1.0, SolverConfig(domain_cut=20, points_per_unit=32))
    assert len(res.eigenvalues) == 1
    z = optimize.brentq(lambda z: z * math.tan(z) - math.sqrt(4 - z * z), 1e-6, math.pi / 2 - 1e-9)
    assert res.eigenvalues[0] == pytest.approx(z * z - 4, rel=1e-3)
    value, eigs = res
    assert value == pytest.approx(abs(eigs[0]))


def test_unit_well_binds_once_on_both_routes():
    cfg = SolverConfig(domain_cut=12, points_per_unit=16)
    V = radial_table([0, 1], [1.0])
    for route in ("radial", "oracle"):
        assert negative_moments(HL, V, 0.0, cfg, route=route).value == 1


def test_zero_potential_has_no_moments():
    for route in ("radial", "oracle"):
        res = negative_moments(T12, zero_potential(), 1.0, SolverConfig(domain_cut=6, points_per_unit=8), route=route)
        assert res.value == 0 and res.eigenvalues == ()


def test_routes_agree():
    cfg = SolverConfig(domain_cut=6, points_per_unit=16)
    a = negative_moments(T12, radial_power(2, 2), 1.0, cfg)
    b = negative_moments(T12, radial_power(2, 2), 1.0, cfg, route="oracle")
    assert a.value == pytest.approx(b.value, rel=1e-9)
    assert len(a.eigenvalues) == len(b.eigenvalues)


def test_per_edge_needs_oracle_and_matches_radial():
    cfg = SolverConfig(domain_cut=6, points_per_unit=16)
    table = {(): ([0, 1], [2.0, 2.0]), (1,): ([0, 5], [2.0, 2.0]), (2,): ([0, 5], [2.0, 2.0])}
    V = per_edge(table)
    with pytest.raises(PreconditionError):
        negative_moments(T12, V, 1.0, cfg)
    got = negative_moments(T12, V, 1.0, cfg, route="oracle").value
    ref = negative_moments(T12, radial_table([0, 6], [2.0]), 1.0, cfg, route="oracle").value
    assert got == pytest.approx(ref, rel=1e-9)


def test_asymmetric_per_edge_potential():
    cfg = SolverConfig(domain_cut=6, points_per_unit=16)
    one = per_edge({(1,): ([0, 2], [3.0, 3.0])})
    both = per_edge({(1,): ([0, 2], [3.0, 3.0]), (2,): ([0, 2], [3.0, 3.0])})
    n1 = len(negative_moments(T12, one, 0.0, cfg, route="oracle").eigenvalues)
    n2 = len(negative_moments(T12, both, 0.0, cfg, route="oracle").eigenvalues)
    assert 0 < n1 <= n2


def test_riesz_examples():
    assert riesz_moment([-1.0], 1.0) == pytest.approx(1.0, rel=1e-12)
    assert riesz_moment([-4.0, -1.0], 0.5) == pytest.approx(3.0, rel=1e-10)
    assert riesz_moment([], 1.0) == 0.0
    assert riesz_moment([0.5, 2.0], 1.0) == 0.0
    assert riesz_crosscheck([-3.0, -0.25, -0.25], 1.5) < 1e-10
    with pytest.raises(DomainError):
        riesz_moment([-1.0], 0.0)


def test_gamma_zero_counts():
    res = negative_moments(HL, radial_table([0, 4], [6.0]), 0.0, SolverConfig(domain_cut=20, points_per_unit=16))
    assert res.value == len(res.eigenvalues) >= 2


def test_exponential_integral_factor_against_mpmath():
    mpmath = pytest.importorskip("mpmath")
    for b in (1e-3, 0.5, 1.0, 7.0, 30.0):
        ref = mpmath.e ** (-b) - b * mpmath.e1(b)
        assert exponential_integral_factor(b) == pytest.approx(float(ref), rel=1e-12)


@pytest.mark.parametrize("gamma", [0.0, 1.0])
def test_M_value(gamma):
    # Gamma(1) = Gamma(2) = 1, so both orders share 1/(e^-1 - E1(1))
    assert bound_constants("M", gamma=gamma, beta=1).M == pytest.approx(6.734210493715, abs=1e-9)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0, 2.5])
def test_M_small_beta_limit(gamma):
    assert bound_constants("M", gamma=gamma, beta=1e-9).M == pytest.approx(math.gamma(gamma + 1), rel=1e-4)


def test_two_term_half_gamma_tilde_is_two():
    c = bound_constants("two_term", gamma=0.5, beta=1.3, d=2.5, C_envelope=1.0)
    assert c.L_tilde == 2.0
    assert c.L == pytest.approx(2 ** 3.75 * c.M * 1.3 ** -0.75 / (2.5**2 - 1))


def test_two_term_item_ranges():
    assert two_term_item(1.0, 2.0) == 1
    assert two_term_item(0.3, 2.0) == 2
    assert two_term_item(0.0, 3.0) == 2
    with pytest.raises(DomainError):
        two_term_item(0.0, 2.0)
    with pytest.raises(DomainError):
        two_term_item(1.0, 1.0)


def test_lt_range_rejected():
    with pytest.raises(DomainError):
        bound_constants("lt_ext", gamma=1.0, a=1.0, d=2.0, C_envelope=1.0)
    with pytest.raises(DomainError):
        bound_constants("lt_ext", gamma=1.0, a=1.5, d=3.0, C_envelope=1.0)
    with pytest.raises(DomainError):
        bound_constants("lt_ext", gamma=0.1, a=0.5, d=2.0, C_envelope=1.0)


def test_lt_lift_consistency():
    base = bound_constants("lt_ext", gamma=0.25, a=0.5, d=2.0, C_envelope=1.0)
    assert base.base_gamma == 0.25
    lifted = [bound_constants("lt_ext", gamma=g, a=0.5, d=2.0, C_envelope=1.0).K for g in (0.25, 0.5, 1.0)]
    assert lifted[0] == pytest.approx(base.K)
    # the lifting factor B(x, q+1)/B(x, g0+1) with q > g0 is below 1
    assert lifted[1] < lifted[0] and lifted[2] < lifted[1]


def test_lieb_time_integral_against_quad():
    v, g, beta, gamma, d, C = 1.0, 2.0, 0.5, 1.0, 2.0, 1.5
    T = g ** (2 / (d - 1))
    f_small = lambda t: (math.pi * t) ** -0.5 * t ** (-1 - gamma) * max(t * v - beta, 0.0)  # noqa: E731
    f_big = lambda t: C * t ** (-d / 2) * g * t ** (-1 - gamma) * max(t * v - beta, 0.0)  # noqa: E731
    ref = integrate.quad(f_small, beta / v, T, epsabs=0, epsrel=1e-12)[0]
    ref += integrate.quad(f_big, T, np.inf, epsabs=0, epsrel=1e-12)[0]
    got = float(lieb_time_integral(np.array([v]), np.array([g]), beta, gamma, d, C)[0])
    assert got == pytest.approx(ref, rel=1e-9)


def test_lieb_time_integral_half_line_closed_form():
    # d <= 1: only (pi t)^{-1/2}; for gamma > 1/2 the integral is B(gamma - 1/2, 2) v^{gamma+1/2} beta^{1/2-gamma}/sqrt(pi)
    v, beta, gamma = 2.0, 0.7, 1.5
    got = float(lieb_time_integral(np.array([v]), np.array([1.0]), beta, gamma, 1.0, 0.0)[0])
    ref = math.gamma(gamma - 0.5) / math.gamma(gamma + 1.5) * v ** (gamma + 0.5) * beta ** (0.5 - gamma)
    assert got == pytest.approx(ref / math.sqrt(math.pi), rel=1e-12)
    assert float(lieb_time_integral(np.array([0.0]), np.array([1.0]), beta, gamma, 2.0, 1.0)[0]) == 0.0


def test_partition_empty_plus_for_zero_potential():
    p = partition_regions(D2, zero_potential(), 1.0, 2.0, CFG_D2)
    assert p.measure_plus == 0.0 and p.boundaries == ()


def test_partition_monotone_in_beta():
    V = radial_power(1, 1)
    plus = [partition_regions(D2, V, b, 2.0, CFG_D2).measure_plus for b in (0.5, 1, 2, 4, 8)]
    assert all(a >= b for a, b in zip(plus, plus[1:]))


def test_partition_boundary_changes_sign():
    V = radial_power(1, 1)
    p = partition_regions(D2, V, 4.0, 2.0, CFG_D2)
    assert p.boundaries
    r = p.boundaries[0]
    val = lambda s: float(V.radial(s) * D2.density(s) ** 2)  # noqa: E731
    assert val(r - 1e-6) < 4.0 <= val(r + 1e-6)
    with pytest.raises(DomainError):
        partition_regions(HL, V, 1.0, 1.0)


def test_zero_potential_rhs_is_zero():
    for kind in ("lieb", "two_term", "lt_ext", "half_sharp"):
        assert float(bound_rhs(kind, D2, zero_potential(), dict(gamma=1, beta=1, d=2, C=1.5))) == 0.0


@pytest.mark.parametrize("kind", ["lieb", "two_term", "lt_ext"])
def test_rhs_finite_and_above_lhs(kind):
    lhs = negative_moments(D2, WELL, 1.0, CFG_D2).value
    rhs = bound_rhs(kind, D2, WELL, dict(gamma=1, beta=1, d=2, C=1.5, a=0.5), CFG_D2)
    assert not rhs.divergent and math.isfinite(rhs.value)
    assert rhs.value >= lhs > 0


def test_two_term_inverse_cube_potential():
    V = radial_power(2, 3)
    rhs = bound_rhs("two_term", D2, V, dict(gamma=1, beta=1, d=2, C=1.5), CFG_D2)
    assert math.isfinite(rhs.value) and not rhs.divergent
    assert rhs.value >= negative_moments(D2, V, 1.0, CFG_D2).value


def test_half_line_sharp_bound():
    cfg = SolverConfig(domain_cut=24, points_per_unit=16)
    V = radial_table([0, 2], [5.0])
    for gamma in (0.5, 1.0, 1.5):
        lhs = negative_moments(HL, V, gamma, cfg).value
        assert lhs <= float(bound_rhs("half_sharp", HL, V, dict(gamma=gamma), cfg))
    with pytest.raises(DomainError):
        bound_rhs("half_sharp", HL, V, dict(gamma=0.25), cfg)


def test_slow_decay_is_divergent():
    rhs = bound_rhs("half_sharp", HL, radial_power(1, 0.5), dict(gamma=0.5))
    assert rhs.divergent and math.isinf(rhs.value)


@settings(max_examples=15)
@given(st.floats(0.2, 3.0), st.floats(1.0, 3.0))
def test_moments_monotone_in_potential(v0, p):
    cfg = SolverConfig(domain_cut=12, points_per_unit=8)
    V = radial_power(v0, p)
    a = negative_moments(D2, V, 1.0, cfg).value
    b = negative_moments(D2, V.scaled(2.0), 1.0, cfg).value
    assert b >= a
    ra = float(bound_rhs("lieb", D2, V, dict(gamma=1, beta=1, d=2, C=1.5), cfg))
    rb = float(bound_rhs("lieb", D2, V.scaled(2.0), dict(gamma=1, beta=1, d=2, C=1.5), cfg))
    assert rb >= ra


def test_split_inequality():
    for beta in (0.5, 2.0, 8.0):
        lhs, inner, outer = split_check(D2, radial_power(2, 1.5), 1.0, beta, 2.0, CFG_D2)
        assert lhs <= inner + outer + 1e-12


def test_small_beta_scan_threshold():
    thr, rows = small_beta_scan(D2, WELL, 1.0, 2.0, CFG_D2, [4.0, 0.1, 1.0])
    assert [r[0] for r in rows] == [0.1, 1.0, 4.0]
    assert thr in (0.0, 0.1, 1.0, 4.0)
    assert all(r[3] for r in rows if r[0] <= thr)


def test_hardy_constant_stable():
    a = hardy_constant(D3, SolverConfig(domain_cut=24, points_per_unit=8))
    b = hardy_constant(D3, SolverConfig(domain_cut=24, points_per_unit=16))
    assert a > 0 and b > 0
    assert a == pytest.approx(b, rel=0.01)


def test_homogeneous_shift_and_bound():
    spec = homogeneous_tree(2, 20)
    assert homogeneous_shift(spec) == lambda_closed_form(2)[0]
    with pytest.raises(PreconditionError):
        homogeneous_shift(D2)
    cfg = SolverConfig(domain_cut=12, points_per_unit=8, mass="lumped")
    V = radial_table([0, 2], [1.0])
    plain = negative_moments(spec, V, 1.0, cfg).value
    shifted = negative_moments(spec, V, 1.0, cfg, shift=homogeneous_shift(spec)).value
    assert shifted >= plain
    rhs1 = bound_rhs("homogeneous", spec, V, dict(gamma=1, beta=1, C=1.0), cfg)
    rhs2 = bound_rhs("homogeneous", spec, V, dict(gamma=1, beta=1, C=2.0), cfg)
    assert not rhs1.divergent
    assert rhs2.value == pytest.approx(2 * rhs1.value)
    with pytest.raises(PreconditionError):
        bound_rhs("homogeneous", D2, V, dict(gamma=1, beta=1, C=1.0))


def test_potential_validation():
    with pytest.raises(DomainError):
        radial_power(-1, 2)
    with pytest.raises(DomainError):
        radial_table([0, 1, 1], [1, 2])
    with pytest.raises(DomainError):
        per_edge({(1,): ([0, 1], [1.0])})
    with pytest.raises(DomainError):
        radial_power(1, 1).scaled(-1)
    t = radial_table([1, 2], [3.0])
    assert list(t.radial([0.5, 1.0, 1.5, 2.0, 2.5])) == [0.0, 1.5, 3.0, 1.5, 0.0]
