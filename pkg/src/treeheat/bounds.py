"""Executable checks of the heat-kernel bounds and functional inequalities.

Each check evaluates both sides of an inequality over a sweep and returns a
:class:`BoundReport`.  Bounds with explicit constants are compared directly,
with a tolerance taken from the difference between two grid levels.  Bounds
whose constant is only known to exist get a fitted constant, and the check
asks that it stays stable under refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import xlogy

from .errors import DomainError, PreconditionError
from .kernel import channel_system, diagonal_series
from .radial import SolverConfig, ground_state_homogeneous, lambda_closed_form
from .tree import (
    PointAddress,
    TreeSpec,
    ball_volume,
    geometry_scan,
    representative_point,
    sobolev_constant,
    sobolev_tilde_factor,
)

__all__ = [
    "BoundReport",
    "Sweep",
    "TestFunction",
    "FAMILY_VERSION",
    "log_times",
    "default_sweep",
    "default_balls",
    "local_family",
    "global_family",
    "weighted_integral",
    "poincare_ratio",
    "sobolev_for",
    "doubling_holds",
    "decay_slope",
    "verify_bound",
    "functional_inequality_check",
]

BOUND_KINDS = ("universal", "two_sided", "dim_bound", "no_vd", "homogeneous", "k0_two_sided")
FUNCTIONAL_KINDS = ("poincare", "volume_doubling", "nash", "log_sobolev")
FAMILY_VERSION = "tf-1"
ABS_TOL = 1e-9
LATTICE = 8
DEFAULT_BANDS = {"two_sided": 0.10, "dim_bound": 0.10, "k0_two_sided": 0.10, "homogeneous": 0.15}


@dataclass(frozen=True)
class BoundReport:
    """Verdict of one inequality check.

    Attributes:
        bound_kind: Name of the checked inequality.
        samples: Number of evaluated samples.
        worst_margin: Smallest normalized margin ``(RHS - LHS) / scale``.
            For fitted-constant kinds it is the stability band minus the
            observed relative change of the constant.
        empirical_constant: Fitted or observed constant, if any.
        violated: ``worst_margin < -tolerance``.
        config_digest: Digest of the solver configuration used.
        tolerance: Tolerance at the worst sample.
        lower_constant: Fitted lower constant for two-sided kinds.
        constant_change: Relative change of the fitted constant(s) between
            the two grid levels.
        details: Extra named diagnostics.
    """

    bound_kind: str
    samples: int
    worst_margin: float
    empirical_constant: Optional[float]
    violated: bool
    config_digest: str
    tolerance: float = ABS_TOL
    lower_constant: Optional[float] = None
    constant_change: Optional[float] = None
    details: tuple[tuple[str, float], ...] = ()

    def detail(self, name: str) -> float:
        return dict(self.details)[name]

    @property
    def verdict(self) -> str:
        return "VIOLATED" if self.violated else "holds"

    def csv_rows(self) -> list[tuple]:
        """Rows ``(kind, quantity, value)``."""
        rows = [
            (self.bound_kind, "samples", float(self.samples)),
            (self.bound_kind, "worst_margin", self.worst_margin),
            (self.bound_kind, "tolerance", self.tolerance),
            (self.bound_kind, "violated", float(self.violated)),
        ]
        if self.empirical_constant is not None:
            rows.append((self.bound_kind, "empirical_constant", self.empirical_constant))
        if self.lower_constant is not None:
            rows.append((self.bound_kind, "lower_constant", self.lower_constant))
        if self.constant_change is not None:
            rows.append((self.bound_kind, "constant_change", self.constant_change))
        rows += [(self.bound_kind, k, v) for k, v in self.details]
        return rows


def _report(kind, margins, tols, digest, **kw) -> BoundReport:
    margins = np.asarray(margins, dtype=float)
    tols = np.broadcast_to(np.asarray(tols, dtype=float), margins.shape).ravel()
    margins = margins.ravel()
    k = int(np.argmin(margins + tols)) if margins.size else 0
    worst = float(margins.min()) if margins.size else math.inf
    violated = bool(np.any(margins < -tols))
    return BoundReport(
        kind, int(margins.size), worst, violated=violated, config_digest=digest,
        tolerance=float(tols[k]) if margins.size else ABS_TOL, **kw
    )


# -- sweeps ------------------------------------------------------------------------


@dataclass(frozen=True)
class Sweep:
    """Cartesian sample set of points and times."""

    points: tuple[PointAddress, ...]
    times: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.points) * len(self.times)


def log_times(t_min: float, t_max: float, n: int) -> tuple[float, ...]:
    """``n`` logarithmically spaced times in ``[t_min, t_max]``."""
    return tuple(float(t) for t in np.geomspace(t_min, t_max, n))


def default_sweep(
    spec: TreeSpec,
    cfg: SolverConfig,
    n_t: int = 12,
    t_min: float = 1e-2,
    r_max: Optional[float] = None,
) -> Sweep:
    """Edge midpoints and near-vertex points, times on a log grid.

    Near-vertex points sit at ``edge/16`` from both ends of every edge.  All
    radii are rounded to the 1/8 lattice so that they are grid nodes for every
    ``points_per_unit`` divisible by 8.
    """
    top = cfg.reach() if r_max is None else min(r_max, cfg.reach())
    if top <= 0:
        raise DomainError("the cut leaves no room for evaluation points")
    ends = [r for r in spec.radii if r < top] + [top]
    radii = set()
    for lo, hi in zip(ends, ends[1:]):
        e = hi - lo
        for r in (lo + e / 2, lo + e / 16, hi - e / 16):
            q = math.floor(r * LATTICE + 0.5) / LATTICE
            if lo < q <= top:
                radii.add(q)
    points = tuple(representative_point(spec, r) for r in sorted(radii))
    return Sweep(points, log_times(t_min, cfg.t_max, n_t))


def _levels(cfg: SolverConfig) -> tuple[SolverConfig, SolverConfig]:
    """The configuration and its second refinement level."""
    if cfg.points_per_unit // 2 >= 8 and cfg.points_per_unit % 2 == 0:
        return cfg, SolverConfig(
            cfg.domain_cut, cfg.points_per_unit // 2, cfg.n_modes, cfg.t_max, cfg.mass
        )
    return cfg, cfg.refined(2)


def _diag_table(spec, cfg, sweep, channel0_only=False) -> np.ndarray:
    times = np.asarray(sweep.times)
    rows = []
    for x in sweep.points:
        if channel0_only:
            sys = channel_system(spec, 0, cfg)
            i, _ = sys.node_index(x.radial)
            rows.append(np.exp(-np.outer(times, sys.eigenvalues)) @ sys.eigenvectors[i] ** 2)
        else:
            rows.append(diagonal_series(spec, cfg, x.radial, times))
    return np.maximum(np.asarray(rows), 0.0)


def decay_slope(spec: TreeSpec, cfg: SolverConfig, r: float, t_lo: float, t_hi: float, n: int = 20) -> float:
    """Least-squares slope of ``log k(x,x,t)`` against ``log t`` at ``|x| = r``."""
    ts = np.geomspace(t_lo, t_hi, n)
    k = diagonal_series(spec, cfg, r, ts)
    return float(np.polyfit(np.log(ts), np.log(k), 1)[0])


# -- geometry preconditions --------------------------------------------------------


def doubling_holds(spec: TreeSpec, r_max: float) -> tuple[bool, float]:
    """Whether ``g_0(2r) <= C_0 g_0(r)`` looks uniform on the scanned range.

    The estimate of ``C_0`` over ``(0, r_max/2]`` must not exceed 1.5 times
    the estimate over ``(0, r_max/4]``; exponential tails always fail.
    """
    rep = geometry_scan(spec, 1.0, 3.0, r_max)
    if spec.tail == "exponential":
        return False, rep.doubling_constant
    half = geometry_scan(spec, 1.0, 3.0, r_max / 2)
    return rep.doubling_constant <= 1.5 * half.doubling_constant, rep.doubling_constant


def sobolev_for(spec: TreeSpec, delta: float, r_max: Optional[float] = None) -> float:
    """``S(delta)`` with the supremum taken well into the tail model."""
    top = r_max or (spec.horizon_radius if math.isfinite(spec.horizon_radius) else spec.radii[-1] + 1)
    inner = np.unique(np.concatenate([np.linspace(0, top, 4001)[1:], spec.radii[1:]]))
    if spec.tail == "exponential":
        # the supremand decays exponentially; larger radii would overflow
        outer = np.linspace(top, 4 * top, 400)
    else:
        outer = np.geomspace(top, 1e4 * (1 + top), 400)
    S, _ = sobolev_constant(spec.volume, spec.inverse_tail, delta, np.concatenate([inner, outer]))
    return S


# -- heat kernel bounds ----------------------------------------------------------------


def verify_bound(
    kind: str,
    spec: TreeSpec,
    cfg: SolverConfig,
    sweep: Optional[Sweep] = None,
    *,
    d: float = 2.0,
    delta: float = 3.0,
    band: Optional[float] = None,
    slope_window: Optional[tuple[float, float, float]] = None,
) -> BoundReport:
    """Check one heat-kernel bound over ``sweep``.

    Args:
        kind: One of ``universal``, ``two_sided``, ``dim_bound``, ``no_vd``,
            ``homogeneous``, ``k0_two_sided``.
        spec: Tree geometry.
        cfg: Solver configuration (the finer of the two levels).
        sweep: Samples; defaults to :func:`default_sweep`.
        d: Global dimension for ``dim_bound``.
        delta: Exponent for ``no_vd``.
        band: Allowed relative change of fitted constants between levels.
        slope_window: Optional ``(r, t_lo, t_hi)`` for a decay-slope detail.

    Returns:
        The :class:`BoundReport`.
    """
    if kind not in BOUND_KINDS:
        raise DomainError(f"unknown bound kind {kind!r}")
    sweep = sweep or default_sweep(spec, cfg)
    fine, other = _levels(cfg)
    digest = fine.digest()
    times = np.asarray(sweep.times)[None, :]
    radii = np.array([x.radial for x in sweep.points])[:, None]
    sqt = np.sqrt(times)
    g_x = spec.g0(radii)
    details: list[tuple[str, float]] = []
    if slope_window is not None:
        r, lo, hi = slope_window
        details.append(("decay_slope", decay_slope(spec, fine, r, lo, hi)))

    if kind in ("two_sided", "k0_two_sided"):
        ok, c0 = doubling_holds(spec, max(cfg.domain_cut, 2 * float(radii.max())))
        if not ok:
            raise PreconditionError("doubling condition g_0(2r) <= C_0 g_0(r) not satisfied on scan range")
        details.append(("doubling_constant", c0))
    if kind == "homogeneous" and spec.tail != "exponential":
        raise PreconditionError("the homogeneous bound needs a homogeneous tree")

    only0 = kind == "k0_two_sided"
    lhs = _diag_table(spec, fine, sweep, only0)
    lhs2 = _diag_table(spec, other, sweep, only0)
    delta_lhs = np.abs(lhs - lhs2)

    if kind in ("universal", "no_vd"):
        if kind == "universal":
            rhs = np.broadcast_to((math.pi * times) ** -0.5, lhs.shape)
            const = float(np.max(lhs / rhs))
        else:
            S = sobolev_for(spec, delta)
            if S <= 0:
                raise PreconditionError(
                    "Sobolev-type condition fails: the tail integral of 1/g_0 diverges"
                )
            St = sobolev_tilde_factor(delta) * S
            prefactor = (delta / (2 * St)) ** (delta / 2)
            rhs = prefactor * times ** (-delta / 2) * g_x
            details += [("sobolev_S", S), ("sobolev_S_tilde", St), ("prefactor", prefactor)]
            const = float(np.max(lhs / rhs))
        margins = (rhs - lhs) / rhs
        tols = np.maximum(ABS_TOL, delta_lhs / rhs)
        return _report(kind, margins, tols, digest, empirical_constant=const, details=tuple(details))

    band = DEFAULT_BANDS[kind] if band is None else band
    if kind == "dim_bound":
        shape = times ** (-d / 2) * g_x
        consts = [float(np.max(v / shape)) for v in (lhs, lhs2)]
        change = abs(consts[0] - consts[1]) / consts[0]
        details.append(("constant_other_level", consts[1]))
        return _report(kind, [band - change], ABS_TOL, digest, empirical_constant=consts[0],
                       constant_change=change, details=tuple(details))

    if kind == "homogeneous":
        b = int(spec.tail_params[0])
        lam, _ = lambda_closed_form(b)
        shape = np.exp(-lam * times) * times**-1.5 * (1 + radii) ** 2
        consts = [float(np.max(v / shape)) for v in (lhs, lhs2)]
        change = abs(consts[0] - consts[1]) / consts[0]
        hom = ground_state_homogeneous(b, fine)
        k0 = _diag_table(spec, fine, sweep, channel0_only=True)
        explicit = float(np.max(k0 / hom.kernel_bound(radii, times)))
        details += [("lambda_b", lam), ("constant_other_level", consts[1]),
                    ("k0_over_ground_state_bound", explicit)]
        margins = [band - change, 1.0 - explicit]
        return _report(kind, margins, ABS_TOL, digest, empirical_constant=consts[0],
                       constant_change=change, details=tuple(details))

    # two-sided kinds
    spec.check_radius(float((radii + sqt).max()))
    g_far = spec.g0(radii + sqt)
    upper_shape = g_x / (sqt * g_far) if kind == "two_sided" else 1.0 / (sqt * g_far)
    h = 1.0 / fine.points_per_unit
    t_low = 100 * max(h, 1.0 / other.points_per_unit) ** 2
    use = np.broadcast_to(times >= t_low, lhs.shape)
    if not np.any(use):
        raise DomainError("no sample time is large enough for the lower bound")

    def fit(v):
        up = float(np.max(v / upper_shape))
        low = float(np.max((1.0 / (v * sqt * g_far))[use]))
        return up, low

    (up1, lo1), (up2, lo2) = fit(lhs), fit(lhs2)
    change = max(abs(up1 - up2) / up1, abs(lo1 - lo2) / lo1)
    details += [("upper_constant", up1), ("upper_other_level", up2), ("lower_other_level", lo2),
                ("lower_t_min", t_low)]
    return _report(kind, [band - change], ABS_TOL, digest, empirical_constant=max(up1, lo1),
                   lower_constant=lo1, constant_change=change, details=tuple(details))


# -- functional inequalities ------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """A test function with its derivative, support ``[0, support]`` and kinks."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    support: float = math.inf
    kinks: tuple[float, ...] = ()

    __test__ = False  # keep pytest from collecting this class


def local_family() -> list[TestFunction]:
    """Smooth and piecewise-linear functions for ball inequalities."""
    return [
        TestFunction("linear", lambda s: s, lambda s: np.ones_like(s)),
        TestFunction("quadratic", lambda s: s**2, lambda s: 2 * s),
        TestFunction("cubic", lambda s: (s - 1) ** 3, lambda s: 3 * (s - 1) ** 2),
        TestFunction("sine", lambda s: np.sin(2 * s), lambda s: 2 * np.cos(2 * s)),
        TestFunction("cosine", lambda s: np.cos(3 * s + 0.5), lambda s: -3 * np.sin(3 * s + 0.5)),
        TestFunction("hinge", lambda s: np.abs(s - 1.5), lambda s: np.sign(s - 1.5), kinks=(1.5,)),
        TestFunction("ramp", lambda s: np.minimum(s, 2.0), lambda s: (s < 2.0) * 1.0, kinks=(2.0,)),
    ]


def _bump(L):
    return TestFunction(
        f"bump{L:g}",
        lambda s: np.where(s < L, (1 - s / L) ** 2, 0.0),
        lambda s: np.where(s < L, -2 * (1 - s / L) / L, 0.0),
        support=L,
    )


def _cos2(L):
    return TestFunction(
        f"cos2-{L:g}",
        lambda s: np.where(s < L, np.cos(np.pi * s / (2 * L)) ** 2, 0.0),
        lambda s: np.where(s < L, -np.pi / (2 * L) * np.sin(np.pi * s / L), 0.0),
        support=L,
    )


def global_family() -> list[TestFunction]:
    """Decaying functions on the whole half-line, for Nash and log-Sobolev."""
    return [
        TestFunction("gaussian", lambda s: np.exp(-(s**2)), lambda s: -2 * s * np.exp(-(s**2)), support=12.0),
        _bump(1.0),
        _bump(4.0),
        _bump(16.0),
        _cos2(2.0),
        _cos2(8.0),
        TestFunction(
            "plateau",
            lambda s: np.clip((3 - s) / 2, 0.0, 1.0),
            lambda s: np.where((s > 1) & (s < 3), -0.5, 0.0),
            support=3.0,
            kinks=(1.0,),
        ),
    ]


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def weighted_integral(
    spec: TreeSpec,
    integrand: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    breaks: Sequence[float] = (),
    piece: float = 0.125,
) -> float:
    """``int_a^b integrand(s) g_0(s) ds`` by piecewise Gauss-Legendre.

    Pieces never straddle a vertex radius or one of ``breaks``, so ``g_0`` is
    constant on each and polynomial integrands up to degree 15 are exact.
    """
    if b <= a:
        return 0.0
    cuts = [a, b] + [r for r in list(spec.radii) + list(breaks) if a < r < b]
    cuts = np.unique(cuts)
    edges = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        n = max(1, int(math.ceil((hi - lo) / piece)))
        edges.append(np.linspace(lo, hi, n + 1)[:-1])
    edges = np.concatenate(edges + [[b]])
    lo, hi = edges[:-1], edges[1:]
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
    vals = integrand(nodes) * spec.g0(mid)[:, None]
    return float(np.sum(vals * _GL_W[None, :] * half[:, None]))


def poincare_ratio(spec: TreeSpec, fn: TestFunction, z: float, r: float) -> tuple[float, float]:
    """Both sides of the weighted Poincare inequality on ``B(z, r)``.

    Returns:
        ``(LHS, RHS)`` with the optimal constant ``xi`` in the LHS.
    """
    if r <= 0:
        raise DomainError("degenerate ball (r = 0)")
    a, b = max(z - r, 0.0), z + r
    vol = ball_volume(spec, z, r)
    xi = weighted_integral(spec, fn.f, a, b, fn.kinks) / vol
    lhs = weighted_integral(spec, lambda s: (fn.f(s) - xi) ** 2, a, b, fn.kinks)
    rhs = 4 * r**2 * weighted_integral(spec, lambda s: fn.df(s) ** 2, a, b, fn.kinks)
    return lhs, rhs


def default_balls(spec: TreeSpec, r_max: float) -> list[tuple[float, float]]:
    """Balls ``(z, r)`` centred at the root, vertices and edge midpoints."""
    verts = [r for r in spec.radii if r < r_max]
    ends = verts + [r_max]
    centres = sorted(set(verts + [(a + b) / 2 for a, b in zip(ends, ends[1:])] + [0.5]))
    out = []
    for z in centres:
        for r in (0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0):
            if z + r <= r_max:
                out.append((z, r))
    return out


def _global_integrals(spec, fn):
    L = fn.support
    br = fn.kinks
    d2 = weighted_integral(spec, lambda s: fn.df(s) ** 2, 0.0, L, br)
    l1 = weighted_integral(spec, lambda s: np.abs(fn.f(s)), 0.0, L, br)
    l2 = weighted_integral(spec, lambda s: fn.f(s) ** 2, 0.0, L, br)
    return d2, l1, l2


def functional_inequality_check(
    kind: str,
    spec: TreeSpec,
    family: Optional[Sequence[TestFunction]] = None,
    *,
    balls: Optional[Sequence[tuple[float, float]]] = None,
    r_max: Optional[float] = None,
    delta: float = 3.0,
    a_values: Sequence[float] = (0.5, 1.0, 2.0),
) -> BoundReport:
    """Check a functional inequality of the weighted half-line ``g_0 dr``.

    Args:
        kind: ``poincare``, ``volume_doubling``, ``nash`` or ``log_sobolev``.
        spec: Tree geometry.
        family: Test functions; defaults to the versioned ``tf-1`` family.
        balls: Balls for ``poincare`` and ``volume_doubling``.
        r_max: Scan radius for balls and doubling constants.
        delta: Exponent for ``nash``.
        a_values: Scales for ``log_sobolev``.
    """
    if kind not in FUNCTIONAL_KINDS:
        raise DomainError(f"unknown inequality kind {kind!r}")
    top = r_max
    if top is None:
        top = spec.horizon_radius if math.isfinite(spec.horizon_radius) else max(spec.radii[-1] * 2, 16.0)
    digest = f"{FAMILY_VERSION}:{spec.name}"
    details: list[tuple[str, float]] = []

    if kind in ("poincare", "volume_doubling"):
        balls = list(balls) if balls is not None else default_balls(spec, top)
        if not balls:
            raise DomainError("empty ball family")
        if any(r <= 0 for _, r in balls):
            raise DomainError("degenerate ball (r = 0)")
        if kind == "poincare":
            family = list(family) if family is not None else local_family()
            margins, worst_ratio = [], 0.0
            for z, r in balls:
                for fn in family:
                    lhs, rhs = poincare_ratio(spec, fn, z, r)
                    if rhs == 0.0:
                        # f is constant on the ball: both sides vanish
                        continue
                    margins.append((rhs - lhs) / rhs)
                    worst_ratio = max(worst_ratio, lhs / rhs)
            return _report(kind, margins, ABS_TOL, digest, empirical_constant=4 * worst_ratio,
                           details=(("max_ratio", worst_ratio),))
        ok, c0 = doubling_holds(spec, top)
        if not ok:
            raise PreconditionError("doubling condition g_0(2r) <= C_0 g_0(r) not satisfied on scan range")
        margins, ratio = [], 0.0
        for z, r in balls:
            v, v2 = ball_volume(spec, z, r), ball_volume(spec, z, r / 2)
            margins.append((2 * c0 * v2 - v) / (2 * c0 * v2))
            ratio = max(ratio, v / v2)
        return _report(kind, margins, ABS_TOL, digest, empirical_constant=ratio,
                       details=(("doubling_constant", c0), ("two_c0", 2 * c0)))

    family = list(family) if family is not None else global_family()
    if kind == "nash":
        S = sobolev_for(spec, delta)
        if S <= 0:
            raise PreconditionError("Sobolev-type condition fails: the tail integral of 1/g_0 diverges")
        St = sobolev_tilde_factor(delta) * S
        margins = []
        for fn in family:
            d2, l1, l2 = _global_integrals(spec, fn)
            lhs = math.sqrt(d2) * l1 ** (2 / delta)
            rhs = math.sqrt(St) * l2 ** ((delta + 2) / (2 * delta))
            margins.append((lhs - rhs) / lhs)
        return _report(kind, margins, ABS_TOL, digest, empirical_constant=St,
                       details=(("sobolev_S", S), ("sobolev_S_tilde", St)))

    margins = []
    for fn in family:
        d2, _, l2 = _global_integrals(spec, fn)
        ent = weighted_integral(
            spec, lambda s: xlogy(fn.f(s) ** 2, fn.f(s) ** 2 / l2), 0.0, fn.support, fn.kinks
        )
        for a in a_values:
            lhs = a**2 / math.pi * d2
            rhs = ent + (1 + math.log(a / 2)) * l2
            margins.append((lhs - rhs) / l2)
    return _report(kind, margins, ABS_TOL, digest, empirical_constant=None,
                   details=(("a_min", float(min(a_values))), ("a_max", float(max(a_values)))))
