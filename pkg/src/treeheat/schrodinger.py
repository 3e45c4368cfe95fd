"""Negative-eigenvalue moments of ``-Δ - V`` on trees and their upper bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import integrate, special

from .errors import DomainError, PreconditionError
from .kernel import GraphOracle
from .radial import SolverConfig, discretize_radial, lambda_closed_form, radial_grid
from .tree import TreeSpec, generation_multiplicity

__all__ = [
    "POTENTIAL_KINDS",
    "RHS_KINDS",
    "ZERO_TOLERANCE",
    "PotentialSpec",
    "radial_power",
    "radial_table",
    "per_edge",
    "zero_potential",
    "MomentResult",
    "BoundConstants",
    "RegionPartition",
    "BoundRhs",
    "negative_moments",
    "riesz_moment",
    "riesz_crosscheck",
    "exponential_integral_factor",
    "bound_constants",
    "two_term_item",
    "partition_regions",
    "lieb_time_integral",
    "bound_rhs",
    "split_check",
    "hardy_constant",
    "small_beta_scan",
    "homogeneous_shift",
]

POTENTIAL_KINDS = ("radial_power", "radial_table", "per_edge", "zero")
RHS_KINDS = ("lieb", "two_term", "lt_ext", "half_sharp", "half_small", "homogeneous")
ZERO_TOLERANCE = 1e-8
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_TAIL_DECADES = 6
_CELLS_PER_DECADE = 80


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class PotentialSpec:
    """A nonnegative potential on the tree.

    Attributes:
        kind: ``radial_power``, ``radial_table``, ``per_edge`` or ``zero``.
        params: ``(v0, p)`` for ``radial_power``; unused otherwise.
        breaks: Table radii for ``radial_table`` (values are piecewise
            constant on ``[breaks[i], breaks[i+1])`` and zero outside).
        values: Table values for ``radial_table``.
        edges: For ``per_edge``, ``path -> (offsets, values)`` with offsets
            measured from the edge start and linear interpolation between.
        nonnegative: False if any tabulated value was negative; only the
            positive part is used.
    """

    kind: str
    params: tuple = ()
    breaks: tuple = ()
    values: tuple = ()
    edges: tuple = ()
    nonnegative: bool = True

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise DomainError(f"unknown potential kind {self.kind!r}")
        if self.kind == "radial_power":
            if len(self.params) != 2:
                raise DomainError("radial_power needs (v0, p)")
            v0, p = self.params
            if v0 < 0 or p < 0:
                raise DomainError("radial_power needs v0 >= 0 and p >= 0")
        if self.kind == "radial_table":
            b = np.asarray(self.breaks, dtype=float)
            if len(self.values) != len(b) - 1 or len(b) < 2:
                raise DomainError("radial_table needs len(values) == len(breaks) - 1")
            if np.any(np.diff(b) <= 0) or b[0] < 0:
                raise DomainError("radial_table breaks must be increasing and nonnegative")

    @property
    def is_radial(self) -> bool:
        return self.kind != "per_edge"

    def radial(self, r) -> np.ndarray:
        """Values at radius ``r``; an interior table jump evaluates to the mean of both sides."""
        r = np.asarray(r, dtype=float)
        if self.kind == "zero":
            return np.zeros(r.shape)
        if self.kind == "radial_power":
            v0, p = self.params
            return v0 * (1.0 + r) ** (-p)
        if self.kind == "radial_table":
            b = np.asarray(self.breaks)
            v = np.concatenate(([0.0], np.maximum(self.values, 0.0), [0.0]))
            right = v[np.searchsorted(b, r, side="right")]
            left = v[np.searchsorted(b, r, side="left")]
            # the root is the edge of the domain, not a jump
            return np.where(r <= 0, right, 0.5 * (left + right))
        raise DomainError("a per-edge potential has no radial profile")

    def on_edge(self, path: tuple, radii: np.ndarray, start: float) -> np.ndarray:
        """Values on the edge ``path`` at ``radii``; ``start`` is the edge's inner radius."""
        radii = np.asarray(radii, dtype=float)
        if self.is_radial:
            return self.radial(radii)
        table = dict(self.edges)
        if path not in table:
            return np.zeros(radii.shape)
        off, val = table[path]
        return np.maximum(np.interp(radii - start, off, val, left=0.0, right=0.0), 0.0)

    def scaled(self, c: float) -> "PotentialSpec":
        """The potential ``c V`` for ``c >= 0``."""
        if c < 0:
            raise DomainError("scale factor must be nonnegative")
        if self.kind == "radial_power":
            return replace(self, params=(c * self.params[0], self.params[1]))
        if self.kind == "radial_table":
            return replace(self, values=tuple(c * v for v in self.values))
        if self.kind == "per_edge":
            return replace(self, edges=tuple((p, (o, tuple(c * x for x in v))) for p, (o, v) in self.edges))
        return self

    def label(self) -> str:
        if self.kind == "radial_power":
            return f"radial_power({self.params[0]:g},{self.params[1]:g})"
        return self.kind


def radial_power(v0: float, p: float) -> PotentialSpec:
    """``V(x) = v0 (1 + |x|)^(-p)``."""
    return PotentialSpec("radial_power", params=(float(v0), float(p)))


def radial_table(breaks: Sequence[float], values: Sequence[float]) -> PotentialSpec:
    """Piecewise-constant radial potential, zero outside the table."""
    vals = tuple(float(v) for v in values)
    return PotentialSpec("radial_table", breaks=tuple(float(b) for b in breaks), values=vals,
                         nonnegative=all(v >= 0 for v in vals))


def per_edge(table: Mapping[tuple, tuple[Sequence[float], Sequence[float]]]) -> PotentialSpec:
    """Potential tabulated on individual edges (oracle route only)."""
    items = []
    neg = False
    for path in sorted(table):
        off, val = table[path]
        off = tuple(float(o) for o in off)
        val = tuple(float(v) for v in val)
        if len(off) != len(val) or len(off) == 0:
            raise DomainError(f"edge {path}: offsets and values must have equal nonzero length")
        neg |= any(v < 0 for v in val)
        items.append((tuple(path), (off, val)))
    return PotentialSpec("per_edge", edges=tuple(items), nonnegative=not neg)


def zero_potential() -> PotentialSpec:
    return PotentialSpec("zero")


# ---------------------------------------------------------------------------
# moments


@dataclass(frozen=True)
class MomentResult:
    """Outcome of a moment computation.

    Attributes:
        value: ``Σ |λ|^γ`` over eigenvalues below ``-ZERO_TOLERANCE``
            (a count when ``γ = 0``).
        inclusive: Same sum with the flagged near-zero eigenvalues included.
        eigenvalues: Negative eigenvalues, repeated by multiplicity, ascending.
        flagged: Eigenvalues within the tolerance of zero, with multiplicity.
        route: ``radial`` or ``oracle``.
        gamma: The moment exponent.
    """

    value: float
    inclusive: float
    eigenvalues: tuple
    flagged: tuple
    route: str
    gamma: float

    def __iter__(self):
        yield self.value
        yield list(self.eigenvalues)


def _moment(lams: np.ndarray, gamma: float) -> float:
    if lams.size == 0:
        return 0.0
    return float(lams.size) if gamma == 0 else float(np.sum(np.abs(lams) ** gamma))


def _radial_channels(spec: TreeSpec, cfg: SolverConfig) -> list[int]:
    return [l for l in range(spec.horizon + 1) if spec.radii[l] < cfg.domain_cut]


def negative_moments(
    spec: TreeSpec,
    V: PotentialSpec,
    gamma: float,
    cfg: SolverConfig,
    *,
    route: str = "radial",
    shift: float = 0.0,
    max_generation: Optional[int] = None,
) -> MomentResult:
    """Moments of the negative eigenvalues of ``-Δ - shift - V``.

    Args:
        spec: Tree geometry.
        V: Potential; per-edge potentials need ``route="oracle"``.
        gamma: Moment exponent ``>= 0``.
        cfg: Grid and truncation.
        route: ``radial`` (channel decomposition) or ``oracle`` (whole graph).
        shift: Spectral shift, e.g. the bottom of the spectrum on a homogeneous tree.
        max_generation: Depth of the oracle tree; defaults to every
            generation starting inside the cut.

    Returns:
        A :class:`MomentResult`.
    """
    if gamma < 0:
        raise DomainError("gamma must be >= 0")
    if route not in ("radial", "oracle"):
        raise DomainError(f"unknown route {route!r}")
    if route == "radial" and not V.is_radial:
        raise PreconditionError("a per-edge potential needs the whole-graph route")
    if V.kind == "zero" and shift == 0.0:
        return MomentResult(0.0, 0.0, (), (), route, gamma)

    levels: list[np.ndarray] = []
    if route == "radial":
        pot = None if V.kind == "zero" else V.radial
        for l in _radial_channels(spec, cfg):
            lam = discretize_radial(spec, l, cfg, pot).eigenvalues - shift
            lam = lam[lam < ZERO_TOLERANCE]
            if lam.size:
                levels.append(np.repeat(lam, generation_multiplicity(spec, l)))
    else:
        G = max_generation if max_generation is not None else len(_radial_channels(spec, cfg)) - 1
        radii = spec.radii

        def edge_pot(path, seg):
            return V.on_edge(path, seg, radii[len(path)])

        oracle = GraphOracle(spec, G, cfg, potential=None if V.kind == "zero" else edge_pot)
        lam = oracle.eigenvalues - shift
        levels.append(lam[lam < ZERO_TOLERANCE])
    lam = np.sort(np.concatenate(levels)) if levels else np.zeros(0)
    near = np.abs(lam) <= ZERO_TOLERANCE
    neg, flagged = lam[~near], lam[near]
    return MomentResult(
        value=_moment(neg, gamma),
        inclusive=_moment(lam, gamma),
        eigenvalues=tuple(float(x) for x in neg),
        flagged=tuple(float(x) for x in flagged),
        route=route,
        gamma=float(gamma),
    )


def riesz_moment(eigenvalues: Sequence[float], gamma: float) -> float:
    """``γ ∫_0^∞ τ^(γ-1) N(τ) dτ`` with ``N(τ) = #{λ < -τ}``, by adaptive quadrature."""
    if gamma <= 0:
        raise DomainError("the Riesz identity needs gamma > 0")
    mags = np.sort(np.abs([x for x in eigenvalues if x < 0]))
    if mags.size == 0:
        return 0.0
    total = 0.0
    lo = 0.0
    for k, hi in enumerate(mags):
        if hi > lo:
            count = mags.size - k
            if lo == 0.0:
                piece, _ = integrate.quad(lambda t: 1.0, 0.0, hi, weight="alg", wvar=(gamma - 1, 0))
            else:
                piece, _ = integrate.quad(lambda t: t ** (gamma - 1), lo, hi, epsabs=0, epsrel=1e-13)
            total += count * piece
        lo = hi
    return gamma * total


def riesz_crosscheck(eigenvalues: Sequence[float], gamma: float) -> float:
    """Relative discrepancy between the Riesz integral and the direct moment."""
    direct = _moment(np.array([x for x in eigenvalues if x < 0]), gamma)
    quad = riesz_moment(eigenvalues, gamma)
    if direct == 0.0:
        return abs(quad)
    return abs(quad - direct) / direct


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class BoundConstants:
    """Constants entering the moment bounds; unset entries are NaN."""

    kind: str
    gamma: float
    beta: float = math.nan
    a: float = math.nan
    d: float = math.nan
    delta: float = math.nan
    M: float = math.nan
    L: float = math.nan
    L_tilde: float = math.nan
    K: float = math.nan
    C_envelope: float = math.nan
    base_gamma: float = math.nan


def exponential_integral_factor(beta: float) -> float:
    """``e^{-β} - β E_1(β)``, positive for every ``β > 0``."""
    if beta <= 0:
        raise DomainError("beta must be positive")
    val = math.exp(-beta) - beta * float(special.exp1(beta))
    assert val > 0, "e^-b - b E1(b) must be positive"
    return val


def _M(beta: float, gamma: float) -> float:
    return math.gamma(gamma + 1) / exponential_integral_factor(beta)


def two_term_item(gamma: float, d: float) -> int:
    """Which two-term estimate applies: 1 for ``γ > 1/2``, 2 for the low range."""
    if d <= 1:
        raise DomainError("two-term estimates need d > 1")
    if gamma > 0.5:
        return 1
    if d <= 2 and 1 - d / 2 < gamma <= 0.5:
        return 2
    if d > 2 and 0 <= gamma <= 0.5:
        return 2
    raise DomainError(f"gamma={gamma} outside the admissible range for d={d}")


def _two_term(beta: float, gamma: float, d: float, C: float) -> tuple[float, float, float]:
    two_term_item(gamma, d)
    M = _M(beta, gamma)
    if gamma == 0.5:
        L = 2 ** ((d + 5) / 2) * M * C * beta ** ((1 - d) / 2) / (d * d - 1)
        return M, L, 2.0
    s = gamma + d / 2
    L = C * M * beta ** (1 - s) / ((s - 1) * s)
    inner = math.pi**-0.5 / abs(gamma - 0.5) + C / (s - 1)
    # below 1/2 the β power is absorbed into V g_0^{(1-2γ)/(d-1)}
    Lt = M * inner * (beta ** (0.5 - gamma) if gamma > 0.5 else 1.0)
    return M, L, Lt


def _check_lt_range(a: float, d: float, gamma: float) -> None:
    if d <= 1:
        raise DomainError("the extended estimate needs d > 1")
    if d <= 2 and not 0 <= a < d - 1:
        raise DomainError(f"a={a} outside [0, d-1) for d={d} (a = d-1 is not covered)")
    if d > 2 and not 0 <= a <= 1:
        raise DomainError(f"a={a} outside [0, 1] for d={d}")
    if gamma < (1 - a) / 2 - 1e-15:
        raise DomainError(f"gamma={gamma} below (1-a)/2")


def _golden_min(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10) -> float:
    phi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, e = b - phi * (b - a), a + phi * (b - a)
    fc, fe = f(c), f(e)
    while b - a > tol:
        if fc <= fe:
            b, e, fe = e, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + phi * (b - a)
            fe = f(e)
    return 0.5 * (a + b)


def _lt_base(a: float, d: float, C: float) -> tuple[float, float]:
    g0 = (1 - a) / 2

    def obj(logb):
        beta = math.exp(logb)
        _, L, Lt = _two_term(beta, g0, d, C)
        return max(beta ** ((d - a - 1) / 2) * L, Lt)

    grid = np.linspace(math.log(1e-8), math.log(50.0), 81)
    vals = [obj(x) for x in grid]
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    best = _golden_min(obj, lo, hi)
    if obj(best) > vals[k]:
        best = grid[k]
    return obj(best), math.exp(best)


def _lift(K: float, gamma0: float, gamma: float, q: float) -> float:
    """Raise a bound with exponent ``q`` on ``V`` from ``γ0`` to ``γ > γ0``."""
    if gamma == gamma0:
        return K
    x = gamma - gamma0
    return K * math.exp(special.betaln(x, q + 1) - special.betaln(x, gamma0 + 1))


def bound_constants(
    kind: str,
    *,
    gamma: float,
    beta: float = math.nan,
    a: float = 0.0,
    d: float = math.nan,
    C_envelope: float = math.nan,
) -> BoundConstants:
    """Evaluate ``M``, the two-term pair ``(L, L̃)`` or the extended constant ``K``.

    Args:
        kind: ``M``, ``two_term`` or ``lt_ext``.
        gamma: Moment exponent.
        beta: Splitting level (not used by ``lt_ext``, which optimizes it).
        a: Weight exponent for ``lt_ext``.
        d: Dimension.
        C_envelope: Constant of the ``t^{-d/2} g_0`` kernel bound.

    Returns:
        The filled :class:`BoundConstants`.
    """
    if gamma < 0:
        raise DomainError("gamma must be >= 0")
    if kind == "M":
        return BoundConstants("M", gamma, beta=beta, M=_M(beta, gamma))
    if not (C_envelope > 0):
        raise DomainError("C_envelope must be a positive number")
    if kind == "two_term":
        M, L, Lt = _two_term(beta, gamma, d, C_envelope)
        return BoundConstants("two_term", gamma, beta=beta, d=d, M=M, L=L, L_tilde=Lt, C_envelope=C_envelope)
    if kind == "lt_ext":
        _check_lt_range(a, d, gamma)
        g0 = (1 - a) / 2
        K0, b_opt = _lt_base(a, d, C_envelope)
        K = _lift(K0, g0, gamma, g0 + (a + 1) / 2)
        return BoundConstants("lt_ext", gamma, beta=b_opt, a=a, d=d, M=_M(b_opt, g0), K=K,
                              C_envelope=C_envelope, base_gamma=g0)
    raise DomainError(f"unknown constant kind {kind!r}")


# ---------------------------------------------------------------------------
# quadrature over the tree and the region partition


@dataclass(frozen=True)
class _Quadrature:
    r: np.ndarray  # nodes
    w: np.ndarray  # weights including the tree density
    v: np.ndarray  # potential at nodes
    g: np.ndarray  # g_0 at nodes
    cell: np.ndarray  # cell index of each node
    cells: np.ndarray  # (n_cells, 2) radial extent
    center_v: np.ndarray
    center_g: np.ndarray
    last_decade: np.ndarray  # node mask of the outermost tail decade


def _gl_nodes(edges: np.ndarray):
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    r = (0.5 * (lo + hi))[:, None] + half[:, None] * _GL_X[None, :]
    w = half[:, None] * _GL_W[None, :]
    cell = np.repeat(np.arange(lo.size), _GL_X.size)
    return r.ravel(), w.ravel(), cell


def _quadrature(spec: TreeSpec, V: PotentialSpec, cfg: SolverConfig) -> _Quadrature:
    if not V.is_radial:
        return _edge_quadrature(spec, V, cfg)
    cut = cfg.domain_cut
    inner = radial_grid(spec, cut, cfg.points_per_unit)
    top = cut * 10.0**_TAIL_DECADES
    tail = np.geomspace(cut, top, _TAIL_DECADES * _CELLS_PER_DECADE + 1)
    extra = [r for r in spec.radii if cut < r < top]
    if math.isfinite(spec.horizon_radius) and cut < spec.horizon_radius < top:
        extra.append(spec.horizon_radius)
    if V.kind == "radial_table":
        extra += [b for b in V.breaks if cut < b < top]
    edges = np.unique(np.concatenate([inner, tail, extra]))
    r, w, cell = _gl_nodes(edges)
    g = spec.density(r)
    with np.errstate(over="ignore", invalid="ignore"):
        w = w * g
    centers = 0.5 * (edges[:-1] + edges[1:])
    return _Quadrature(
        r=r, w=w, v=V.radial(r), g=g, cell=cell,
        cells=np.column_stack([edges[:-1], edges[1:]]),
        center_v=V.radial(centers), center_g=spec.density(centers),
        last_decade=r > top / 10,
    )


def _edge_quadrature(spec: TreeSpec, V: PotentialSpec, cfg: SolverConfig) -> _Quadrature:
    """Edge-by-edge quadrature for per-edge potentials; the edge measure is ``dr``."""
    rs, ws, vs, cells, extents, center_v = [], [], [], [], [], []
    n = 0
    for path, (off, _) in V.edges:
        l = len(path)
        if l > spec.horizon:
            raise DomainError(f"edge {path} lies beyond the horizon")
        start = spec.radii[l]
        end = start + off[-1]
        if l + 1 <= spec.horizon:
            end = min(end, spec.radii[l + 1])
        if end <= start:
            continue
        m = max(1, math.ceil((end - start) * cfg.points_per_unit))
        e = np.linspace(start, end, m + 1)
        r, w, cell = _gl_nodes(e)
        rs.append(r)
        ws.append(w)
        vs.append(V.on_edge(path, r, start))
        cells.append(cell + n)
        extents.append(np.column_stack([e[:-1], e[1:]]))
        center_v.append(V.on_edge(path, 0.5 * (e[:-1] + e[1:]), start))
        n += m
    if not rs:
        z = np.zeros(0)
        return _Quadrature(z, z, z, z, z.astype(int), np.zeros((0, 2)), z, z, z.astype(bool))
    r = np.concatenate(rs)
    ext = np.concatenate(extents)
    return _Quadrature(
        r=r, w=np.concatenate(ws), v=np.concatenate(vs), g=spec.g0(r),
        cell=np.concatenate(cells), cells=ext,
        center_v=np.concatenate(center_v), center_g=spec.g0(ext.mean(axis=1)),
        last_decade=np.zeros(r.shape, dtype=bool),
    )


@dataclass(frozen=True)
class RegionPartition:
    """Split of the quadrature cells into ``Γ_β^-`` and ``Γ_β^+``.

    Attributes:
        cells: ``(n, 2)`` radial extent of each cell.
        minus: True where ``V g_0^{2/(d-1)} < β`` at the cell center.
        measure_minus: Tree measure of the ``Γ_β^-`` cells.
        measure_plus: Tree measure of the ``Γ_β^+`` cells.
        boundaries: Radii where the classification flips (radial potentials).
        beta: Splitting level.
        d: Dimension used in the exponent.
    """

    cells: np.ndarray = field(repr=False)
    minus: np.ndarray = field(repr=False)
    measure_minus: float
    measure_plus: float
    boundaries: tuple
    beta: float
    d: float

    def indicator(self, r) -> np.ndarray:
        """True where ``r`` falls in a ``Γ_β^-`` cell (radial partitions)."""
        r = np.asarray(r, dtype=float)
        idx = np.clip(np.searchsorted(self.cells[:, 1], r, side="left"), 0, len(self.cells) - 1)
        return self.minus[idx]


def _region_value(v, g, d):
    with np.errstate(over="ignore", invalid="ignore"):
        return np.where(v > 0, v * g ** (2.0 / (d - 1)), 0.0)


def _partition(q: _Quadrature, beta: float, d: float, radial: bool, spec, V) -> RegionPartition:
    minus = _region_value(q.center_v, q.center_g, d) < beta
    node_minus = minus[q.cell]
    w = np.nan_to_num(q.w, posinf=np.inf)
    m_minus = float(np.sum(w[node_minus]))
    m_plus = float(np.sum(w[~node_minus]))
    flips = []
    if radial and minus.size > 1:
        f = lambda r: float(_region_value(V.radial(r), spec.density(r), d)) - beta  # noqa: E731
        for k in np.nonzero(minus[1:] != minus[:-1])[0]:
            a, b = q.cells[k, 0], q.cells[k + 1, 1]
            fa, fb = f(a), f(b)
            if fa * fb > 0:
                flips.append(float(q.cells[k, 1]))
                continue
            for _ in range(200):
                m = 0.5 * (a + b)
                if b - a <= 1e-13 * max(1.0, abs(m)):
                    break
                fm = f(m)
                if (fm < 0) == (fa < 0):
                    a, fa = m, fm
                else:
                    b = m
            flips.append(0.5 * (a + b))
    return RegionPartition(q.cells, minus, m_minus, m_plus, tuple(flips), float(beta), float(d))


def partition_regions(
    spec: TreeSpec, V: PotentialSpec, beta: float, d: float, cfg: Optional[SolverConfig] = None
) -> RegionPartition:
    """Classify each quadrature cell by ``V g_0^{2/(d-1)}`` at its center.

    Boundary radii are located by bisection between cells whose
    classification differs.
    """
    if d <= 1:
        raise DomainError("the region partition needs d > 1")
    if beta <= 0:
        raise DomainError("beta must be positive")
    cfg = cfg or SolverConfig()
    q = _quadrature(spec, V, cfg)
    return _partition(q, beta, d, V.is_radial, spec, V)


# ---------------------------------------------------------------------------
# right-hand sides


@dataclass(frozen=True)
class BoundRhs:
    """Value of a bound's right-hand side.

    Attributes:
        kind: Which bound.
        value: The right-hand side, ``inf`` when an integral diverges.
        divergent: True if the value is infinite for lack of decay.
        constants: The constants used.
    """

    kind: str
    value: float
    divergent: bool
    constants: Optional[BoundConstants] = None

    def __float__(self) -> float:
        return self.value


def _integrate(q: _Quadrature, integrand: np.ndarray) -> tuple[float, bool]:
    with np.errstate(over="ignore", invalid="ignore"):
        terms = np.where(integrand > 0, q.w * integrand, 0.0)
    total = float(np.sum(terms))
    if not math.isfinite(total):
        return math.inf, True
    tail = float(np.sum(terms[q.last_decade]))
    if total > 0 and tail > 1e-3 * total:
        return math.inf, True
    return total, False


def _power(v: np.ndarray, e: float) -> np.ndarray:
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        return np.where(v > 0, np.abs(v) ** e, 0.0)


def _antiderivative(t, e):
    """``∫ t^(e-1) dt``."""
    if e == 0:
        return np.log(t)
    return t**e / e


def lieb_time_integral(v, g, beta: float, gamma: float, d: float, C: float) -> np.ndarray:
    """``∫_0^∞ k_bound(t) t^{-1-γ} (tV - β)_+ dt`` pointwise, in closed form.

    The kernel bound is ``(πt)^{-1/2}`` for ``t < g_0^{2/(d-1)}`` and
    ``C t^{-d/2} g_0`` beyond (only the former when ``d <= 1``).
    """
    v = np.asarray(v, dtype=float)
    g = np.broadcast_to(np.asarray(g, dtype=float), v.shape)
    out = np.zeros(v.shape)
    pos = v > 0
    if not np.any(pos):
        return out
    vp, gp = v[pos], g[pos]
    t0 = beta / vp
    with np.errstate(over="ignore"):
        T = gp ** (2.0 / (d - 1)) if d > 1 else np.full(vp.shape, np.inf)
    split = np.maximum(T, t0)

    def piece(alpha, lo, hi):
        # ∫_lo^hi t^{-alpha} (t V - β) dt, with hi possibly infinite
        fin = np.isfinite(hi)
        res = np.zeros(lo.shape)
        if alpha <= 2 and np.any(~fin):
            res[~fin] = np.inf
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            F = lambda t: vp * _antiderivative(t, 2 - alpha) - beta * _antiderivative(t, 1 - alpha)  # noqa: E731
            Flo = F(lo)
            hi_safe = np.where(fin, hi, 1.0)
            Fhi = np.where(fin, F(hi_safe), 0.0)
        if alpha > 2:
            res = np.where(fin, Fhi - Flo, -Flo)
        else:
            res = np.where(fin, Fhi - Flo, res)
        return np.where(hi > lo, res, 0.0)

    small = piece(1.5 + gamma, t0, split) / math.sqrt(math.pi)
    total = small
    if d > 1:
        big = piece(1 + d / 2 + gamma, split, np.full(vp.shape, np.inf))
        total = total + C * gp * np.where(np.isfinite(T), big, 0.0)
    out[pos] = total
    return out


def bound_rhs(
    kind: str,
    spec: TreeSpec,
    V: PotentialSpec,
    params: Mapping[str, float],
    cfg: Optional[SolverConfig] = None,
) -> BoundRhs:
    """Right-hand side of a moment bound by quadrature over the tree measure.

    Args:
        kind: ``lieb``, ``two_term``, ``lt_ext``, ``half_sharp``,
            ``half_small`` or ``homogeneous``.
        spec: Tree geometry.
        V: Potential.
        params: ``gamma`` plus, as the kind requires, ``beta``, ``d``,
            ``a`` and ``C`` (the kernel constant of the ``t^{-d/2} g_0`` bound).
        cfg: Sets the quadrature cells (one cell per grid step inside the cut).

    Returns:
        A :class:`BoundRhs`.
    """
    if kind not in RHS_KINDS:
        raise DomainError(f"unknown bound kind {kind!r}")
    cfg = cfg or SolverConfig()
    gamma = float(params["gamma"])
    if gamma < 0:
        raise DomainError("gamma must be >= 0")
    if V.kind == "zero":
        return BoundRhs(kind, 0.0, False)
    q = _quadrature(spec, V, cfg)
    v, g = q.v, q.g

    if kind == "half_sharp":
        if gamma < 0.5:
            raise DomainError("the sharp estimate needs gamma >= 1/2")
        K = _lift(1.0, 0.5, gamma, 1.0)
        val, div = _integrate(q, K * _power(v, gamma + 0.5))
        return BoundRhs(kind, val, div, BoundConstants(kind, gamma, K=K, base_gamma=0.5))

    if kind == "homogeneous":
        if spec.tail != "exponential":
            raise PreconditionError("the shifted estimate needs a homogeneous tree")
        beta, C = float(params["beta"]), float(params["C"])
        M = _M(beta, gamma)
        L = M * C * beta ** (-gamma - 0.5) / ((gamma + 0.5) * (gamma + 1.5))
        val, div = _integrate(q, L * _power(v, gamma + 1.5) * (1 + q.r) ** 2)
        return BoundRhs(kind, val, div, BoundConstants(kind, gamma, beta=beta, M=M, L=L, C_envelope=C))

    d = float(params["d"])
    C = float(params["C"])
    if kind == "lieb":
        beta = float(params["beta"])
        M = _M(beta, gamma)
        val, div = _integrate(q, M * lieb_time_integral(v, g, beta, gamma, d, C))
        return BoundRhs(kind, val, div, BoundConstants(kind, gamma, beta=beta, d=d, M=M, C_envelope=C))

    if d <= 1:
        raise DomainError(f"{kind} needs d > 1")
    if kind == "lt_ext":
        a = float(params.get("a", 0.0))
        consts = bound_constants("lt_ext", gamma=gamma, a=a, d=d, C_envelope=C)
        with np.errstate(over="ignore"):
            f = consts.K * _power(v, gamma + (a + 1) / 2) * g ** (a / (d - 1))
        val, div = _integrate(q, f)
        return BoundRhs(kind, val, div, consts)

    beta = float(params["beta"])
    part = _partition(q, beta, d, V.is_radial, spec, V)
    minus = part.minus[q.cell]
    if kind == "half_small":
        M = _M(beta, 0.5)
        coef = 4 * M * C * beta ** ((1 - d) / 2) / (d * d - 1)
        val, div = _integrate(q, np.where(minus, coef * _power(v, (1 + d) / 2), 0.0))
        return BoundRhs(kind, val, div, BoundConstants(kind, 0.5, beta=beta, d=d, M=M, L=coef, C_envelope=C))

    consts = bound_constants("two_term", gamma=gamma, beta=beta, d=d, C_envelope=C)
    item = two_term_item(gamma, d)
    low = consts.L * _power(v, gamma + d / 2)
    with np.errstate(over="ignore", invalid="ignore"):
        if item == 1:
            high = consts.L_tilde * _power(v, gamma + 0.5)
        else:
            high = consts.L_tilde * v * g ** ((1 - 2 * gamma) / (d - 1))
    val, div = _integrate(q, np.where(minus, low, high))
    return BoundRhs(kind, val, div, consts)


# ---------------------------------------------------------------------------
# auxiliary checks


def _split_potentials(spec: TreeSpec, V: PotentialSpec, beta: float, d: float):
    if not V.is_radial:
        raise PreconditionError("the split check needs a radial potential")

    def inner(r):
        v = V.radial(r)
        return np.where(_region_value(v, spec.density(r), d) < beta, 2 * v, 0.0)

    def outer(r):
        v = V.radial(r)
        return np.where(_region_value(v, spec.density(r), d) < beta, 0.0, 2 * v)

    return inner, outer


def _moment_of(spec, fn, gamma, cfg) -> float:
    total = []
    for l in _radial_channels(spec, cfg):
        lam = discretize_radial(spec, l, cfg, fn).eigenvalues
        lam = lam[lam < -ZERO_TOLERANCE]
        total.append(np.repeat(lam, generation_multiplicity(spec, l)))
    lam = np.concatenate(total) if total else np.zeros(0)
    return _moment(lam, gamma)


def split_check(
    spec: TreeSpec, V: PotentialSpec, gamma: float, beta: float, d: float, cfg: SolverConfig
) -> tuple[float, float, float]:
    """``(lhs, inner, outer)`` for ``tr(-Δ-V)^γ ≤ tr(-Δ-2V_<)^γ + tr(-Δ-2V_>)^γ``.

    ``V_<`` and ``V_>`` are ``V`` restricted to the two partition regions.
    """
    inner, outer = _split_potentials(spec, V, beta, d)
    lhs = negative_moments(spec, V, gamma, cfg).value
    return lhs, _moment_of(spec, inner, gamma, cfg), _moment_of(spec, outer, gamma, cfg)


def small_beta_scan(
    spec: TreeSpec,
    V: PotentialSpec,
    gamma: float,
    d: float,
    cfg: SolverConfig,
    betas: Sequence[float],
) -> tuple[float, list[tuple[float, float, float, bool]]]:
    """Test the reduced bound ``tr(-Δ-V)^γ ≤ tr(-Δ-2V_>)^γ`` over ``betas``.

    The reduced bound drops the ``Γ_β^-`` term of the split. Returns the largest
    scanned ``β`` such that the reduced bound holds at it and every smaller
    scanned value (0 if it fails at the smallest), with the rows
    ``(β, lhs, reduced_rhs, holds)``.
    """
    lhs = negative_moments(spec, V, gamma, cfg).value
    rows = []
    for beta in sorted(betas):
        _, outer = _split_potentials(spec, V, beta, d)
        rhs = _moment_of(spec, outer, gamma, cfg)
        rows.append((float(beta), lhs, rhs, lhs <= rhs * (1 + 1e-9)))
    threshold = 0.0
    for beta, _, _, ok in rows:
        if not ok:
            break
        threshold = beta
    return threshold, rows


def _lowest(spec: TreeSpec, cfg: SolverConfig, c: float) -> float:
    one = replace(cfg, n_modes=1)
    pot = lambda r: c / (1 + r * r)  # noqa: E731
    return min(float(discretize_radial(spec, l, one, pot).eigenvalues[0]) for l in _radial_channels(spec, cfg))


def hardy_constant(spec: TreeSpec, cfg: SolverConfig, tol: float = 1e-4, c_max: float = 64.0) -> float:
    """Largest ``C`` with ``λ_1(-Δ - C/(1+|x|^2)) >= 0`` on the discretization, by bisection."""
    lo, hi = 0.0, c_max
    if _lowest(spec, cfg, hi) >= 0:
        return hi
    while hi - lo > tol * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if _lowest(spec, cfg, mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


def homogeneous_shift(spec: TreeSpec) -> float:
    """Bottom of the spectrum ``λ_b`` of a homogeneous tree."""
    if spec.tail != "exponential":
        raise PreconditionError("the spectral shift needs a homogeneous tree")
    return lambda_closed_form(int(spec.tail_params[0]))[0]
