"""Symmetric rooted metric trees and their purely geometric quantities.

A symmetric tree is fixed by the vertex radii ``r_0 = 0 < r_1 < ...`` and the
forward branching numbers ``b_0 = 1, b_1, b_2, ...``.  Everything else (the
branching functions, ball volumes, doubling and dimension constants, the
Sobolev-type constant of the weighted half-line) is derived from these two
sequences.

Conventions
-----------
* ``g_0`` is right-continuous on the half-open pieces ``(r_l, r_{l+1}]`` and
  ``g_0(0) = 1``.
* ``g_l`` (``l >= 1``) follows the left-closed pieces ``[r_n, r_{n+1})``.
* Beyond ``horizon_radius`` a tree is continued by its tail model, which is
  used only for integrals that run to infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, HorizonError

__all__ = [
    "TreeSpec",
    "PointAddress",
    "GeometryReport",
    "half_line",
    "explicit_tree",
    "homogeneous_tree",
    "dyadic_tree",
    "branching_function",
    "generation_multiplicity",
    "ball_volume",
    "sobolev_constant",
    "sobolev_tilde_factor",
    "geometry_scan",
]

# Radii of generated families are rounded to this lattice so that uniform
# grids with points_per_unit divisible by 8 contain every vertex.
RADIUS_LATTICE = 8


@dataclass(frozen=True)
class TreeSpec:
    """Symmetric rooted metric tree.

    Attributes:
        radii: Vertex distances ``r_0 = 0 < r_1 < ... < r_L``.
        branchings: Forward branching numbers ``b_0 = 1, b_1, ..., b_L``.
        horizon_radius: Radius up to which the explicit lists are exact.
            ``inf`` means the last generation of edges is infinitely long.
        tail: Continuation beyond ``horizon_radius``: ``"constant"``,
            ``"polynomial"`` (parameter ``d``) or ``"exponential"``
            (parameters ``b`` and edge length).
        tail_params: Parameters of the tail model.
        name: Label used in reports.
    """

    radii: tuple[float, ...]
    branchings: tuple[int, ...]
    horizon_radius: float = math.inf
    tail: str = "constant"
    tail_params: tuple[float, ...] = ()
    name: str = "tree"
    _cum: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        branchings = tuple(int(b) for b in self.branchings)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "branchings", branchings)
        if not radii or radii[0] != 0.0:
            raise DomainError("radii must start with r_0 = 0")
        if len(radii) != len(branchings):
            raise DomainError("radii and branchings must have equal length")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise DomainError("radii must be strictly increasing")
        if branchings[0] != 1:
            raise DomainError("b_0 must equal 1")
        if any(b < 2 for b in branchings[1:]):
            raise DomainError("b_l >= 2 is required for every l >= 1")
        if not self.horizon_radius > radii[-1]:
            raise DomainError("horizon_radius must exceed the last vertex radius")
        if self.tail not in ("constant", "polynomial", "exponential"):
            raise DomainError(f"unknown tail model {self.tail!r}")
        cum = [1]
        for b in branchings[1:]:
            cum.append(cum[-1] * b)
        object.__setattr__(self, "_cum", tuple(cum))

    @property
    def horizon(self) -> int:
        """Deepest vertex generation represented explicitly."""
        return len(self.radii) - 1

    def cumulative(self, l: int) -> int:
        """Exact product ``b_0 b_1 ... b_l``."""
        return self._cum[l]

    def generation_of(self, r: float) -> int:
        """Index ``L`` with ``r_L < r <= r_{L+1}`` (0 for ``r <= r_1``)."""
        return max(int(np.searchsorted(self.radii, r, side="left")) - 1, 0)

    def truncated(self, max_generation: int) -> "TreeSpec":
        """The tree with every vertex deeper than ``max_generation`` removed."""
        if max_generation >= self.horizon:
            return self
        return TreeSpec(
            self.radii[: max_generation + 1],
            self.branchings[: max_generation + 1],
            name=f"{self.name}|G{max_generation}",
        )

    def check_radius(self, r) -> None:
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise DomainError("radius must be nonnegative")
        if np.any(r > self.horizon_radius * (1 + 1e-12)):
            raise HorizonError(
                f"radius {float(np.max(r))} exceeds horizon {self.horizon_radius}"
            )

    # -- vectorized float helpers ------------------------------------------

    def _breaks(self) -> np.ndarray:
        return np.asarray(self.radii)

    def _values(self) -> np.ndarray:
        return np.array([float(c) for c in self._cum])

    def g0(self, r) -> np.ndarray:
        """Float values of ``g_0`` (right-continuous, ``g_0(0) = 1``)."""
        r = np.asarray(r, dtype=float)
        idx = np.clip(np.searchsorted(self._breaks(), r, side="left") - 1, 0, None)
        return self._values()[idx]

    def gl(self, l: int, r) -> np.ndarray:
        """Float values of ``g_0(r) / (b_0...b_l)`` for ``r > r_l``, else 0.

        This is the number of points at radius ``r`` inside one subtree
        ``Gamma_{v,m}`` with ``gen(v) = l``; it agrees with ``g_l`` away from
        the vertex radii.
        """
        r = np.asarray(r, dtype=float)
        out = self.g0(r) / float(self._cum[l])
        if l >= 1:
            out = np.where(r > self.radii[l], out, 0.0)
        return out

    def density(self, r) -> np.ndarray:
        """``g_0`` inside the horizon and the tail model beyond it."""
        r = np.asarray(r, dtype=float)
        out = self.g0(np.minimum(r, self.horizon_radius))
        beyond = r > self.horizon_radius
        if not np.any(beyond):
            return out
        h, g = self.horizon_radius, self._tail_g()
        if self.tail == "constant":
            tail = np.full(r.shape, g)
        elif self.tail == "polynomial":
            d = self.tail_params[0]
            tail = g * ((1 + r) / (1 + h)) ** (d - 1)
        else:
            b, tau = self.tail_params
            with np.errstate(over="ignore"):
                tail = b ** np.maximum(np.ceil(r / tau) - 1, 0)
        return np.where(beyond, tail, out)

    def volume(self, r) -> np.ndarray:
        """``W(r) = int_0^r g_0(s) ds`` exactly, tail model beyond the horizon."""
        r = np.asarray(r, dtype=float)
        breaks, vals = self._breaks(), self._values()
        cumw = np.concatenate([[0.0], np.cumsum(np.diff(breaks) * vals[:-1])])
        inside = np.minimum(r, self.horizon_radius)
        idx = np.clip(np.searchsorted(breaks, inside, side="left") - 1, 0, None)
        w = cumw[idx] + vals[idx] * (inside - breaks[idx])
        beyond = r > self.horizon_radius
        if np.any(beyond):
            w = np.where(beyond, w + self._tail_volume(r), w)
        return w

    def inverse_integral(self, a, b) -> np.ndarray:
        """``int_a^b ds / g_0(s)`` exactly, for ``a <= b <= horizon_radius``."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return self._inv_cum(b) - self._inv_cum(a)

    def _inv_cum(self, r) -> np.ndarray:
        breaks, vals = self._breaks(), self._values()
        cumi = np.concatenate([[0.0], np.cumsum(np.diff(breaks) / vals[:-1])])
        idx = np.clip(np.searchsorted(breaks, r, side="left") - 1, 0, None)
        return cumi[idx] + (r - breaks[idx]) / vals[idx]

    def inverse_tail(self, r) -> np.ndarray:
        """``int_r^inf ds / g_0(s)`` using the tail model; ``inf`` if divergent."""
        r = np.asarray(r, dtype=float)
        h = self.horizon_radius
        if math.isinf(h):
            return np.full(r.shape, math.inf)
        inside = np.minimum(r, h)
        return self.inverse_integral(inside, h) + self._tail_inverse(np.maximum(r, h))

    def _tail_g(self) -> float:
        return float(self.g0(self.horizon_radius))

    def _tail_volume(self, r):
        h, g = self.horizon_radius, self._tail_g()
        if self.tail == "constant":
            return g * (r - h)
        if self.tail == "polynomial":
            d = self.tail_params[0]
            return g * (1 + h) ** (1 - d) * ((1 + r) ** d - (1 + h) ** d) / d
        b, tau = self.tail_params
        return _exp_volume(r, b, tau) - _exp_volume(h, b, tau)

    def _tail_inverse(self, r):
        """``int_r^inf ds / g_0(s)`` for ``r >= horizon_radius``."""
        r = np.asarray(r, dtype=float)
        h, g = self.horizon_radius, self._tail_g()
        if self.tail == "constant":
            return np.full(r.shape, math.inf)
        if self.tail == "polynomial":
            d = self.tail_params[0]
            if d <= 2:
                return np.full(r.shape, math.inf)
            return (1 + h) ** (d - 1) * (1 + r) ** (2 - d) / (g * (d - 2))
        b, tau = self.tail_params
        return _exp_inverse_tail(r, b, tau)


def _exp_volume(r, b, tau):
    r = np.asarray(r, dtype=float)
    j = np.maximum(np.ceil(r / tau) - 1, 0)
    return tau * (b**j - 1) / (b - 1) + (r - j * tau) * b**j


def _exp_inverse_tail(r, b, tau):
    r = np.asarray(r, dtype=float)
    j = np.maximum(np.ceil(r / tau) - 1, 0)
    return ((j + 1) * tau - r) * b ** (-j) + tau * b ** (-j - 1) / (1 - 1 / b)


@dataclass(frozen=True)
class PointAddress:
    """A point of the tree: branch choices ``m_1..m_j`` and distance ``|x|``.

    A path of length ``j`` selects an edge spanning ``(r_j, r_{j+1}]``; the
    empty path is the root edge ``[0, r_1]``.
    """

    path: tuple[int, ...]
    radial: float

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(int(m) for m in self.path))
        object.__setattr__(self, "radial", float(self.radial))

    def validate(self, spec: TreeSpec) -> None:
        j = len(self.path)
        if j > spec.horizon:
            raise DomainError(f"path of length {j} is deeper than the tree")
        for i, m in enumerate(self.path, start=1):
            if not 1 <= m <= spec.branchings[i]:
                raise DomainError(f"branch choice m_{i}={m} outside 1..{spec.branchings[i]}")
        lo = spec.radii[j]
        hi = spec.radii[j + 1] if j + 1 <= spec.horizon else math.inf
        if j == 0:
            ok = 0.0 <= self.radial <= hi
        else:
            ok = lo < self.radial <= hi
        if not ok:
            raise DomainError(
                f"|x|={self.radial} is not on the edge selected by path {self.path}"
            )
        spec.check_radius(self.radial)

    def label(self) -> str:
        head = "-".join(str(m) for m in self.path) or "o"
        return f"{head}@{self.radial:.17g}"


def representative_point(spec: TreeSpec, r: float) -> PointAddress:
    """The point at distance ``r`` reached by always taking branch 1."""
    return PointAddress((1,) * spec.generation_of(r) if r > 0 else (), r)


def enumerate_points(spec: TreeSpec, r: float) -> list[PointAddress]:
    """All points at distance ``r`` from the root, in lexicographic order."""
    j = spec.generation_of(r) if r > 0 else 0
    paths: list[tuple[int, ...]] = [()]
    for i in range(1, j + 1):
        paths = [p + (m,) for p in paths for m in range(1, spec.branchings[i] + 1)]
    return [PointAddress(p, r) for p in paths]


# -- generators ---------------------------------------------------------------


def half_line() -> TreeSpec:
    """The half-line ``[0, inf)`` with no branching (``g_0 = 1``)."""
    return TreeSpec((0.0,), (1,), name="half-line")


def explicit_tree(radii: Sequence[float], branchings: Sequence[int], name: str = "explicit") -> TreeSpec:
    """Finite lists; the last generation of edges is infinitely long."""
    return TreeSpec(tuple(radii), tuple(branchings), name=name)


def homogeneous_tree(b: int, radius: float, edge: float = 1.0) -> TreeSpec:
    """Constant branching ``b`` and edge length ``edge``, explicit up to ``radius``."""
    if b < 2:
        raise DomainError("homogeneous trees need b >= 2")
    n = int(math.ceil(radius / edge - 1e-12))
    radii = [j * edge for j in range(n)]
    return TreeSpec(
        tuple(radii),
        (1,) + (b,) * (n - 1),
        horizon_radius=float(radius),
        tail="exponential",
        tail_params=(float(b), float(edge)),
        name=f"homogeneous-b{b}",
    )


def dyadic_tree(d: float, radius: float) -> TreeSpec:
    """Binary tree with ``g_0(r)`` comparable to ``(1+r)^(d-1)``.

    Vertex radii are ``2^(l/(d-1)) - 1`` rounded half-up to the nearest
    multiple of 1/8, then bumped by 1/8 where needed to stay strictly
    increasing.
    """
    if d <= 1:
        raise DomainError("dyadic trees need d > 1")
    radii = [0.0]
    l = 1
    while True:
        exact = 2.0 ** (l / (d - 1)) - 1.0
        r = math.floor(exact * RADIUS_LATTICE + 0.5) / RADIUS_LATTICE
        if r <= radii[-1]:
            r = radii[-1] + 1.0 / RADIUS_LATTICE
        if r >= radius:
            break
        radii.append(r)
        l += 1
    return TreeSpec(
        tuple(radii),
        (1,) + (2,) * (len(radii) - 1),
        horizon_radius=float(radius),
        tail="polynomial",
        tail_params=(float(d),),
        name=f"dyadic-d{d:g}",
    )


# -- operations -----------------------------------------------------------------


def branching_function(spec: TreeSpec, l: int, r: float) -> int:
    """Exact integer value of ``g_l(r)``."""
    if l < 0 or l > spec.horizon:
        raise DomainError(f"generation {l} outside 0..{spec.horizon}")
    if r < 0:
        raise DomainError("radius must be nonnegative")
    spec.check_radius(r)
    radii = spec.radii
    if l == 0:
        return 1 if r == 0 else spec.cumulative(spec.generation_of(r))
    if r < radii[l]:
        return 0
    n = int(np.searchsorted(radii, r, side="right")) - 1
    return spec.cumulative(n) // spec.cumulative(l)


def generation_multiplicity(spec: TreeSpec, l: int) -> int:
    """Number of channels ``(v, sigma)`` living at generation ``l``."""
    if l < 0 or l > spec.horizon:
        raise DomainError(f"generation {l} outside 0..{spec.horizon}")
    if l == 0:
        return 1
    return spec.cumulative(l - 1) * (spec.branchings[l] - 1)


def ball_volume(spec: TreeSpec, z: float, r: float) -> float:
    """Volume of ``B(z, r) = (max(z-r, 0), z+r)`` in ``([0, inf), g_0 dr)``."""
    if z < 0 or r <= 0:
        raise DomainError("ball_volume needs z >= 0 and r > 0")
    spec.check_radius(z + r)
    return float(spec.volume(z + r) - spec.volume(max(z - r, 0.0)))


def sobolev_tilde_factor(delta: float) -> float:
    """Factor turning ``S(delta)`` into the Nash constant ``tilde S(delta)``."""
    num = (delta - 2) ** (delta - 2) * delta**delta
    den = (2 * (delta - 1)) ** (2 * (delta - 1))
    return (num / den) ** (1 / delta)


def sobolev_constant(
    volume: Callable[[np.ndarray], np.ndarray],
    inverse_tail: Callable[[np.ndarray], np.ndarray],
    delta: float,
    grid: np.ndarray,
) -> tuple[float, float]:
    """Grid estimate of ``S(delta)``.

    The supremand is ``W(r)^((delta-2)/delta) * T(r)`` with ``W`` the volume
    and ``T`` the inverse tail integral of the weight.

    Returns:
        ``(S, argmax_r)``; ``S = 0`` when the tail integral diverges.
    """
    if delta <= 2:
        raise DomainError("delta must exceed 2")
    grid = np.asarray(grid, dtype=float)
    grid = grid[grid > 0]
    tail = inverse_tail(grid)
    if not np.all(np.isfinite(tail)):
        return 0.0, math.inf
    vals = volume(grid) ** ((delta - 2) / delta) * tail
    i = int(np.argmax(vals))
    return float(1.0 / vals[i]), float(grid[i])


@dataclass(frozen=True)
class GeometryReport:
    doubling_constant: float
    dim_inf: float
    dim_sup: float
    sobolev_S: float
    sobolev_S_tilde: float
    scan_range: tuple[float, float]
    grid_step: float
    d: float
    delta: float
    flags: tuple[str, ...] = ()
    limit_discrepancy: float = 0.0

    def csv_rows(self) -> list[tuple[str, str, float, float]]:
        """Rows ``(quantity, name, value, grid_step)``."""
        step = self.grid_step
        rows = [
            ("doubling", "doubling_constant", self.doubling_constant, step),
            ("dimension", "dim_inf", self.dim_inf, step),
            ("dimension", "dim_sup", self.dim_sup, step),
            ("sobolev", "sobolev_S", self.sobolev_S, step),
            ("sobolev", "sobolev_S_tilde", self.sobolev_S_tilde, step),
            ("scan", "r_min", self.scan_range[0], step),
            ("scan", "r_max", self.scan_range[1], step),
            ("scan", "limit_discrepancy", self.limit_discrepancy, step),
        ]
        rows += [("flag", f, 1.0, step) for f in self.flags]
        return rows


def _with_limits(points, lo, hi):
    pts = []
    for p in points:
        eps = 1e-12 * max(1.0, p)
        pts += [p - eps, p, p + eps]
    pts = np.asarray(pts)
    return pts[(pts > lo) & (pts <= hi)]


def geometry_scan(spec: TreeSpec, d: float, delta: float, r_max: float, n_scan: int = 400) -> GeometryReport:
    """Grid estimates of ``C_0``, the dimension bounds and ``S(delta)``.

    The grid is uniform with ``n_scan`` points on ``[0, r_max]`` and is
    refined at every vertex radius ``r_l``, at ``r_l / 2``, and at both
    one-sided limits there, since the piecewise-constant ratios jump exactly
    at those points.
    """
    if delta <= 2:
        raise DomainError("delta must exceed 2")
    if d < 1:
        raise DomainError("dimension d must be >= 1")
    if n_scan < 100:
        raise DomainError("n_scan must be at least 100")
    spec.check_radius(r_max)
    step = r_max / (n_scan - 1)
    base = np.linspace(0.0, r_max, n_scan)
    verts = [r for r in spec.radii[1:] if r <= r_max]

    # doubling ratio on (0, r_max/2]
    half = r_max / 2
    cand = _with_limits(verts + [r / 2 for r in verts], 0.0, half)
    exact_pts = np.concatenate([base[(base > 0) & (base <= half)], [r for r in verts + [v / 2 for v in verts] if r <= half]])
    dbl_pts = np.unique(np.concatenate([exact_pts, cand]))
    ratio = spec.g0(2 * dbl_pts) / spec.g0(dbl_pts)
    doubling = float(ratio.max())
    doubling_exact = float((spec.g0(2 * exact_pts) / spec.g0(exact_pts)).max()) if len(exact_pts) else doubling

    # dimension ratio on [0, r_max]
    dim_pts = np.unique(np.concatenate([base, _with_limits(verts, 0.0, r_max)]))
    dim_ratio = spec.g0(dim_pts) / (1 + dim_pts) ** (d - 1)
    dim_inf, dim_sup = float(dim_ratio.min()), float(dim_ratio.max())

    flags = []
    lower = dim_pts <= half
    if dim_ratio[~lower].max() >= 2 * dim_ratio[lower].max() or spec.tail == "exponential":
        flags.append("dim_sup_unbounded")
    if dim_ratio[~lower].min() <= 0.5 * dim_ratio[lower].min():
        flags.append("dim_inf_vanishing")

    sob_pts = np.unique(np.concatenate([base[1:], verts]))
    S, _ = sobolev_constant(spec.volume, spec.inverse_tail, delta, sob_pts)
    if S == 0.0:
        flags.append("sobolev_divergent")
    return GeometryReport(
        doubling_constant=doubling,
        dim_inf=dim_inf,
        dim_sup=dim_sup,
        sobolev_S=S,
        sobolev_S_tilde=sobolev_tilde_factor(delta) * S,
        scan_range=(0.0, float(r_max)),
        grid_step=step,
        d=d,
        delta=delta,
        flags=tuple(flags),
        limit_discrepancy=doubling - doubling_exact,
    )
