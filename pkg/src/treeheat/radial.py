"""Weighted half-line operators and their heat kernels.

Channel ``l`` of a symmetric tree reduces to the operator on
``L_2((r_l, R), g_l dr)`` generated by ``int |u'|^2 g_l dr``, with a natural
condition at ``0`` for ``l = 0``, a zero condition at ``r_l`` for ``l >= 1``
and an absorbing cut at ``R``.  The form is discretized with piecewise-linear
elements on a grid that contains every vertex radius, so the weight is
constant on each cell.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .errors import DomainError, TruncationError
from .tree import TreeSpec, sobolev_constant

__all__ = [
    "SolverConfig",
    "RadialSystem",
    "KernelValue",
    "HomogeneousData",
    "radial_grid",
    "discretize_radial",
    "heat_kernel_1d",
    "kernel_eval",
    "heat_kernel_timestep",
    "lambda_closed_form",
    "ground_state_homogeneous",
    "eigen_rows",
]

CLAMP_RELATIVE = 1e-12
MASS_KINDS = ("consistent", "lumped")


@dataclass(frozen=True)
class SolverConfig:
    """Truncation and grid parameters shared by every radial solve.

    Attributes:
        domain_cut: Radius ``R`` of the absorbing cut.
        points_per_unit: Minimal number of cells per unit length.
        n_modes: Number of eigenpairs kept (0 keeps all).
        t_max: Largest time the truncation has to support.
        mass: ``"consistent"`` (Galerkin) or ``"lumped"`` (diagonal) mass.
    """

    domain_cut: float = 20.0
    points_per_unit: int = 32
    n_modes: int = 0
    t_max: float = 4.0
    mass: str = "consistent"

    def __post_init__(self):
        if not self.domain_cut > 0:
            raise DomainError("domain_cut must be positive")
        if int(self.points_per_unit) != self.points_per_unit or self.points_per_unit < 8:
            raise DomainError("points_per_unit must be an integer >= 8")
        if self.n_modes < 0:
            raise DomainError("n_modes must be >= 0")
        if not self.t_max > 0:
            raise DomainError("t_max must be positive")
        if self.mass not in MASS_KINDS:
            raise DomainError(f"mass must be one of {MASS_KINDS}")
        object.__setattr__(self, "points_per_unit", int(self.points_per_unit))

    @property
    def step(self) -> float:
        return 1.0 / self.points_per_unit

    def refined(self, factor: int) -> "SolverConfig":
        """Same configuration with ``points_per_unit`` multiplied by ``factor``."""
        return replace(self, points_per_unit=self.points_per_unit * int(factor))

    def reach(self) -> float:
        """Largest evaluation radius the cut supports up to ``t_max``."""
        return self.domain_cut - 6.0 * math.sqrt(self.t_max)

    def check_reach(self, radius: float) -> None:
        if radius > self.reach() + 1e-12:
            raise TruncationError(
                f"cut R={self.domain_cut} needs R >= |x| + 6 sqrt(t_max) "
                f"= {radius + 6 * math.sqrt(self.t_max):.6g}"
            )

    def digest(self) -> str:
        text = ";".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def radial_grid(spec: TreeSpec, cut: float, points_per_unit: int) -> np.ndarray:
    """Nodes on ``[0, cut]`` containing every vertex radius below ``cut``.

    Each segment between consecutive breakpoints is split into
    ``ceil(length * points_per_unit)`` equal cells.
    """
    spec.check_radius(cut)
    breaks = [0.0] + [r for r in spec.radii[1:] if r < cut] + [float(cut)]
    pieces = []
    for a, b in zip(breaks, breaks[1:]):
        n = max(1, int(math.ceil((b - a) * points_per_unit - 1e-9)))
        pieces.append(np.linspace(a, b, n + 1)[:-1])
    pieces.append(np.array([float(cut)]))
    return np.concatenate(pieces)


@dataclass(frozen=True)
class KernelValue:
    """A kernel value with its evaluation record."""

    value: float
    raw: float
    clamped: bool
    snap_offset: float


@dataclass(frozen=True, eq=False)
class RadialSystem:
    """Discretized channel operator with its eigenpairs.

    ``eigenvectors[:, j]`` holds the node values of the ``j``-th eigenfunction
    on ``grid`` (zero at the Dirichlet nodes), normalized in the discrete
    ``L_2(g_l dr)`` inner product defined by ``mass``.
    """

    l: int
    grid: np.ndarray
    weight: np.ndarray
    potential: Optional[np.ndarray]
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mass: str
    free: np.ndarray
    stiffness: tuple[np.ndarray, np.ndarray]
    mass_bands: tuple[np.ndarray, np.ndarray]
    cfg: SolverConfig
    tree_name: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def lower(self) -> float:
        return float(self.grid[0])

    @property
    def cut(self) -> float:
        return float(self.grid[-1])

    def node_index(self, r: float) -> tuple[int, float]:
        """Nearest node to ``r`` and the snap offset ``grid[i] - r``."""
        if r < self.lower - 1e-12 or r > self.cut + 1e-12:
            raise DomainError(f"radius {r} outside [{self.lower}, {self.cut}]")
        i = int(np.argmin(np.abs(self.grid - r)))
        return i, float(self.grid[i] - r)

    def kernel_row(self, i: int, js, t: float) -> np.ndarray:
        """Raw eigen-expansion values ``k(grid[i], grid[js], t)``."""
        decay = np.exp(-self.eigenvalues * t)
        phi = self.eigenvectors
        return (phi[np.atleast_1d(js)] * decay) @ phi[i]

    def kernel_matrix(self, t: float) -> np.ndarray:
        """Raw kernel on all node pairs."""
        phi = self.eigenvectors
        return (phi * np.exp(-self.eigenvalues * t)) @ phi.T

    def mass_matrix(self) -> np.ndarray:
        """Dense mass matrix on the free nodes."""
        d, e = self.mass_bands
        return np.diag(d) + np.diag(e, 1) + np.diag(e, -1)

    def orthonormality_residual(self) -> float:
        phi = self.eigenvectors[self.free]
        gram = phi.T @ self.mass_matrix() @ phi
        return float(np.max(np.abs(gram - np.eye(gram.shape[0]))))

    def quadrature_weights(self) -> np.ndarray:
        """Lumped node weights ``sum of adjacent w h / 2``."""
        h = np.diff(self.grid)
        wh = self.weight * h
        q = np.zeros(len(self.grid))
        q[:-1] += wh / 2
        q[1:] += wh / 2
        return q


def _assemble(grid: np.ndarray, weight: np.ndarray, mass: str):
    h = np.diff(grid)
    a = weight / h
    kd = np.zeros(len(grid))
    kd[:-1] += a
    kd[1:] += a
    ke = -a
    wh = weight * h
    md = np.zeros(len(grid))
    if mass == "consistent":
        md[:-1] += wh / 3
        md[1:] += wh / 3
        me = wh / 6
    else:
        md[:-1] += wh / 2
        md[1:] += wh / 2
        me = np.zeros_like(wh)
    lumped = np.zeros(len(grid))
    lumped[:-1] += wh / 2
    lumped[1:] += wh / 2
    return kd, ke, md, me, lumped


def discretize_radial(
    spec: TreeSpec,
    l: int,
    cfg: SolverConfig,
    potential: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> RadialSystem:
    """Assemble and diagonalize the channel-``l`` operator minus ``potential``.

    Args:
        spec: Tree geometry.
        l: Channel generation.
        cfg: Grid and truncation parameters.
        potential: Optional radial function ``V(r) >= 0``; the operator is
            then ``A_l - V`` with ``V`` integrated by the lumped rule.

    Returns:
        The immutable :class:`RadialSystem`.
    """
    if l < 0 or l > spec.horizon:
        raise DomainError(f"generation {l} outside 0..{spec.horizon}")
    R = cfg.domain_cut
    r_l = spec.radii[l]
    if R <= r_l:
        raise DomainError(f"cut R={R} must exceed r_{l}={r_l}")
    full = radial_grid(spec, R, cfg.points_per_unit)
    grid = full[full >= r_l - 1e-12]
    mid = 0.5 * (grid[:-1] + grid[1:])
    weight = spec.gl(l, mid)
    kd, ke, md, me, lumped = _assemble(grid, weight, cfg.mass)

    free = np.arange(len(grid))
    free = free[:-1] if l == 0 else free[1:-1]
    if free.size == 0:
        raise DomainError("empty grid")
    lo, hi = free[0], free[-1]
    kd, ke = kd[lo : hi + 1].copy(), ke[lo:hi].copy()
    md, me = md[lo : hi + 1].copy(), me[lo:hi].copy()
    vnodes = None
    if potential is not None:
        vnodes = np.asarray(potential(grid), dtype=float) * np.ones(len(grid))
        kd = kd - vnodes[lo : hi + 1] * lumped[lo : hi + 1]

    n = free.size
    if cfg.n_modes > n:
        raise DomainError(f"n_modes={cfg.n_modes} exceeds the {n} free nodes")
    subset = None if cfg.n_modes in (0, n) else (0, cfg.n_modes - 1)

    if cfg.mass == "lumped":
        s = 1.0 / np.sqrt(md)
        kw = {} if subset is None else {"select": "i", "select_range": subset}
        lam, psi = linalg.eigh_tridiagonal(kd * s * s, ke * s[:-1] * s[1:], **kw)
        phi_free = psi * s[:, None]
    else:
        K = np.diag(kd) + np.diag(ke, 1) + np.diag(ke, -1)
        M = np.diag(md) + np.diag(me, 1) + np.diag(me, -1)
        if subset is None:
            lam, phi_free = linalg.eigh(K, M, driver="gvd")
        else:
            lam, phi_free = linalg.eigh(K, M, driver="gvx", subset_by_index=list(subset))

    # fixed sign convention: first significant entry positive
    lead = np.argmax(np.abs(phi_free) > 1e-8 * np.abs(phi_free).max(axis=0), axis=0)
    phi_free = phi_free * np.sign(phi_free[lead, np.arange(phi_free.shape[1])])
    phi = np.zeros((len(grid), lam.size))
    phi[free] = phi_free
    return RadialSystem(
        l=l,
        grid=grid,
        weight=weight,
        potential=vnodes,
        eigenvalues=lam,
        eigenvectors=phi,
        mass=cfg.mass,
        free=free,
        stiffness=(kd, ke),
        mass_bands=(md, me),
        cfg=cfg,
        tree_name=spec.name,
    )


def kernel_eval(sys: RadialSystem, r: float, s: float, t: float) -> KernelValue:
    """``k_l(r, s, t)`` with respect to ``g_l ds`` at the nearest nodes.

    Negative values from round-off are set to zero; the record keeps the raw
    value and whether the clamp was applied.
    """
    if not t > 0:
        raise DomainError("t must be positive")
    i, di = sys.node_index(r)
    j, dj = sys.node_index(s)
    raw = float(sys.kernel_row(i, j, t)[0])
    clamped = raw < 0
    value = max(raw, 0.0)
    offset = di if abs(di) >= abs(dj) else dj
    return KernelValue(value, raw, clamped, offset)


def heat_kernel_1d(sys: RadialSystem, r: float, s: float, t: float) -> float:
    """Nonnegative value of ``k_l(r, s, t)``; see :func:`kernel_eval`."""
    return kernel_eval(sys, r, s, t).value


def clamp_is_roundoff(sys: RadialSystem, kv: KernelValue, r: float, s: float, t: float) -> bool:
    """Whether a clamp stayed within ``1e-12`` of the diagonal scale."""
    if not kv.clamped:
        return True
    scale = math.sqrt(heat_kernel_1d(sys, r, r, t) * heat_kernel_1d(sys, s, s, t))
    return abs(kv.raw) <= CLAMP_RELATIVE * scale


def heat_kernel_timestep(sys: RadialSystem, r: float, s: float, t: float, n_steps: int = 400) -> float:
    """Independent kernel value by implicit time stepping.

    Starts from the discrete delta ``M^{-1} e_s`` and uses two backward-Euler
    half steps followed by trapezoidal (Crank-Nicolson) steps.
    """
    if not t > 0:
        raise DomainError("t must be positive")
    kd, ke = sys.stiffness
    md, me = sys.mass_bands
    free = list(sys.free)
    i, _ = sys.node_index(r)
    j, _ = sys.node_index(s)
    if i not in free or j not in free:
        return 0.0
    fi, fj = free.index(i), free.index(j)
    n = len(kd)

    def band(d, e):
        ab = np.zeros((3, n))
        ab[0, 1:] = e
        ab[1] = d
        ab[2, :-1] = e
        return ab

    def apply(d, e, u):
        out = d * u
        out[:-1] += e * u[1:]
        out[1:] += e * u[:-1]
        return out

    rhs = np.zeros(n)
    rhs[fj] = 1.0
    u = linalg.solve_banded((1, 1), band(md, me), rhs)
    dt = t / n_steps
    for _ in range(2):
        h = dt / 2
        u = linalg.solve_banded((1, 1), band(md + h * kd, me + h * ke), apply(md, me, u))
    h = dt / 2
    lhs = band(md + h * kd, me + h * ke)
    for _ in range(n_steps - 1):
        u = linalg.solve_banded((1, 1), lhs, apply(md - h * kd, me - h * ke, u))
    return float(u[fi])


def eigen_rows(sys: RadialSystem) -> list[tuple[int, float]]:
    """``(index, eigenvalue)`` rows for regression baselines."""
    return [(k + 1, float(v)) for k, v in enumerate(sys.eigenvalues)]


# -- homogeneous trees -----------------------------------------------------------


def lambda_closed_form(b: int) -> tuple[float, float]:
    """Bottom of the spectrum of the homogeneous tree and ``R_b``."""
    if int(b) != b or b < 2:
        raise DomainError("b must be an integer >= 2")
    Rb = (math.sqrt(b) + 1.0 / math.sqrt(b)) / 2.0
    return math.acos(1.0 / Rb) ** 2, Rb


class _EdgeProfile:
    """Ground state on unit edges via the exact edge-to-edge transfer.

    On edge ``j`` (``j < r <= j+1``) the profile is
    ``b^(-j/2) (p_j cos(k s) + q_j sin(k s))`` with ``s = r - j``.
    """

    def __init__(self, b: int, n_edges: int):
        lam, _ = lambda_closed_form(b)
        self.b = b
        self.k = math.sqrt(lam)
        c, s, rb = math.cos(self.k), math.sin(self.k), math.sqrt(b)
        p = np.empty(n_edges)
        q = np.empty(n_edges)
        p[0], q[0] = 1.0, 0.0
        for j in range(1, n_edges):
            p[j] = rb * (p[j - 1] * c + q[j - 1] * s)
            q[j] = (q[j - 1] * c - p[j - 1] * s) / rb
        self.p, self.q = p, q

    def _edge(self, r):
        r = np.asarray(r, dtype=float)
        j = np.maximum(np.ceil(r) - 1, 0).astype(int)
        return j, r - j

    def omega(self, r) -> np.ndarray:
        j, s = self._edge(r)
        ks = self.k * s
        return self.b ** (-j / 2.0) * (self.p[j] * np.cos(ks) + self.q[j] * np.sin(ks))

    def weighted_mass(self, r) -> np.ndarray:
        """``int_0^r omega^2 g_b ds``."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        k, p, q = self.k, self.p, self.q

        def piece(pj, qj, s):
            ks = k * s
            return (
                (pj**2 + qj**2) * s / 2
                + (pj**2 - qj**2) * np.sin(2 * ks) / (4 * k)
                + pj * qj * (1 - np.cos(2 * ks)) / (2 * k)
            )

        full = np.concatenate([[0.0], np.cumsum(piece(p, q, 1.0))])
        j, s = self._edge(r)
        return full[j] + piece(p[j], q[j], s)

    def inverse_edges(self) -> np.ndarray:
        """``int 1/(omega^2 g_b)`` over each whole edge."""
        d_end = self.p * math.cos(self.k) + self.q * math.sin(self.k)
        return math.sin(self.k) / (self.k * self.p * d_end)

    def inverse_tail(self, r) -> np.ndarray:
        """``int_r^inf ds / (omega^2 g_b)``, with a fitted power-law remainder."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        per = self.inverse_edges()
        n = per.size
        # per-edge values behave like A / (j + j0)^2
        j1, j2 = n - 200, n - 1
        ratio = math.sqrt(per[j1] / per[j2])
        j0 = (j2 - ratio * j1) / (ratio - 1)
        A = per[j2] * (j2 + j0) ** 2
        remainder = A / (n + j0 - 0.5)
        after = np.concatenate([np.cumsum(per[::-1])[::-1], [0.0]]) + remainder
        j, s = self._edge(r)
        d = self.p[j] * np.cos(self.k * s) + self.q[j] * np.sin(self.k * s)
        partial = np.sin(self.k * s) / (self.k * self.p[j] * d)
        return after[j] - partial


@dataclass(frozen=True, eq=False)
class HomogeneousData:
    """Ground-state data of the homogeneous tree with unit edges."""

    b: int
    lambda_b: float
    R_b: float
    grid: np.ndarray
    omega: np.ndarray
    S_b: float
    tilde_S_b: float
    c_b: float
    _profile: _EdgeProfile = field(repr=False)

    def omega_at(self, r) -> np.ndarray:
        """Exact profile values at arbitrary radii."""
        return self._profile.omega(r)

    def kernel_bound(self, r, t) -> np.ndarray:
        """``(3/(2 tilde S_b))^(3/2) e^(-lambda_b t) t^(-3/2) omega(r)^2``."""
        t = np.asarray(t, dtype=float)
        return (
            (3.0 / (2.0 * self.tilde_S_b)) ** 1.5
            * np.exp(-self.lambda_b * t)
            * t**-1.5
            * self.omega_at(r) ** 2
        )


def ground_state_homogeneous(b: int, cfg: SolverConfig, n_edges: int = 20000) -> HomogeneousData:
    """Ground state ``omega_b`` on ``[0, R]`` and the derived constants.

    The profile is propagated edge by edge from ``omega(0) = 1``,
    ``omega'(0) = 0`` with continuity and ``omega'(j-) = b omega'(j+)``.
    ``S_b`` is the grid supremum of its defining expression with weight
    ``omega^2 g_b``; ``c_b`` is the smallest constant of the two-sided
    envelope ``(1+r)/sqrt(g_b(r))`` on the grid.
    """
    lam, Rb = lambda_closed_form(b)
    R = cfg.domain_cut
    n_edges = max(n_edges, int(math.ceil(R)) + 400)
    prof = _EdgeProfile(b, n_edges)
    grid = np.linspace(0.0, R, int(math.ceil(R * cfg.points_per_unit)) + 1)
    omega = prof.omega(grid)
    if np.any(omega <= 0):
        raise DomainError("ground state profile lost positivity")

    far = np.arange(1, n_edges - 400, dtype=float)
    scan = np.unique(np.concatenate([grid[1:], far, far - 0.5]))
    S, _ = sobolev_constant(prof.weighted_mass, prof.inverse_tail, 3.0, scan)

    gb = float(b) ** np.maximum(np.ceil(grid) - 1, 0)
    env = (1 + grid) / np.sqrt(gb)
    c_b = float(max(np.max(omega / env), np.max(env / omega)))
    return HomogeneousData(
        b=int(b),
        lambda_b=lam,
        R_b=Rb,
        grid=grid,
        omega=omega,
        S_b=S,
        tilde_S_b=(0.75) ** (4.0 / 3.0) * S,
        c_b=c_b,
        _profile=prof,
    )
