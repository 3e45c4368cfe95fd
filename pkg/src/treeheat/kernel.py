"""Tree heat kernel from radial channels, and a full-graph reference solver.

The channel functions ``Y_{l,v,sigma}`` diagonalize the Laplacian of a
symmetric tree; summing the channel kernels ``k_l`` with the products
``Y(x) conj(Y(y))`` gives the tree kernel.  :class:`GraphOracle`
discretizes the whole truncated tree edge by edge instead, so agreement of
the two routes is a meaningful check.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator, Optional

import numpy as np
from scipy import linalg

from .errors import DomainError, NodeBudgetError, TruncationError
from .radial import RadialSystem, SolverConfig, discretize_radial, radial_grid
from .tree import PointAddress, TreeSpec

__all__ = [
    "ChannelIndex",
    "KernelSample",
    "channels",
    "channel_system",
    "y_eval",
    "diagonal_kernel",
    "full_kernel",
    "GraphOracle",
    "full_graph_oracle",
    "NODE_BUDGET",
    "oracle_for",
    "common_generations",
    "diagonal_series",
]

NODE_BUDGET = 20000
IMAG_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ChannelIndex:
    """Channel ``(l, v, sigma)``.

    ``v`` is the path of branch choices ``m_1..m_{l-1}`` leading from the
    root to a vertex at radius ``r_l`` (empty for ``l = 0`` and ``l = 1``).
    """

    l: int
    v: tuple[int, ...]
    sigma: int

    def validate(self, spec: TreeSpec) -> None:
        if self.l < 0 or self.l > spec.horizon:
            raise DomainError(f"generation {self.l} outside 0..{spec.horizon}")
        if self.l == 0:
            if self.v or self.sigma != 1:
                raise DomainError("the l=0 channel is (0, (), 1)")
            return
        if len(self.v) != self.l - 1:
            raise DomainError(f"vertex path must have length {self.l - 1}")
        for i, m in enumerate(self.v, start=1):
            if not 1 <= m <= spec.branchings[i]:
                raise DomainError(f"branch choice {m} outside 1..{spec.branchings[i]}")
        if not 1 <= self.sigma <= spec.branchings[self.l] - 1:
            raise DomainError(f"sigma={self.sigma} outside 1..{spec.branchings[self.l] - 1}")


def channels(spec: TreeSpec, max_generation: Optional[int] = None) -> Iterator[ChannelIndex]:
    """All channels up to ``max_generation`` (default: the horizon)."""
    top = spec.horizon if max_generation is None else min(max_generation, spec.horizon)
    yield ChannelIndex(0, (), 1)
    paths: list[tuple[int, ...]] = [()]
    for l in range(1, top + 1):
        for v in paths:
            for sigma in range(1, spec.branchings[l]):
                yield ChannelIndex(l, v, sigma)
        paths = [p + (m,) for p in paths for m in range(1, spec.branchings[l] + 1)]


def y_eval(spec: TreeSpec, ch: ChannelIndex, x: PointAddress) -> complex:
    """Value of the channel function ``Y_{l,v,sigma}`` at ``x``."""
    ch.validate(spec)
    x.validate(spec)
    if ch.l == 0:
        return complex(float(spec.g0(x.radial)) ** -0.5)
    l = ch.l
    if len(x.path) < l or x.path[: l - 1] != ch.v:
        return 0j
    b = spec.branchings[l]
    m = x.path[l - 1]
    phase = cmath.exp(2j * math.pi * m * ch.sigma / b)
    return phase / math.sqrt(b * float(spec.gl(l, x.radial)))


@dataclass(frozen=True)
class KernelSample:
    """Evaluated tree kernel ``k(x, y, t)``."""

    x: PointAddress
    y: PointAddress
    t: float
    value: float
    channels_used: int
    truncation_error_bound: float
    raw: float = 0.0
    clamped: bool = False


@lru_cache(maxsize=128)
def channel_system(spec: TreeSpec, l: int, cfg: SolverConfig) -> RadialSystem:
    """Cached channel-``l`` system of ``spec`` under ``cfg``."""
    return discretize_radial(spec, l, cfg)


def _check_time(cfg: SolverConfig, radius: float, t: float) -> None:
    if not t > 0:
        raise DomainError("t must be positive")
    if t > cfg.t_max * (1 + 1e-12):
        raise DomainError(f"t={t} exceeds t_max={cfg.t_max}")
    if radius + 6 * math.sqrt(t) > cfg.domain_cut + 1e-12:
        raise TruncationError(
            f"|x|={radius} with t={t} needs R >= {radius + 6 * math.sqrt(t):.6g}"
        )


def _truncation_bound(cfg: SolverConfig, radius: float, t: float) -> float:
    gap = cfg.domain_cut - radius
    return (math.pi * t) ** -0.5 * math.exp(-(gap**2) / (4 * t))


def _channel_value(spec, l, cfg, r, s, t) -> float:
    sys = channel_system(spec, l, cfg)
    i, _ = sys.node_index(r)
    j, _ = sys.node_index(s)
    return float(sys.kernel_row(i, j, t)[0])


def diagonal_kernel(spec: TreeSpec, cfg: SolverConfig, x: PointAddress, t: float) -> KernelSample:
    """``k(x, x, t) = k_0 + sum over r_l < |x| of (b_l - 1)/b_l k_l``."""
    x.validate(spec)
    r = x.radial
    _check_time(cfg, r, t)
    raw = _channel_value(spec, 0, cfg, r, r, t)
    used = 1
    for l in range(1, spec.horizon + 1):
        if not spec.radii[l] < r:
            break
        b = spec.branchings[l]
        raw += (b - 1) / b * _channel_value(spec, l, cfg, r, r, t)
        used += 1
    return KernelSample(
        x, x, t, max(raw, 0.0), used, _truncation_bound(cfg, r, t), raw, raw < 0
    )


def common_generations(spec: TreeSpec, x: PointAddress, y: PointAddress) -> list[int]:
    """Generations ``l >= 1`` whose vertex is an ancestor of both points."""
    out = []
    for l in range(1, min(len(x.path), len(y.path)) + 1):
        if x.path[: l - 1] != y.path[: l - 1]:
            break
        out.append(l)
    return out


def full_kernel(
    spec: TreeSpec, cfg: SolverConfig, x: PointAddress, y: PointAddress, t: float
) -> KernelSample:
    """``k(x, y, t)`` as the channel sum over common ancestors of ``x`` and ``y``."""
    x.validate(spec)
    y.validate(spec)
    _check_time(cfg, max(x.radial, y.radial), t)
    rx, ry = x.radial, y.radial
    total = complex(_channel_value(spec, 0, cfg, rx, ry, t))
    gens = common_generations(spec, x, y)
    for l in gens:
        v = x.path[: l - 1]
        scale = math.sqrt(float(spec.gl(l, rx)) * float(spec.gl(l, ry)))
        coef = 0j
        for sigma in range(1, spec.branchings[l]):
            ch = ChannelIndex(l, v, sigma)
            coef += y_eval(spec, ch, x) * y_eval(spec, ch, y).conjugate()
        total += scale * coef * _channel_value(spec, l, cfg, rx, ry, t)
    if abs(total.imag) > IMAG_TOLERANCE * max(1.0, abs(total.real)):
        raise ArithmeticError(f"channel sum left imaginary part {total.imag:.3e}")
    raw = total.real
    return KernelSample(
        x,
        y,
        t,
        max(raw, 0.0),
        1 + len(gens),
        _truncation_bound(cfg, max(rx, ry), t),
        raw,
        raw < 0,
    )


class GraphOracle:
    """Piecewise-linear discretization of the whole truncated tree.

    Every edge below the cut becomes a path of nodes; vertex nodes are shared
    by the incident edges, which yields continuity and the discrete Kirchhoff
    balance.  The root keeps the natural condition and every node at the cut
    is absorbing.  The measure is arclength.

    Args:
        spec: Tree geometry.
        max_generation: Vertices deeper than this are removed.
        cfg: Grid, cut and mass type.
        potential: Optional ``V(path, radii) -> values`` on each edge; the
            operator is then ``-Laplacian - V``.
    """

    def __init__(
        self,
        spec: TreeSpec,
        max_generation: int,
        cfg: SolverConfig,
        potential: Optional[Callable[[tuple, np.ndarray], np.ndarray]] = None,
        node_budget: int = NODE_BUDGET,
    ):
        tree = spec.truncated(max_generation)
        R = cfg.domain_cut
        grid = radial_grid(tree, R, cfg.points_per_unit)
        self.spec, self.cfg = tree, cfg
        depth = sum(1 for r in tree.radii[1:] if r < R)

        # count nodes before allocating anything
        n_nodes = 1
        n_edges_at = 1
        for j in range(depth + 1):
            lo = tree.radii[j]
            hi = tree.radii[j + 1] if j + 1 <= depth else R
            cells = int(np.sum((grid > lo + 1e-12) & (grid <= hi + 1e-12)))
            if j >= 1:
                n_edges_at *= tree.branchings[j]
            n_nodes += n_edges_at * cells
            if n_nodes > node_budget:
                raise NodeBudgetError(f"oracle needs more than {node_budget} nodes")

        self.edges: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}
        radii_of = [0.0]
        start_of: dict[tuple[int, ...], int] = {(): 0}
        rows, cols, kv, mv = [], [], [], []
        lumped = [0.0]
        pots = []
        cut_nodes = []

        def add(i, j, k, m):
            rows.append(i)
            cols.append(j)
            kv.append(k)
            mv.append(m)

        frontier = [()]
        for j in range(depth + 1):
            lo = tree.radii[j]
            hi = tree.radii[j + 1] if j + 1 <= depth else R
            seg = grid[(grid >= lo - 1e-12) & (grid <= hi + 1e-12)]
            new_frontier = []
            for parent in frontier:
                choices = [()] if j == 0 else [(m,) for m in range(1, tree.branchings[j] + 1)]
                for c in choices:
                    path = parent + c
                    ids = [start_of[parent]]
                    for r in seg[1:]:
                        ids.append(len(radii_of))
                        radii_of.append(float(r))
                        lumped.append(0.0)
                    ids = np.asarray(ids)
                    self.edges[path] = (ids, seg.copy())
                    h = np.diff(seg)
                    for a, b_, hh in zip(ids[:-1], ids[1:], h):
                        if self.cfg.mass == "consistent":
                            m_d, m_o = hh / 3, hh / 6
                        else:
                            m_d, m_o = hh / 2, 0.0
                        add(a, a, 1 / hh, m_d)
                        add(b_, b_, 1 / hh, m_d)
                        add(a, b_, -1 / hh, m_o)
                        add(b_, a, -1 / hh, m_o)
                        lumped[a] += hh / 2
                        lumped[b_] += hh / 2
                    if potential is not None:
                        pots.append((ids, np.asarray(potential(path, seg), dtype=float) * np.ones(len(seg))))
                    if j == depth:
                        cut_nodes.append(int(ids[-1]))
                    else:
                        start_of[path] = int(ids[-1])
                        new_frontier.append(path)
            frontier = new_frontier

        n = len(radii_of)
        self.n_nodes = n
        K = np.zeros((n, n))
        M = np.zeros((n, n))
        np.add.at(K, (rows, cols), kv)
        np.add.at(M, (rows, cols), mv)
        self.lumped = np.asarray(lumped)
        if potential is not None:
            vn = np.zeros(n)
            for ids, vals in pots:
                vn[ids] = vals
            K -= np.diag(vn * self.lumped)
        keep = np.setdiff1d(np.arange(n), cut_nodes)
        self.free = keep
        Kf, Mf = K[np.ix_(keep, keep)], M[np.ix_(keep, keep)]
        if cfg.mass == "lumped":
            s = 1 / np.sqrt(np.diag(Mf))
            lam, psi = linalg.eigh(Kf * s[:, None] * s[None, :], driver="evd")
            vec = psi * s[:, None]
        else:
            lam, vec = linalg.eigh(Kf, Mf, driver="gvd")
        self.eigenvalues = lam
        self.eigenvectors = np.zeros((n, lam.size))
        self.eigenvectors[keep] = vec

    def node_of(self, x: PointAddress) -> int:
        if x.path not in self.edges:
            raise DomainError(f"point {x.label()} is not on the discretized tree")
        ids, radii = self.edges[x.path]
        k = int(np.argmin(np.abs(radii - x.radial)))
        return int(ids[k])

    def kernel(self, x: PointAddress, y: PointAddress, t: float) -> float:
        if not t > 0:
            raise DomainError("t must be positive")
        i, j = self.node_of(x), self.node_of(y)
        phi = self.eigenvectors
        return float(np.sum(np.exp(-self.eigenvalues * t) * phi[i] * phi[j]))

    def mass(self, x: PointAddress, t: float) -> float:
        """``int k(x, y, t) dy`` over the discretized tree."""
        i = self.node_of(x)
        phi = self.eigenvectors
        row = (phi * np.exp(-self.eigenvalues * t)) @ phi[i]
        return float(row @ self.lumped)


_ORACLES: dict = {}


def oracle_for(spec: TreeSpec, max_generation: int, cfg: SolverConfig) -> GraphOracle:
    """Cached potential-free oracle."""
    key = (spec, max_generation, cfg)
    if key not in _ORACLES:
        _ORACLES[key] = GraphOracle(spec, max_generation, cfg)
    return _ORACLES[key]


def full_graph_oracle(
    spec: TreeSpec,
    max_generation: int,
    cfg: SolverConfig,
    x: PointAddress,
    y: PointAddress,
    t: float,
) -> float:
    """Reference value of ``k(x, y, t)`` from the full-graph discretization."""
    return oracle_for(spec, max_generation, cfg).kernel(x, y, t)


def diagonal_series(spec: TreeSpec, cfg: SolverConfig, r: float, times) -> np.ndarray:
    """``k(x, x, t)`` at ``|x| = r`` for many times at once (raw, unclamped)."""
    times = np.asarray(times, dtype=float)
    for t in times:
        _check_time(cfg, r, float(t))
    out = np.zeros(times.shape)
    for l in range(0, spec.horizon + 1):
        if l >= 1 and not spec.radii[l] < r:
            break
        sys = channel_system(spec, l, cfg)
        i, _ = sys.node_index(r)
        coef = 1.0 if l == 0 else (spec.branchings[l] - 1) / spec.branchings[l]
        out += coef * (np.exp(-np.outer(times, sys.eigenvalues)) @ sys.eigenvectors[i] ** 2)
    return out
