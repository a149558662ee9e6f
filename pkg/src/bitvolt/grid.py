"""Radial feeder topology and its linearized voltage-response model.

All electrical quantities are per-unit and voltages are *squared* magnitudes,
which makes the branch-flow voltage equation linear.  Bus 0 is the feeder
(slack) bus; buses ``1..N`` are branch buses.  Vectors over branch buses use
0-based positions, so position ``i`` holds bus ``i + 1``.

The linear response of the squared voltages to injections is

    v = A q + B p + 1 * v0

where ``A[i, j]`` (resp. ``B``) is twice the reactance (resistance) summed
over the edges shared by the feeder-to-bus paths of buses ``i+1`` and
``j+1``.  ``A`` is positive definite and its inverse is tree-sparse with a
closed form, which this module builds directly rather than by numerical
inversion.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = ["RadialNetwork", "LinearModel", "build_matrices", "voltage_map"]


def _locked(a, dtype=np.float64):
    out = np.ascontiguousarray(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class RadialNetwork:
    """Tree-topology distribution feeder rooted at the feeder bus 0.

    Parameters
    ----------
    bus_count : int
        Number of branch buses N (feeder bus 0 excluded).
    edges : sequence of (parent, child)
        Directed flow lines; must form a tree rooted at bus 0 with exactly
        one parent per branch bus.
    r, x : array_like, shape (N,)
        Per-edge resistance / reactance in per-unit, aligned with ``edges``.
        ``x > 0`` is required (the inverse-reactance closed form needs it);
        ``r = 0`` is allowed.
    v0 : float
        Squared voltage magnitude at the feeder bus, per-unit.
    """

    bus_count: int
    edges: tuple[tuple[int, int], ...]
    r: np.ndarray
    x: np.ndarray
    v0: float

    def __post_init__(self):
        n = self.bus_count
        if n < 1:
            raise ValueError("bus_count must be at least 1")
        edges = tuple((int(p), int(c)) for p, c in self.edges)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "r", _locked(self.r))
        object.__setattr__(self, "x", _locked(self.x))
        object.__setattr__(self, "v0", float(self.v0))
        if len(edges) != n:
            raise ValueError(f"expected exactly {n} edges, got {len(edges)}: not a tree")
        if self.r.shape != (n,) or self.x.shape != (n,):
            raise ValueError("r and x must have one entry per edge")
        if not np.all(np.isfinite(self.r)) or not np.all(np.isfinite(self.x)):
            raise ValueError("r and x must be finite")
        if np.any(self.x <= 0.0):
            raise ValueError("all edge reactances must be strictly positive")
        if np.any(self.r < 0.0):
            raise ValueError("edge resistances must be nonnegative")
        if self.v0 <= 0.0:
            raise ValueError("feeder squared voltage v0 must be positive")

        seen_child = set()
        for p, c in edges:
            if not (0 <= p <= n) or not (1 <= c <= n):
                raise ValueError(f"edge ({p},{c}) out of bus range 0..{n}")
            if p == c:
                raise ValueError(f"self-loop at bus {p}")
            if c in seen_child:
                raise ValueError(f"bus {c} has more than one parent: not a tree")
            seen_child.add(c)
        if seen_child != set(range(1, n + 1)):
            missing = sorted(set(range(1, n + 1)) - seen_child)
            raise ValueError(f"buses {missing} have no parent edge: not a tree")

        # Reachability from the feeder; a parent-per-bus edge set that is not
        # connected to bus 0 necessarily hides a cycle.
        reached = {0}
        frontier = [0]
        kids = self.children
        while frontier:
            b = frontier.pop()
            for c in kids[b]:
                reached.add(c)
                frontier.append(c)
        if len(reached) != n + 1:
            raise ValueError("edge set contains a cycle: not a tree rooted at bus 0")

    @cached_property
    def parent(self) -> np.ndarray:
        """parent[b] for buses 0..N (parent[0] = -1)."""
        par = np.full(self.bus_count + 1, -1, dtype=np.int64)
        for p, c in self.edges:
            par[c] = p
        par.setflags(write=False)
        return par

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in range(self.bus_count + 1)]
        for p, c in self.edges:
            kids[p].append(c)
        return tuple(tuple(sorted(k)) for k in kids)

    @cached_property
    def edge_r(self) -> np.ndarray:
        """Resistance of the edge into each bus, indexed by child bus (entry 0 unused)."""
        out = np.zeros(self.bus_count + 1)
        for (p, c), val in zip(self.edges, self.r):
            out[c] = val
        out.setflags(write=False)
        return out

    @cached_property
    def edge_x(self) -> np.ndarray:
        out = np.zeros(self.bus_count + 1)
        for (p, c), val in zip(self.edges, self.x):
            out[c] = val
        out.setflags(write=False)
        return out

    @cached_property
    def sweep_order(self) -> np.ndarray:
        """Branch buses ordered parents-before-children (for forward sweeps)."""
        order = []
        frontier = [0]
        while frontier:
            b = frontier.pop(0)
            if b != 0:
                order.append(b)
            frontier.extend(self.children[b])
        out = np.asarray(order, dtype=np.int64)
        out.setflags(write=False)
        return out

    @cached_property
    def branch_neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Grid neighbors among branch buses only, indexed by vector position.

        Entry ``i`` lists the vector positions of the buses adjacent to bus
        ``i + 1``, excluding the feeder bus (bus 0 is not a communication
        peer: it runs no controller).
        """
        adj: list[set[int]] = [set() for _ in range(self.bus_count)]
        for p, c in self.edges:
            if p >= 1:
                adj[p - 1].add(c - 1)
                adj[c - 1].add(p - 1)
        return tuple(tuple(sorted(s)) for s in adj)

    def subtree_positions(self, bus: int) -> np.ndarray:
        """Vector positions of `bus` and all its descendants (bus >= 1)."""
        members = []
        frontier = [bus]
        while frontier:
            b = frontier.pop()
            members.append(b - 1)
            frontier.extend(self.children[b])
        return np.asarray(sorted(members), dtype=np.int64)


@dataclass(frozen=True)
class LinearModel:
    """Matrices and spectral constants of the linearized feeder response.

    ``A`` and ``B`` are the shared-path reactance/resistance sums, ``A_inv``
    the closed-form tree-sparse inverse of ``A``.  ``L`` is the Lipschitz
    constant of the dual gradient, ``max_i 2(lambda_i(A) + 1/lambda_i(A))``,
    and ``lambda_max_A`` the spectral radius of ``A``.  ``neighbor_sets``
    mirrors :attr:`RadialNetwork.branch_neighbors`.
    """

    A: np.ndarray
    B: np.ndarray
    A_inv: np.ndarray
    v0: float
    L: float
    lambda_max_A: float
    eig_A: np.ndarray
    neighbor_sets: tuple[tuple[int, ...], ...]

    @property
    def n_bus(self) -> int:
        return self.A.shape[0]


def build_matrices(net: RadialNetwork) -> LinearModel:
    """Construct the linear model of a radial network.

    ``A`` and ``B`` are accumulated edge by edge: the feeder-to-bus path of
    every bus in the subtree under an edge contains that edge, so each edge
    contributes ``2 x_e`` (``2 r_e``) on the corresponding principal
    submatrix.  ``A_inv`` is assembled from its closed form (half the
    inverse-reactance Laplacian-like stencil on the tree); numerical
    inversion is deliberately not used here so that the closed form itself
    is exercised, and tests verify ``A @ A_inv == I``.

    Raises
    ------
    ValueError
        If `net` violates the radial-network invariants (via RadialNetwork).
    """
    n = net.bus_count
    A = np.zeros((n, n))
    B = np.zeros((n, n))
    for (p, c), r_e, x_e in zip(net.edges, net.r, net.x):
        m = net.subtree_positions(c)
        A[np.ix_(m, m)] += 2.0 * x_e
        B[np.ix_(m, m)] += 2.0 * r_e

    A_inv = np.zeros((n, n))
    for b in range(1, n + 1):
        acc = 1.0 / net.edge_x[b]
        for k in net.children[b]:
            acc += 1.0 / net.edge_x[k]
        A_inv[b - 1, b - 1] = 0.5 * acc
    for p, c in net.edges:
        if p >= 1:
            A_inv[p - 1, c - 1] = A_inv[c - 1, p - 1] = -0.5 / net.edge_x[c]

    eig = np.linalg.eigvalsh(A)
    if eig[0] <= 0.0:
        raise ValueError("A is not positive definite; network data is inconsistent")
    L = float(np.max(2.0 * (eig + 1.0 / eig)))
    return LinearModel(
        A=_locked(A),
        B=_locked(B),
        A_inv=_locked(A_inv),
        v0=net.v0,
        L=L,
        lambda_max_A=float(eig[-1]),
        eig_A=_locked(eig),
        neighbor_sets=net.branch_neighbors,
    )


def voltage_map(model: LinearModel, q: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Linear squared-voltage response ``A q + d`` at the branch buses."""
    q = np.asarray(q, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    n = model.n_bus
    if q.shape != (n,):
        raise ValueError(f"q must have shape ({n},), got {q.shape}")
    if d.shape != (n,):
        raise ValueError(f"d must have shape ({n},), got {d.shape}")
    return model.A @ q + d
