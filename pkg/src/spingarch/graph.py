"""Neighborhood graphs on a fixed set of sites and the spectra they induce."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import sparse


class GraphError(ValueError):
    """Invalid neighborhood structure."""


class SiteIndexError(GraphError):
    pass


class SelfLoopError(GraphError):
    pass


class DisconnectedGraphError(GraphError):
    pass


@dataclass(frozen=True)
class ZetaBounds:
    """Open interval of admissible CAR dependence values, (1/chi_min, 1/chi_max)."""

    lower: float
    upper: float

    def contains(self, zeta: float) -> bool:
        return self.lower < zeta < self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True, eq=False)
class NeighborhoodGraph:
    """Undirected, unweighted, connected adjacency structure.

    Build through :func:`torus_grid`, :func:`from_edge_list` or
    :func:`spingarch.io.read_edge_list`; the constructor assumes validated
    input. The adjacency spectrum and the degree-normalised spectrum are
    computed once and stored read-only.
    """

    n_sites: int
    edges: tuple[tuple[int, int], ...]
    degree: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    # spectrum of D^{-1/2} A D^{-1/2}
    normalized_eigenvalues: np.ndarray = field(repr=False)
    normalized_eigenvectors: np.ndarray = field(repr=False)
    adjacency: sparse.csr_matrix = field(repr=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def dense_adjacency(self) -> np.ndarray:
        return self.adjacency.toarray()

    def neighbors(self, i: int) -> np.ndarray:
        row = self.adjacency.getrow(i)
        return np.sort(row.indices)

    def permuted(self, perm) -> "NeighborhoodGraph":
        """Relabel sites so that new site ``k`` is old site ``perm[k]``."""
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.size)
        pairs = [(int(inverse[i]), int(inverse[j])) for i, j in self.edges]
        return from_edge_list(self.n_sites, pairs)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _check_connected(n: int, adjacency: sparse.csr_matrix) -> None:
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    indptr, indices = adjacency.indptr, adjacency.indices
    while queue:
        i = queue.popleft()
        for j in indices[indptr[i]:indptr[i + 1]]:
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    if not seen.all():
        isolated = np.flatnonzero(~seen)
        raise DisconnectedGraphError(
            f"graph is disconnected: {isolated.size} site(s) unreachable from site 0 "
            f"(first: {int(isolated[0])})"
        )


def from_edge_list(n_sites: int, pairs: Iterable[tuple[int, int]]) -> NeighborhoodGraph:
    """Build a graph from unordered index pairs.

    Duplicates and reversed duplicates collapse to one edge. Raises
    :class:`SiteIndexError`, :class:`SelfLoopError` or
    :class:`DisconnectedGraphError`.
    """
    n_sites = int(n_sites)
    if n_sites < 2:
        raise GraphError(f"need at least 2 sites, got {n_sites}")
    edge_set = set()
    for i, j in pairs:
        i, j = int(i), int(j)
        for k in (i, j):
            if not 0 <= k < n_sites:
                raise SiteIndexError(f"site index {k} out of range [0, {n_sites})")
        if i == j:
            raise SelfLoopError(f"self-loop at site {i}")
        edge_set.add((min(i, j), max(i, j)))
    edges = tuple(sorted(edge_set))
    if edges:
        rows = np.array([e[0] for e in edges] + [e[1] for e in edges])
        cols = np.array([e[1] for e in edges] + [e[0] for e in edges])
    else:
        rows = cols = np.array([], dtype=int)
    adjacency = sparse.csr_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(n_sites, n_sites)
    )
    _check_connected(n_sites, adjacency)

    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    dense = adjacency.toarray()
    evals, evecs = np.linalg.eigh(dense)
    scale = 1.0 / np.sqrt(degree)
    nevals, nevecs = np.linalg.eigh(dense * scale[:, None] * scale[None, :])
    return NeighborhoodGraph(
        n_sites=n_sites,
        edges=edges,
        degree=_freeze(degree.astype(int)),
        eigenvalues=_freeze(evals),
        eigenvectors=_freeze(evecs),
        normalized_eigenvalues=_freeze(nevals),
        normalized_eigenvectors=_freeze(nevecs),
        adjacency=adjacency,
    )


def torus_grid(rows: int, cols: int) -> NeighborhoodGraph:
    """Four-nearest-neighbour lattice wrapped on a torus.

    Site ``r * cols + c`` neighbours the sites one row or one column away,
    with wraparound. Both dimensions must be at least 3, otherwise the wrap
    produces duplicate edges.
    """
    for name, value in (("rows", rows), ("cols", cols)):
        if int(value) < 3:
            raise GraphError(f"torus dimension {name}={value} must be >= 3")
    rows, cols = int(rows), int(cols)
    pairs = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            pairs.append((i, r * cols + (c + 1) % cols))
            pairs.append((i, ((r + 1) % rows) * cols + c))
    return from_edge_list(rows * cols, pairs)


def zeta_bounds(g: NeighborhoodGraph) -> ZetaBounds:
    return ZetaBounds(lower=1.0 / g.eigenvalues[0], upper=1.0 / g.eigenvalues[-1])
