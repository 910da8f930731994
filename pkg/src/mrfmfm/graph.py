"""Spatial adjacency structure over a set of sites with planar coordinates."""

from __future__ import annotations

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graph inputs or out-of-range site indices."""


class SpatialGraph:
    """Undirected graph over ``n_sites`` sites, each with an (x, y) coordinate.

    Edges are unordered pairs of distinct site indices. The graph is treated
    as immutable after construction and may be shared freely across chains.

    Parameters
    ----------
    n_sites : int
        Number of sites (positive).
    edges : iterable of (int, int)
        Unordered site-index pairs. Self-loops are rejected, duplicates
        (in either orientation) collapse to a single edge.
    coords : array-like, shape (n_sites, 2)
        Planar coordinates per site; units are arbitrary and only enter
        through Euclidean distances.
    """

    def __init__(self, n_sites, edges, coords):
        n = int(n_sites)
        if n <= 0:
            raise GraphError(f"n_sites must be positive, got {n_sites}")
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (n, 2):
            raise GraphError(
                f"coords must have shape ({n}, 2), got {coords.shape}"
            )
        if not np.all(np.isfinite(coords)):
            raise GraphError("coords must be finite")

        normalized = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise GraphError(f"self-loop at site {a}")
            if not (0 <= a < n and 0 <= b < n):
                raise GraphError(f"edge ({a}, {b}) out of range for n={n}")
            normalized.add((min(a, b), max(a, b)))

        self.n_sites = n
        self.edges = frozenset(normalized)
        self.coords = coords
        self.coords.setflags(write=False)

        nbrs = [[] for _ in range(n)]
        for a, b in normalized:
            nbrs[a].append(b)
            nbrs[b].append(a)
        self._nbrs = [np.array(sorted(v), dtype=np.int64) for v in nbrs]

    @property
    def n_edges(self):
        return len(self.edges)

    def neighbors(self, i):
        """All sites adjacent to site ``i``, sorted ascending.

        Raises :class:`GraphError` if ``i`` is out of range. The returned
        array is owned by the graph; do not mutate it.
        """
        if not (0 <= int(i) < self.n_sites):
            raise GraphError(f"site index {i} out of range for n={self.n_sites}")
        return self._nbrs[int(i)]

    def pairwise_distances(self):
        """Full n-by-n matrix of Euclidean distances between site coordinates."""
        d = self.coords[:, None, :] - self.coords[None, :, :]
        return np.sqrt((d * d).sum(axis=-1))

    def __repr__(self):
        return f"SpatialGraph(n_sites={self.n_sites}, n_edges={self.n_edges})"


def lattice_graph(rows, cols):
    """Rectangular lattice with 4-neighborhood adjacency.

    Sites are indexed row-major. Row 0 is the top band: site (r, c) sits at
    coordinates (c, rows - 1 - r), so y decreases from north to south. This
    is the hermetic stand-in for real county geography in tests and
    simulations.
    """
    rows, cols = int(rows), int(cols)
    if rows <= 0 or cols <= 0:
        raise GraphError("lattice dimensions must be positive")
    n = rows * cols
    coords = np.empty((n, 2))
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            coords[i] = (c, rows - 1 - r)
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return SpatialGraph(n, edges, coords)
