"""Adjacency construction: similarity-derived temporal graph, spatial graph
ingestion, and the block-fused adjacency that ties K consecutive time steps
of every node into one (K*N) x (K*N) matrix.

Block roles in a fusion layout:
  "spatial"      the road-network adjacency
  "temporal"     the similarity-derived adjacency
  "connectivity" identity links between the same node at adjacent steps
  "zero"         no links
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IngestionError

SPATIAL = "spatial"
TEMPORAL = "temporal"
CONNECTIVITY = "connectivity"
ZERO = "zero"

_BLOCK_KINDS = (SPATIAL, TEMPORAL, CONNECTIVITY, ZERO)


@dataclass(frozen=True)
class SparsityTarget:
    """Target nonzero ratio for the temporal graph; alpha in (0, 1]."""

    alpha: float = 0.01

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")

    def k_per_node(self, n_nodes: int) -> int:
        return max(1, int(self.alpha * n_nodes + 0.5))


def temporal_graph(dist: np.ndarray, target) -> np.ndarray:
    """Binary symmetric k-nearest-neighbour graph from a distance matrix.

    For each row the ``k_per_node`` smallest off-diagonal distances select
    neighbours (ties broken toward the lower index); each selected edge is
    set in both directions. `target` is a SparsityTarget or a plain int k.
    """
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValueError("distance matrix must be square")
    n = dist.shape[0]
    k = target if isinstance(target, int) else target.k_per_node(n)
    if k >= n:
        raise ValueError(f"k_per_node={k} must be smaller than the node count {n}")
    ranked = dist.copy()
    np.fill_diagonal(ranked, np.inf)  # a node never selects itself
    out = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        neighbours = np.argsort(ranked[i], kind="stable")[:k]
        out[i, neighbours] = 1.0
        out[neighbours, i] = 1.0
    return out


def load_spatial_graph(path, n_nodes: int, directed: bool = False,
                       binarize: bool = True) -> np.ndarray:
    """Dense adjacency from an edge-list file (`from,to[,cost]` per line,
    optional `from,to,cost` header). The result is symmetrised with
    max(A, A^T), optionally binarised, and has a zero diagonal (self links
    are added later by fusion-stage self-loops)."""
    adj = np.zeros((n_nodes, n_nodes), dtype=np.float64)
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(str(exc)) from exc
    with fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if ln == 1 and not parts[0].lstrip("-").isdigit():
                continue  # header
            if len(parts) not in (2, 3):
                raise IngestionError(f"{path}: line {ln}: expected 2 or 3 fields")
            try:
                u, v = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError as exc:
                raise IngestionError(f"{path}: line {ln}: {exc}") from exc
            if not (0 <= u < n_nodes and 0 <= v < n_nodes):
                raise IngestionError(
                    f"{path}: line {ln}: node id out of range [0, {n_nodes})"
                )
            adj[u, v] = max(adj[u, v], w)
            if not directed:
                adj[v, u] = max(adj[v, u], w)
    adj = np.maximum(adj, adj.T)
    if binarize:
        adj = (adj != 0).astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    return adj


def save_edge_list(adj: np.ndarray, path) -> int:
    """Write the upper triangle of a symmetric adjacency as `from,to,cost`
    rows under a header; returns the number of edges written."""
    adj = np.asarray(adj)
    rows_i, rows_j = np.nonzero(np.triu(adj, k=1))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("from,to,cost\n")
        for u, v in zip(rows_i, rows_j):
            fh.write(f"{u},{v},{adj[u, v]:g}\n")
    return len(rows_i)


def save_dense(adj: np.ndarray, path) -> None:
    """Row-major comma-separated dump of the full matrix (debug aid)."""
    np.savetxt(path, np.asarray(adj), fmt="%g", delimiter=",")


def _default_grid(window: int) -> tuple:
    """Diagonal ends and the far corner carry the temporal graph, interior
    diagonal blocks the spatial graph, adjacent-step blocks the identity."""
    grid = [[ZERO] * window for _ in range(window)]
    for p in range(window):
        for q in range(window):
            if abs(p - q) == 1:
                grid[p][q] = CONNECTIVITY
            elif p == q:
                grid[p][q] = TEMPORAL if p in (0, window - 1) else SPATIAL
    if window >= 3:
        grid[0][window - 1] = TEMPORAL
        grid[window - 1][0] = TEMPORAL
    return tuple(tuple(row) for row in grid)


@dataclass(frozen=True)
class FusionLayout:
    """Placement of block roles in the (K*N) x (K*N) fused adjacency."""

    window: int = 4
    grid: tuple = field(default=None)
    self_loops: bool = True

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be >= 2")
        grid = self.grid if self.grid is not None else _default_grid(self.window)
        grid = tuple(tuple(row) for row in grid)
        object.__setattr__(self, "grid", grid)
        if len(grid) != self.window or any(len(r) != self.window for r in grid):
            raise ValueError(f"grid must be {self.window}x{self.window}")
        for p in range(self.window):
            for q in range(self.window):
                kind = grid[p][q]
                if kind not in _BLOCK_KINDS:
                    raise ValueError(f"unknown block kind {kind!r} at ({p}, {q})")
                if abs(p - q) == 1 and kind != CONNECTIVITY:
                    raise ValueError(
                        f"block ({p}, {q}) links adjacent steps and must be "
                        f"{CONNECTIVITY!r}"
                    )
                if grid[q][p] != kind:
                    raise ValueError("layout grid must be symmetric under transpose")

    def replace_roles(self, mapping: dict) -> "FusionLayout":
        """New layout with block roles substituted (e.g. spatial -> temporal)."""
        grid = tuple(
            tuple(mapping.get(kind, kind) if abs(p - q) != 1 else kind
                  for q, kind in enumerate(row))
            for p, row in enumerate(self.grid)
        )
        return FusionLayout(self.window, grid, self.self_loops)


def fusion_graph(spatial: np.ndarray, temporal: np.ndarray,
                 layout: FusionLayout) -> np.ndarray:
    """Assemble the fused (K*N) x (K*N) adjacency from N x N parts.

    Node l at window step t occupies row t*N + l. Connectivity blocks are
    identities; with ``self_loops`` the full diagonal is set to 1.
    """
    spatial = np.asarray(spatial, dtype=np.float64)
    temporal = np.asarray(temporal, dtype=np.float64)
    if spatial.shape != temporal.shape or spatial.ndim != 2:
        raise ValueError("spatial and temporal graphs must share an N x N shape")
    n = spatial.shape[0]
    k = layout.window
    blocks = {SPATIAL: spatial, TEMPORAL: temporal,
              CONNECTIVITY: np.eye(n), ZERO: np.zeros((n, n))}
    out = np.zeros((k * n, k * n), dtype=np.float64)
    for p in range(k):
        for q in range(k):
            out[p * n:(p + 1) * n, q * n:(q + 1) * n] = blocks[layout.grid[p][q]]
    if layout.self_loops:
        np.fill_diagonal(out, 1.0)
    return out


def fusion_block(fused: np.ndarray, p: int, q: int, n_nodes: int) -> np.ndarray:
    """Extract block (p, q) of a fused adjacency (view, not a copy)."""
    return fused[p * n_nodes:(p + 1) * n_nodes, q * n_nodes:(q + 1) * n_nodes]


def sparsity(adj: np.ndarray) -> float:
    """Nonzero fraction of the matrix."""
    adj = np.asarray(adj)
    return float(np.count_nonzero(adj) / adj.size)


def row_normalize(adj: np.ndarray) -> np.ndarray:
    """Divide each row by its sum; all-zero rows are left untouched."""
    adj = np.asarray(adj, dtype=np.float64)
    sums = adj.sum(axis=1, keepdims=True)
    return np.divide(adj, sums, out=adj.copy(), where=sums > 0)
