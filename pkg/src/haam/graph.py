"""Sparse multiplex graphs, rescaled Laplacians and homophily measurement."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from haam.errors import InvalidInputError, NumericError

LAMBDA_FLOOR = 1e-3
LAMBDA_INFLATION = 1.0 + 1e-6
DENSE_LIMIT = 256


@dataclass(frozen=True)
class DimensionGraph:
    """One dimension of a multiplex graph: binary symmetric adjacency in CSR form.

    Self-loops are never stored; the Laplacian adds them analytically.
    """

    n_nodes: int
    adjacency: sp.csr_matrix
    dimension_id: int = 0

    def __post_init__(self):
        a = self.adjacency
        if a.shape != (self.n_nodes, self.n_nodes):
            raise InvalidInputError(
                f"adjacency shape {a.shape} does not match n_nodes={self.n_nodes}")

    @property
    def nnz(self) -> int:
        """Number of ordered adjacency entries (twice the undirected edge count)."""
        return int(self.adjacency.nnz)

    @property
    def n_edges(self) -> int:
        return self.nnz // 2

    def edge_pairs(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with u < v, sorted lexicographically."""
        coo = self.adjacency.tocoo()
        keep = coo.row < coo.col
        pairs = np.stack([coo.row[keep], coo.col[keep]], axis=1).astype(np.int64)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    @cached_property
    def laplacian(self) -> RescaledLaplacian:
        return build_rescaled_laplacian(self)


@dataclass(frozen=True)
class MultiplexGraph:
    dimensions: tuple[DimensionGraph, ...]
    n_nodes: int = field(init=False)

    def __post_init__(self):
        dims = tuple(self.dimensions)
        if not dims:
            raise InvalidInputError("a multiplex graph needs at least one dimension")
        sizes = {g.n_nodes for g in dims}
        if len(sizes) != 1:
            raise InvalidInputError(f"dimensions disagree on node count: {sorted(sizes)}")
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "n_nodes", sizes.pop())

    @property
    def n_dims(self) -> int:
        return len(self.dimensions)

    def __len__(self):
        return len(self.dimensions)

    def __iter__(self):
        return iter(self.dimensions)

    def __getitem__(self, d: int) -> DimensionGraph:
        return self.dimensions[d]

    def laplacians(self) -> list[RescaledLaplacian]:
        return [g.laplacian for g in self.dimensions]


@dataclass(frozen=True)
class RescaledLaplacian:
    matrix: sp.csr_matrix
    lambda_max: float
    dimension_id: int = 0

    @property
    def shape(self):
        return self.matrix.shape


def symmetrize(edges: Iterable[Sequence[int]] | np.ndarray, n_nodes: int,
               dimension_id: int = 0) -> DimensionGraph:
    """Build a simple undirected graph from an edge list.

    Reverse edges are added, duplicates and self-loops dropped.
    """
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                     dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputError(f"edge list must have shape (E, 2), got {arr.shape}")
    if n_nodes < 0:
        raise InvalidInputError("n_nodes must be nonnegative")
    if arr.size and (arr.min() < 0 or arr.max() >= n_nodes):
        bad = arr[(arr < 0).any(axis=1) | (arr >= n_nodes).any(axis=1)][0]
        raise InvalidInputError(
            f"edge ({bad[0]}, {bad[1]}) out of range for {n_nodes} nodes")
    arr = arr[arr[:, 0] != arr[:, 1]]
    rows = np.concatenate([arr[:, 0], arr[:, 1]])
    cols = np.concatenate([arr[:, 1], arr[:, 0]])
    adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n_nodes, n_nodes))
    # duplicates were summed by the constructor
    adj.data[:] = 1.0
    adj.sort_indices()
    adj.eliminate_zeros()
    return DimensionGraph(n_nodes=n_nodes, adjacency=adj, dimension_id=dimension_id)


def power_iteration(matvec: Callable[[np.ndarray], np.ndarray], n: int, *,
                    tol: float = 1e-6, max_iter: int = 500, seed: int = 0) -> float:
    """Dominant eigenvalue of a symmetric PSD operator given as a mat-vec.

    Stops once the eigen-residual ``||A x - lam x||`` falls below ``tol * lam``,
    which is stricter than watching successive estimates stall.
    """
    if n == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = matvec(x)
        if not np.all(np.isfinite(y)):
            raise NumericError("non-finite values during power iteration")
        lam = float(x @ y)
        y_norm = np.linalg.norm(y)
        if y_norm == 0.0:
            return 0.0
        if np.linalg.norm(y - lam * x) <= tol * abs(lam):
            break
        x = y / y_norm
    return lam


def estimate_lambda_max(lap: sp.spmatrix | np.ndarray, *, tol: float = 1e-6,
                        max_iter: int = 500, method: str = "auto") -> float:
    """Largest eigenvalue of a symmetric PSD matrix, inflated and floored.

    ``method="auto"`` solves small operators densely and large ones with
    Lanczos, falling back to power iteration if Lanczos fails to converge.
    Plain power iteration stalls on clustered top eigenvalues and can then
    undershoot by far more than the safety margin.  The estimate is multiplied
    by ``1 + 1e-6`` and clamped below at ``1e-3`` so rescaling can neither blow
    up nor push the spectrum past 1.
    """
    data = lap.data if sp.issparse(lap) else np.asarray(lap)
    if not np.all(np.isfinite(data)):
        raise NumericError("operator has non-finite entries")
    n = lap.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "lanczos"
    if n == 0:
        lam = 0.0
    elif method == "dense":
        dense = lap.toarray() if sp.issparse(lap) else np.asarray(lap, dtype=float)
        lam = float(np.linalg.eigvalsh(dense)[-1])
    elif method == "lanczos":
        v0 = np.random.default_rng(0).standard_normal(n)
        try:
            lam = float(eigsh(lap, k=1, which="LA", v0=v0, tol=0.0,
                              return_eigenvectors=False)[0])
        except ArpackNoConvergence:
            lam = power_iteration(lambda v: lap @ v, n, tol=tol, max_iter=max_iter)
    elif method == "power":
        lam = power_iteration(lambda v: lap @ v, n, tol=tol, max_iter=max_iter)
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    return max(lam * LAMBDA_INFLATION, LAMBDA_FLOOR)


def normalized_laplacian(g: DimensionGraph) -> sp.csr_matrix:
    """``I - D^-1/2 (A + I) D^-1/2`` with degrees taken from ``A + I``."""
    n = g.n_nodes
    a_hat = (g.adjacency + sp.identity(n, format="csr")).tocsr()
    a_hat.sort_indices()
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    rows = np.repeat(np.arange(n), np.diff(a_hat.indptr))
    norm = a_hat.copy()
    norm.data = inv_sqrt[rows] * inv_sqrt[a_hat.indices]
    lap = sp.identity(n, format="csr") - norm
    lap = lap.tocsr()
    lap.sort_indices()
    return lap


def build_rescaled_laplacian(g: DimensionGraph) -> RescaledLaplacian:
    if g.n_nodes == 0:
        raise InvalidInputError("cannot build a Laplacian for a zero-node graph")
    lap = normalized_laplacian(g)
    lam = estimate_lambda_max(lap)
    n = g.n_nodes
    scaled = (lap * (2.0 / lam) - sp.identity(n, format="csr")).tocsr()
    scaled.sort_indices()
    return RescaledLaplacian(matrix=scaled, lambda_max=lam, dimension_id=g.dimension_id)


def class_connectivity(g: DimensionGraph, labels: np.ndarray,
                       n_classes: int | None = None) -> np.ndarray:
    """C x C counts of ordered adjacency entries between class pairs."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (g.n_nodes,):
        raise InvalidInputError(
            f"labels have shape {labels.shape}, expected ({g.n_nodes},)")
    c = int(n_classes if n_classes is not None else (labels.max() + 1 if labels.size else 0))
    coo = g.adjacency.tocoo()
    flat = labels[coo.row] * c + labels[coo.col]
    return np.bincount(flat, minlength=c * c).reshape(c, c)


def homophily_ratio(g: DimensionGraph, labels: np.ndarray) -> float:
    """Fraction of edges joining same-class nodes; 1.0 for an edgeless graph."""
    counts = class_connectivity(g, labels)
    total = counts.sum()
    if total == 0:
        return 1.0
    return float(np.trace(counts) / total)
