"""Chebyshev filter parameterization, product composition and application.

Filters are expressed in the Chebyshev basis of the rescaled Laplacian.  Each
dimension owns one low-pass and one high-pass branch derived from a shared
nonnegative increment vector; their operator product is a single Chebyshev
polynomial of twice the degree, applied to N x C panels by the three-term
recurrence without ever forming an N x N matrix.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from haam.errors import InvalidInputError
from haam.graph import RescaledLaplacian


@dataclass
class GammaParams:
    """Per-dimension filter parameters.

    ``gamma0`` is fixed; ``gamma`` (length K) is learned and kept nonnegative.
    """

    gamma0: float
    gamma: np.ndarray
    dimension_id: int = 0

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.gamma.ndim != 1 or self.gamma.size < 1:
            raise InvalidInputError("gamma must be a nonempty vector")

    @property
    def K(self) -> int:
        return self.gamma.size

    def project(self) -> None:
        np.maximum(self.gamma, 0.0, out=self.gamma)


def branch_gammas(p: GammaParams) -> tuple[np.ndarray, np.ndarray]:
    """Prefix-difference (low) and prefix-sum (high) node values, length K+1."""
    csum = np.concatenate([[0.0], np.cumsum(p.gamma)])
    return p.gamma0 - csum, p.gamma0 + csum


def prefix_matrix(K: int) -> np.ndarray:
    """(K+1) x K matrix with ``low = gamma0 - P @ gamma`` and ``high = gamma0 + P @ gamma``."""
    return np.tril(np.ones((K + 1, K)), k=-1)


def chebyshev_nodes(K: int) -> np.ndarray:
    """The K+1 Chebyshev nodes, ordered by ascending value (low to high frequency)."""
    j = np.arange(K + 1)
    return np.cos((K - j + 0.5) * np.pi / (K + 1))


def cheb_basis(x: np.ndarray, degree: int) -> np.ndarray:
    """``T_0(x) .. T_degree(x)`` stacked along the first axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty((degree + 1,) + x.shape)
    out[0] = 1.0
    if degree >= 1:
        out[1] = x
    for k in range(1, degree):
        out[k + 1] = 2.0 * x * out[k] - out[k - 1]
    return out


@lru_cache(maxsize=32)
def _interp_matrix(K: int) -> np.ndarray:
    m = (2.0 / (K + 1)) * cheb_basis(chebyshev_nodes(K), K)
    m[0] *= 0.5
    m.setflags(write=False)
    return m


def interpolation_matrix(K: int) -> np.ndarray:
    """Linear map from node values (length K+1) to Chebyshev coefficients."""
    return _interp_matrix(K)


def gamma_to_theta(branch_gamma: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients of the degree-K interpolant through the node values.

    The constant term carries weight 1/(K+1) rather than 2/(K+1), which makes
    the resulting polynomial pass exactly through ``branch_gamma`` at the nodes.
    """
    g = np.asarray(branch_gamma, dtype=float)
    return interpolation_matrix(g.size - 1) @ g


def compose_product(low: np.ndarray, high: np.ndarray) -> np.ndarray:
    """Coefficients of ``f_low * f_high`` via ``T_i T_j = (T_{i+j} + T_{|i-j|}) / 2``."""
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    if low.shape != high.shape:
        raise InvalidInputError(f"branch lengths differ: {low.shape} vs {high.shape}")
    K = low.size - 1
    out = np.zeros(2 * K + 1)
    outer = 0.5 * np.outer(low, high)
    i, j = np.indices(outer.shape)
    np.add.at(out, (i + j).ravel(), outer.ravel())
    np.add.at(out, np.abs(i - j).ravel(), outer.ravel())
    return out


def compose_product_vjp(low: np.ndarray, high: np.ndarray,
                        grad_composed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pull a gradient on the composed coefficients back onto both branches."""
    K = low.size - 1
    i, j = np.indices((K + 1, K + 1))
    pair = 0.5 * (grad_composed[i + j] + grad_composed[np.abs(i - j)])
    return pair @ high, pair.T @ low


def _operator(lap) -> sp.spmatrix | np.ndarray:
    return lap.matrix if isinstance(lap, RescaledLaplacian) else lap


def cheb_panels(n_terms: int, lap, signal: np.ndarray) -> list[np.ndarray]:
    """``[T_0(L) S, T_1(L) S, ...]`` for ``n_terms`` terms."""
    op = _operator(lap)
    s = np.asarray(signal, dtype=float)
    if s.shape[0] != op.shape[0]:
        raise InvalidInputError(
            f"signal has {s.shape[0]} rows, operator is {op.shape[0]} x {op.shape[1]}")
    panels = [s]
    if n_terms > 1:
        panels.append(op @ s)
    for _ in range(2, n_terms):
        panels.append(2.0 * (op @ panels[-1]) - panels[-2])
    return panels[:n_terms]


def apply_cheb(coeffs: np.ndarray, lap, signal: np.ndarray) -> np.ndarray:
    """``sum_r coeffs[r] T_r(L) S`` by the three-term recurrence on panels.

    Only three panels are live at once; cost is O(R * nnz * C).
    """
    op = _operator(lap)
    coeffs = np.asarray(coeffs, dtype=float)
    s = np.asarray(signal, dtype=float)
    if s.shape[0] != op.shape[0]:
        raise InvalidInputError(
            f"signal has {s.shape[0]} rows, operator is {op.shape[0]} x {op.shape[1]}")
    out = coeffs[0] * s
    if coeffs.size == 1:
        return out
    prev, cur = s, op @ s
    out = out + coeffs[1] * cur
    for r in range(2, coeffs.size):
        prev, cur = cur, 2.0 * (op @ cur) - prev
        out = out + coeffs[r] * cur
    return out


def dense_cheb_poly(coeffs: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Dense ``sum_r coeffs[r] T_r(M)``; reference path for small matrices."""
    mat = np.asarray(mat.toarray() if sp.issparse(mat) else mat, dtype=float)
    n = mat.shape[0]
    t_prev, t_cur = np.eye(n), mat
    out = coeffs[0] * t_prev
    if len(coeffs) > 1:
        out = out + coeffs[1] * t_cur
    for r in range(2, len(coeffs)):
        t_prev, t_cur = t_cur, 2.0 * mat @ t_cur - t_prev
        out = out + coeffs[r] * t_cur
    return out


def eval_cheb(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Scalar Chebyshev series evaluated at points in the rescaled domain."""
    coeffs = np.asarray(coeffs, dtype=float)
    return np.tensordot(coeffs, cheb_basis(x, coeffs.size - 1), axes=1)


def eval_response(coeffs: np.ndarray, lambda_grid: np.ndarray,
                  lambda_max: float) -> np.ndarray:
    """Filter response at Laplacian eigenvalues ``lambda`` in ``[0, lambda_max]``."""
    lam = np.asarray(lambda_grid, dtype=float)
    if lam.size and (lam.min() < 0.0 or lam.max() > lambda_max):
        raise InvalidInputError(f"grid values must lie in [0, {lambda_max}]")
    return eval_cheb(coeffs, 2.0 * lam / lambda_max - 1.0)


@dataclass(frozen=True)
class CoeffDiagnostics:
    l1_low: float
    l1_high: float
    l1_composed: float
    bound_satisfied: bool


def coeff_l1_diagnostics(low: np.ndarray, high: np.ndarray,
                         composed: np.ndarray) -> CoeffDiagnostics:
    l1_low = float(np.abs(low).sum())
    l1_high = float(np.abs(high).sum())
    l1_comp = float(np.abs(composed).sum())
    return CoeffDiagnostics(l1_low, l1_high, l1_comp, l1_comp <= l1_low * l1_high + 1e-9)


@dataclass
class FilterBank:
    """Low, high and composed coefficients of one dimension."""

    low: np.ndarray
    high: np.ndarray
    composed: np.ndarray

    @classmethod
    def from_gammas(cls, p: GammaParams) -> FilterBank:
        g_low, g_high = branch_gammas(p)
        low, high = gamma_to_theta(g_low), gamma_to_theta(g_high)
        return cls(low, high, compose_product(low, high))


RESPONSE_COLUMNS = ("lambda", "low", "high", "composed", "pointwise_product")


def response_table(bank: FilterBank, lambda_max: float, grid_size: int = 512) -> np.ndarray:
    """Rows of ``lambda, low, high, composed, pointwise_product`` on a uniform grid."""
    lam = np.linspace(0.0, lambda_max, grid_size)
    low = eval_response(bank.low, lam, lambda_max)
    high = eval_response(bank.high, lam, lambda_max)
    comp = eval_response(bank.composed, lam, lambda_max)
    return np.column_stack([lam, low, high, comp, low * high])


def write_response(path: str | Path, table: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESPONSE_COLUMNS)
        for row in table:
            w.writerow([repr(float(v)) for v in row])
