"""Sparse consensus predictions by proximal gradient (ISTA).

Solves ``min_Y sum_d ||Y - Y_d||_F^2 + beta ||Y||_1`` starting from zero with
step ``1 / (4D)``, half the inverse Lipschitz constant of the smooth part.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from haam.errors import InvalidInputError


@dataclass(frozen=True)
class ConsensusConfig:
    beta: float = 1.0
    iterations: int = 200
    tol: float = 1e-10

    def __post_init__(self):
        if self.beta < 0:
            raise InvalidInputError("beta must be nonnegative")
        if self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")

    @staticmethod
    def step_size(n_dims: int) -> float:
        return 1.0 / (4.0 * n_dims)


@dataclass
class ConsensusResult:
    y_hat: np.ndarray
    objective_trace: list[float]
    dimension_mean: np.ndarray = field(repr=False)

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.y_hat))

    @property
    def iterations(self) -> int:
        return len(self.objective_trace) - 1


def soft_threshold(v: np.ndarray, lam: float) -> np.ndarray:
    if lam < 0:
        raise InvalidInputError("threshold must be nonnegative")
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def consensus_objective(y: np.ndarray, y_ds: list[np.ndarray], beta: float) -> float:
    return float(sum(((y - yd) ** 2).sum() for yd in y_ds) + beta * np.abs(y).sum())


def proximal_consensus(y_ds: list[np.ndarray],
                       cfg: ConsensusConfig | None = None) -> ConsensusResult:
    """Run ISTA from ``Y = 0``; the trace holds the objective at every iterate."""
    cfg = cfg or ConsensusConfig()
    if len(y_ds) == 0:
        raise InvalidInputError("need at least one dimension")
    y_ds = [np.asarray(y, dtype=float) for y in y_ds]
    shape = y_ds[0].shape
    if any(y.shape != shape for y in y_ds):
        raise InvalidInputError("per-dimension predictions differ in shape")
    D = len(y_ds)
    t = ConsensusConfig.step_size(D)
    total = np.sum(y_ds, axis=0)
    y = np.zeros(shape)
    trace = [consensus_objective(y, y_ds, cfg.beta)]
    for _ in range(cfg.iterations):
        grad = 2.0 * (D * y - total)
        y_new = soft_threshold(y - t * grad, cfg.beta * t)
        delta = np.linalg.norm(y_new - y)
        y = y_new
        trace.append(consensus_objective(y, y_ds, cfg.beta))
        if delta < cfg.tol:
            break
    return ConsensusResult(y_hat=y, objective_trace=trace, dimension_mean=total / D)


def predict_labels(r: ConsensusResult) -> np.ndarray:
    """Row-wise argmax (lowest index wins ties); all-zero rows use the dimension mean."""
    pred = r.y_hat.argmax(axis=1)
    empty = ~np.any(r.y_hat != 0, axis=1)
    if np.any(empty):
        pred[empty] = r.dimension_mean[empty].argmax(axis=1)
    return pred
