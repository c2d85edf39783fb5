"""Synthetic multiplex graphs with a target homophily ratio per dimension."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from haam.dataio import DatasetBundle, SplitSpec, make_splits
from haam.errors import InvalidInputError
from haam.graph import DimensionGraph, MultiplexGraph, homophily_ratio, symmetrize


@dataclass
class SynthConfig:
    n_nodes: int = 600
    n_classes: int = 4
    rho: tuple[float, ...] = (0.9, 0.9, 0.9)
    mean_degree: float = 12.0
    feature_dim: int = 100
    feature_separation: float = 3.0
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.1, 0.1, 0.8)

    def __post_init__(self):
        self.rho = tuple(float(r) for r in self.rho)
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        if self.n_classes < 2:
            raise InvalidInputError("need at least two classes")
        if self.n_nodes < 3 * self.n_classes:
            raise InvalidInputError("need at least three nodes per class")
        if not self.rho:
            raise InvalidInputError("need at least one dimension")
        if any(not 0.0 < r < 1.0 for r in self.rho):
            raise InvalidInputError(f"homophily targets must lie in (0, 1), got {self.rho}")
        if self.mean_degree <= 0 or self.feature_dim < 1 or self.feature_separation < 0:
            raise InvalidInputError("mean_degree and feature_dim must be positive, "
                                    "feature_separation nonnegative")

    @property
    def n_dims(self) -> int:
        return len(self.rho)


@dataclass(frozen=True)
class ClassMixMatrix:
    b: np.ndarray
    rho: float = field(default=np.nan)


def build_mix_matrix(rho_d: float, n_classes: int) -> ClassMixMatrix:
    """Diagonal ``rho``, off-diagonal ``(1 - rho) / (C - 1)``; rows sum to one."""
    if n_classes < 2:
        raise InvalidInputError("need at least two classes")
    if not 0.0 <= rho_d <= 1.0:
        raise InvalidInputError("rho must lie in [0, 1]")
    b = np.full((n_classes, n_classes), (1.0 - rho_d) / (n_classes - 1))
    np.fill_diagonal(b, rho_d)
    return ClassMixMatrix(b=b, rho=rho_d)


def balanced_labels(n_nodes: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n_nodes) % n_classes)


def _decode_upper(k: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map linear indices over ``{(i, j): i < j < n}`` (row-major) to pairs."""
    i_all = np.arange(n)
    starts = i_all * (2 * n - i_all - 1) // 2
    i = np.searchsorted(starts, k, side="right") - 1
    j = k - starts[i] + i + 1
    return i, j


def sample_graph(cfg: SynthConfig, labels: np.ndarray, mix: ClassMixMatrix,
                 rng: np.random.Generator, dimension_id: int = 0) -> DimensionGraph:
    """Independent Bernoulli edges per node pair, block by block.

    The expected number of ordered adjacency entries between classes a and b is
    proportional to ``B[a, b] * n_a * n_b`` and sums to ``N * mean_degree``, so the
    expected homophily equals the mix-matrix diagonal for balanced classes.
    """
    labels = np.asarray(labels)
    n = labels.size
    members = [np.flatnonzero(labels == c) for c in range(mix.b.shape[0])]
    sizes = np.array([m.size for m in members], dtype=float)
    weight = mix.b * np.outer(sizes, sizes)
    expected = n * cfg.mean_degree * weight / weight.sum()

    chunks = []
    for a in range(len(members)):
        for b in range(a, len(members)):
            if a == b:
                n_pairs = members[a].size * (members[a].size - 1) // 2
                want = expected[a, a] / 2.0
            else:
                n_pairs = members[a].size * members[b].size
                want = expected[a, b]
            if n_pairs == 0 or want <= 0:
                continue
            p = want / n_pairs
            if p > 1.0:
                warnings.warn(f"class block ({a}, {b}) saturated; mean degree not reachable",
                              RuntimeWarning)
                p = 1.0
            m = rng.binomial(n_pairs, p)
            k = rng.choice(n_pairs, size=m, replace=False)
            if a == b:
                i, j = _decode_upper(k, members[a].size)
                chunks.append(np.stack([members[a][i], members[a][j]], axis=1))
            else:
                i, j = np.divmod(k, members[b].size)
                chunks.append(np.stack([members[a][i], members[b][j]], axis=1))
    edges = np.concatenate(chunks) if chunks else np.zeros((0, 2), dtype=np.int64)
    return symmetrize(edges, n, dimension_id)


def sample_features(cfg: SynthConfig, labels: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    """Class means on a sphere of radius ``feature_separation`` plus unit Gaussian noise."""
    means = rng.standard_normal((cfg.n_classes, cfg.feature_dim))
    means *= cfg.feature_separation / np.linalg.norm(means, axis=1, keepdims=True)
    return means[labels] + rng.standard_normal((labels.size, cfg.feature_dim))


def generate(cfg: SynthConfig) -> DatasetBundle:
    """Labels, one graph per target homophily, features and stratified splits.

    Every component draws from its own child of the config seed, so adding a
    dimension does not change the others.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(3 + cfg.n_dims)
    labels = balanced_labels(cfg.n_nodes, cfg.n_classes, np.random.default_rng(seeds[0]))
    features = sample_features(cfg, labels, np.random.default_rng(seeds[1]))
    split_seed = int(np.random.default_rng(seeds[2]).integers(2**31))
    splits = make_splits(labels, SplitSpec(cfg.split_fractions, True, split_seed))
    dims = [sample_graph(cfg, labels, build_mix_matrix(r, cfg.n_classes),
                         np.random.default_rng(seeds[3 + d]), d)
            for d, r in enumerate(cfg.rho)]
    graph = MultiplexGraph(tuple(dims))
    meta = {
        "dimensions": [f"dim{d}" for d in range(cfg.n_dims)],
        "synth_config": asdict(cfg),
        "homophily": [homophily_ratio(g, labels) for g in dims],
    }
    return DatasetBundle(features=features, labels=labels, splits=splits, graph=graph,
                         n_classes=cfg.n_classes, meta=meta)
