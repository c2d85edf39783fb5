"""Dataset bundles, on-disk format, splits and test-time perturbations.

Directory layout::

    meta.json        format tag, N, F, C, D, dimension names, realized homophily
    features.csv     N rows of F comma-separated decimals (%.17g, bit-exact)
    labels.csv       header ``node_id,label`` then one row per node
    edges_<d>.tsv    one undirected edge per line, ``u<TAB>v`` with u < v
    splits.csv       header ``node_id,split`` with split in {train, val, test}
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from haam.errors import DataFormatError, InvalidInputError
from haam.graph import MultiplexGraph, homophily_ratio, symmetrize

DATASET_FORMAT = "haam-dataset"
DATASET_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class DatasetBundle:
    features: np.ndarray
    labels: np.ndarray
    splits: dict[str, np.ndarray]
    graph: MultiplexGraph
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = {k: np.asarray(v, dtype=np.int64) for k, v in self.splits.items()}
        self.validate()

    @property
    def n_nodes(self) -> int:
        return self.labels.size

    @property
    def one_hot(self) -> np.ndarray:
        y = np.zeros((self.n_nodes, self.n_classes))
        y[np.arange(self.n_nodes), self.labels] = 1.0
        return y

    def validate(self) -> None:
        n = self.labels.size
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise InvalidInputError(
                f"features have {self.features.shape[0]} rows but there are {n} labels")
        if self.graph.n_nodes != n:
            raise InvalidInputError(f"graph has {self.graph.n_nodes} nodes, labels {n}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InvalidInputError(f"labels outside [0, {self.n_classes})")
        seen = np.zeros(n, dtype=bool)
        for name, idx in self.splits.items():
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise InvalidInputError(f"split {name!r} has out-of-range indices")
            if np.any(seen[idx]) or np.unique(idx).size != idx.size:
                raise InvalidInputError(f"split {name!r} overlaps another split")
            seen[idx] = True

    def homophily(self) -> list[float]:
        return [homophily_ratio(g, self.labels) for g in self.graph]


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.1, 0.1, 0.8)
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise InvalidInputError("split fractions must be three positive numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise InvalidInputError(f"split fractions sum to {sum(self.fractions)}, not 1")


def _split_counts(n: int, fractions) -> tuple[int, int, int]:
    n_train = max(1, int(np.floor(fractions[0] * n + 0.5)))
    n_val = max(1, int(np.floor(fractions[1] * n + 0.5)))
    if n_train + n_val >= n:
        raise InvalidInputError(f"group of {n} nodes is too small for the split fractions")
    return n_train, n_val, n - n_train - n_val


def make_splits(labels: np.ndarray, spec: SplitSpec | None = None) -> dict[str, np.ndarray]:
    """Stratified (per-class) or plain random train/val/test split; indices sorted."""
    spec = spec or SplitSpec()
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(spec.seed)
    groups = ([np.flatnonzero(labels == c) for c in np.unique(labels)]
              if spec.stratified else [np.arange(labels.size)])
    parts = {k: [] for k in SPLIT_NAMES}
    for members in groups:
        if members.size < 3:
            raise InvalidInputError(
                f"class {labels[members[0]] if members.size else '?'} has fewer than 3 nodes")
        n_train, n_val, _ = _split_counts(members.size, spec.fractions)
        perm = rng.permutation(members)
        parts["train"].append(perm[:n_train])
        parts["val"].append(perm[n_train:n_train + n_val])
        parts["test"].append(perm[n_train + n_val:])
    return {k: np.sort(np.concatenate(v)) for k, v in parts.items()}


# -- perturbations ------------------------------------------------------------

def perturb_features(bundle: DatasetBundle, p: float, seed: int) -> DatasetBundle:
    """Zero each feature entry independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError("p must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    mask = rng.random(bundle.features.shape) < p
    return dataclasses.replace(bundle, features=np.where(mask, 0.0, bundle.features))


def perturb_edges(bundle: DatasetBundle, p: float, seed: int) -> DatasetBundle:
    """Drop each undirected edge of every dimension independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise InvalidInputError("p must lie in [0, 1]")
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(bundle.graph.n_dims)]
    dims = []
    for g, rng in zip(bundle.graph, rngs):
        pairs = g.edge_pairs()
        keep = rng.random(len(pairs)) >= p
        dims.append(symmetrize(pairs[keep], g.n_nodes, g.dimension_id))
    return dataclasses.replace(bundle, graph=MultiplexGraph(tuple(dims)))


# -- serialization ------------------------------------------------------------

def save_dataset(bundle: DatasetBundle, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = dict(bundle.meta)
    meta.update({
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "n_nodes": bundle.n_nodes,
        "n_features": int(bundle.features.shape[1]),
        "n_classes": bundle.n_classes,
        "n_dims": bundle.graph.n_dims,
        "dimensions": meta.get("dimensions") or [f"dim{d}" for d in range(bundle.graph.n_dims)],
        "homophily": bundle.homophily(),
    })
    (directory / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    np.savetxt(directory / "features.csv", bundle.features, delimiter=",", fmt="%.17g")
    with open(directory / "labels.csv", "w", newline="") as fh:
        fh.write("node_id,label\n")
        fh.writelines(f"{i},{c}\n" for i, c in enumerate(bundle.labels))
    for d, g in enumerate(bundle.graph):
        with open(directory / f"edges_{d}.tsv", "w") as fh:
            fh.writelines(f"{u}\t{v}\n" for u, v in g.edge_pairs())
    rows = sorted((int(i), name) for name, idx in bundle.splits.items() for i in idx)
    with open(directory / "splits.csv", "w", newline="") as fh:
        fh.write("node_id,split\n")
        fh.writelines(f"{i},{name}\n" for i, name in rows)
    return directory


def _read_int_table(path: Path, n_cols: int, sep: str,
                    header: bool) -> list[tuple[int, list[str]]]:
    if not path.exists():
        raise DataFormatError("missing file", path)
    rows = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if header and lineno == 1:
                continue
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) != n_cols:
                raise DataFormatError(f"expected {n_cols} fields, got {len(parts)}", path, lineno)
            rows.append((lineno, parts))
    return rows


def _parse_int(value: str, path: Path, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise DataFormatError(f"not an integer: {value!r}", path, lineno) from None


def _read_features(path: Path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    except ValueError:
        pass
    # locate the offending line for a useful message
    with open(path) as fh:
        width = None
        for lineno, line in enumerate(fh, start=1):
            fields = line.strip().split(",")
            try:
                [float(f) for f in fields]
            except ValueError:
                raise DataFormatError("non-numeric feature value", path, lineno) from None
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise DataFormatError(f"expected {width} columns, got {len(fields)}",
                                      path, lineno)
    raise DataFormatError("unreadable feature table", path)


def load_dataset(directory: str | Path) -> DatasetBundle:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError:
        raise DataFormatError("missing meta.json", meta_path) from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON: {exc.msg}", meta_path, exc.lineno) from None
    if meta.get("format") != DATASET_FORMAT:
        raise DataFormatError("not a dataset directory", meta_path)
    try:
        n, n_classes, n_dims = meta["n_nodes"], meta["n_classes"], meta["n_dims"]
    except KeyError as exc:
        raise DataFormatError(f"meta.json lacks {exc.args[0]!r}", meta_path) from None

    feat_path = directory / "features.csv"
    if not feat_path.exists():
        raise DataFormatError("missing features file", feat_path)
    features = _read_features(feat_path)
    if n == 0:
        features = features.reshape(0, meta["n_features"])

    lab_path = directory / "labels.csv"
    labels = np.full(n, -1, dtype=np.int64)
    rows = _read_int_table(lab_path, 2, ",", header=True)
    if len(rows) != n:
        raise DataFormatError(f"{len(rows)} labels for {n} nodes", lab_path)
    for lineno, (node, lab) in rows:
        i = _parse_int(node, lab_path, lineno)
        if not 0 <= i < n:
            raise DataFormatError(f"node id {i} out of range", lab_path, lineno)
        labels[i] = _parse_int(lab, lab_path, lineno)
    if features.shape[0] != n:
        raise DataFormatError(f"{features.shape[0]} feature rows but {n} nodes", feat_path)

    dims = []
    for d in range(n_dims):
        path = directory / f"edges_{d}.tsv"
        if not path.exists():
            name = meta.get("dimensions", [None] * n_dims)[d]
            raise DataFormatError(f"missing edge file for dimension {d} ({name})", path)
        rows = _read_int_table(path, 2, "\t", header=False)
        pairs = np.array([[_parse_int(u, path, ln), _parse_int(v, path, ln)]
                          for ln, (u, v) in rows], dtype=np.int64).reshape(-1, 2)
        try:
            dims.append(symmetrize(pairs, n, d))
        except InvalidInputError as exc:
            raise DataFormatError(str(exc), path) from None

    split_path = directory / "splits.csv"
    buckets = {k: [] for k in SPLIT_NAMES}
    for lineno, (node, name) in _read_int_table(split_path, 2, ",", header=True):
        if name not in buckets:
            raise DataFormatError(f"unknown split {name!r}", split_path, lineno)
        buckets[name].append(_parse_int(node, split_path, lineno))
    splits = {k: np.array(sorted(v), dtype=np.int64) for k, v in buckets.items()}

    extra = {k: v for k, v in meta.items()
             if k not in ("format", "version", "n_nodes", "n_features", "n_classes", "n_dims")}
    try:
        return DatasetBundle(features=features, labels=labels, splits=splits,
                             graph=MultiplexGraph(tuple(dims)), n_classes=n_classes, meta=extra)
    except InvalidInputError as exc:
        raise DataFormatError(str(exc), directory) from None
