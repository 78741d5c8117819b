"""Loading TUD-format graph collections and building node features."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

FEATURE_MODES = ("raw-continuous", "one-hot-labels", "degree", "extended-concat")


class DatasetError(Exception):
    """Raised when a dataset directory cannot be read."""


class RecipeError(DatasetError):
    """Raised when a feature recipe asks for data the files do not provide."""


class EncodingError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    """One attributed, undirected graph.

    ``adjacency`` is a symmetric 0/1 CSR matrix with an empty diagonal; the
    self loops of the propagation operator are added downstream.
    """

    adjacency: sp.csr_matrix
    attributes: np.ndarray
    graph_id: int = 0

    def __post_init__(self):
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n) or n < 1:
            raise ValueError(f"adjacency must be square and non-empty, got {self.adjacency.shape}")
        if self.attributes.ndim != 2 or self.attributes.shape[0] != n or self.attributes.shape[1] < 1:
            raise ValueError(
                f"attributes must have shape ({n}, q>=1), got {self.attributes.shape}"
            )
        if not np.all(np.isfinite(self.attributes)):
            raise ValueError("attributes must be finite")
        if self.adjacency.diagonal().any():
            raise ValueError("adjacency diagonal must be zero")
        if (self.adjacency != self.adjacency.T).nnz:
            raise ValueError("adjacency must be symmetric")
        self.attributes.setflags(write=False)

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_features(self) -> int:
        return self.attributes.shape[1]

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    @classmethod
    def from_edges(cls, n: int, edges: Sequence[tuple[int, int]], attributes, graph_id: int = 0) -> "Graph":
        """Build a graph from 0-based undirected edge pairs (duplicates collapse)."""
        return cls(_symmetric_adjacency(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2)),
                   np.asarray(attributes, dtype=np.float64), graph_id)


@dataclass(frozen=True)
class GraphDataset:
    graphs: tuple
    labels: np.ndarray  # contiguous class ids 0..C-1, one per graph
    class_set: tuple  # original label values, index = class id
    name: str = ""
    degree_values: Optional[tuple] = None  # degree of each one-hot column, degree recipe only

    def __post_init__(self):
        if len(self.graphs) != len(self.labels):
            raise ValueError("one label per graph required")
        if not self.class_set:
            raise ValueError("class_set must be non-empty")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_set)):
            raise ValueError("label outside class_set")
        qs = {g.num_features for g in self.graphs}
        if len(qs) > 1:
            raise ValueError(f"graphs disagree on attribute dimension: {sorted(qs)}")
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def num_features(self) -> int:
        return self.graphs[0].num_features

    @property
    def num_classes(self) -> int:
        return len(self.class_set)

    def average_node_count(self) -> float:
        return float(np.mean([g.node_count for g in self.graphs]))


@dataclass(frozen=True)
class FeatureRecipe:
    mode: str = "one-hot-labels"
    degree_cap: Optional[int] = None
    standardize: bool = False  # per-column z-scoring of continuous attributes

    def __post_init__(self):
        if self.mode not in FEATURE_MODES:
            raise RecipeError(f"unknown feature mode {self.mode!r}; expected one of {FEATURE_MODES}")
        if self.degree_cap is not None and self.degree_cap < 1:
            raise RecipeError("degree_cap must be >= 1")


def one_hot_encode(labels, domain_size: int) -> np.ndarray:
    labels = np.asarray(labels)
    if domain_size < 1:
        raise EncodingError("domain_size must be positive")
    if labels.ndim != 1:
        raise EncodingError("labels must be a 1-D integer column")
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.mod(labels, 1) == 0):
            raise EncodingError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= domain_size):
        bad = labels[(labels < 0) | (labels >= domain_size)][0]
        raise EncodingError(f"label {bad} outside [0, {domain_size})")
    out = np.zeros((labels.size, domain_size))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _symmetric_adjacency(n: int, edges: np.ndarray) -> sp.csr_matrix:
    edges = edges[edges[:, 0] != edges[:, 1]]
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
    adj.data[:] = 1.0  # duplicate entries were summed by the conversion
    adj.sort_indices()
    return adj


def _read_ints(path: Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)


def _required(directory: Path, name: str, suffix: str) -> Path:
    path = directory / f"{name}_{suffix}.txt"
    if not path.is_file():
        raise DatasetError(f"missing required file {path.name} in {directory}")
    return path


def _encode_label_columns(node_labels: np.ndarray) -> np.ndarray:
    # each column gets its own dataset-wide domain, blocks are concatenated
    blocks = []
    for col in node_labels.T:
        values, codes = np.unique(col, return_inverse=True)
        blocks.append(one_hot_encode(codes, len(values)))
    return np.hstack(blocks)


def tud_load(directory, recipe: FeatureRecipe | None = None, name: str | None = None) -> GraphDataset:
    """Load a TUD-format dataset directory.

    Files are ``<DS>_A.txt`` (1-based edge pairs), ``<DS>_graph_indicator.txt``,
    ``<DS>_graph_labels.txt`` and at least one of ``<DS>_node_labels.txt`` /
    ``<DS>_node_attributes.txt``. ``<DS>`` defaults to the directory name.
    Directed or duplicated edges are symmetrized and collapsed silently.
    Graph labels are remapped to contiguous ids in sorted order; the original
    values are kept in ``class_set``.
    """
    recipe = recipe or FeatureRecipe()
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"dataset directory {directory} does not exist")
    name = name or directory.name

    edges = _read_ints(_required(directory, name, "A")) - 1
    indicator = _read_ints(_required(directory, name, "graph_indicator"))[:, 0] - 1
    raw_labels = _read_ints(_required(directory, name, "graph_labels"))[:, 0]

    labels_path = directory / f"{name}_node_labels.txt"
    attrs_path = directory / f"{name}_node_attributes.txt"
    if not labels_path.is_file() and not attrs_path.is_file():
        raise DatasetError(f"{directory} has neither {labels_path.name} nor {attrs_path.name}")
    node_labels = _read_ints(labels_path) if labels_path.is_file() else None
    node_attrs = np.loadtxt(attrs_path, delimiter=",", ndmin=2) if attrs_path.is_file() else None

    total_nodes = indicator.size
    num_graphs = raw_labels.size
    if indicator.min() < 0 or indicator.max() != num_graphs - 1:
        raise DatasetError("graph indicator does not match the number of graph labels")
    if np.any(np.diff(indicator) < 0):
        raise DatasetError("graph indicator must be non-decreasing")
    for arr, label in ((node_labels, "node labels"), (node_attrs, "node attributes")):
        if arr is not None and arr.shape[0] != total_nodes:
            raise DatasetError(f"{label} have {arr.shape[0]} rows, expected {total_nodes}")
    if edges.size and (edges.min() < 0 or edges.max() >= total_nodes):
        raise DatasetError("edge list references unknown nodes")

    if recipe.mode == "raw-continuous":
        if node_attrs is None:
            raise RecipeError(f"recipe {recipe.mode} needs {attrs_path.name}")
        features = node_attrs.astype(np.float64)
    elif recipe.mode == "one-hot-labels":
        if node_labels is None:
            raise RecipeError(f"recipe {recipe.mode} needs {labels_path.name}")
        features = _encode_label_columns(node_labels)
    elif recipe.mode == "extended-concat":
        if node_labels is None or node_attrs is None:
            raise RecipeError(f"recipe {recipe.mode} needs both {attrs_path.name} and {labels_path.name}")
        features = np.hstack([node_attrs.astype(np.float64), _encode_label_columns(node_labels)])
    else:
        features = None  # degree features need the adjacency first

    if recipe.standardize and recipe.mode in ("raw-continuous", "extended-concat"):
        k = node_attrs.shape[1]
        cont = features[:, :k]
        std = cont.std(axis=0)
        std[std == 0] = 1.0
        features[:, :k] = (cont - cont.mean(axis=0)) / std

    starts = np.searchsorted(indicator, np.arange(num_graphs + 1))
    if np.any(np.diff(starts) == 0):
        raise DatasetError("some graph has no nodes")
    if edges.size:
        owner_src, owner_dst = indicator[edges[:, 0]], indicator[edges[:, 1]]
        if np.any(owner_src != owner_dst):
            raise DatasetError("edge connects nodes of different graphs")
        order = np.argsort(owner_src, kind="stable")
        edges, owner = edges[order], owner_src[order]
        edge_starts = np.searchsorted(owner, np.arange(num_graphs + 1))
    else:
        edge_starts = np.zeros(num_graphs + 1, dtype=np.int64)

    adjs = []
    for g in range(num_graphs):
        lo, hi = starts[g], starts[g + 1]
        local = edges[edge_starts[g]:edge_starts[g + 1]] - lo
        adjs.append(_symmetric_adjacency(hi - lo, local))

    degree_values = None
    if recipe.mode == "degree":
        degree_all = np.concatenate([np.asarray(a.sum(axis=1)).ravel().astype(np.int64) for a in adjs])
        if recipe.degree_cap is not None:
            # fixed width: degrees 0..cap-1, larger ones share the last column
            degree_values = np.arange(recipe.degree_cap)
            codes = np.minimum(degree_all, recipe.degree_cap - 1)
        else:
            # one column per degree value observed anywhere in the dataset
            degree_values, codes = np.unique(degree_all, return_inverse=True)
        features = one_hot_encode(codes, degree_values.size)

    class_values, class_ids = np.unique(raw_labels, return_inverse=True)
    graphs = tuple(
        Graph(adjs[g], np.ascontiguousarray(features[starts[g]:starts[g + 1]]), g)
        for g in range(num_graphs)
    )
    ds = GraphDataset(graphs, class_ids.astype(np.int64), tuple(int(v) for v in class_values), name,
                      None if degree_values is None else tuple(int(v) for v in degree_values))
    log.debug("loaded %s: %d graphs, q=%d, classes=%s", name, len(ds), ds.num_features, ds.class_set)
    return ds


def _largest_remainder(ideal: np.ndarray, total: int, rng: np.random.Generator) -> np.ndarray:
    base = np.floor(ideal).astype(np.int64)
    left = total - int(base.sum())
    if left > 0:
        frac = ideal - base
        # random key breaks remainder ties, seeded
        order = np.lexsort((rng.random(ideal.size), -frac))
        base[order[:left]] += 1
    return base


def stratified_split(dataset: GraphDataset, train_fraction: float, seed: int):
    """Seeded stratified split into (train indices, test indices).

    The overall train count is ``round(fraction * N)``; it is distributed over
    classes by largest remainder, so each class is within one instance of its
    ideal share.
    """
    if not 0.0 < train_fraction < 1.0:
        raise SplitError("train_fraction must lie in (0, 1)")
    labels = np.asarray(dataset.labels)
    classes, counts = np.unique(labels, return_counts=True)
    if np.any(counts < 2):
        raise SplitError(f"class {classes[counts < 2][0]} has a single member")
    rng = np.random.default_rng(seed)
    total_train = int(math.floor(train_fraction * labels.size + 0.5))
    per_class = _largest_remainder(train_fraction * counts, total_train, rng)
    train, test = [], []
    for c, n_train in zip(classes, per_class):
        members = rng.permutation(np.flatnonzero(labels == c))
        train.append(members[:n_train])
        test.append(members[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_folds(labels, indices, n_folds: int, seed: int) -> list[np.ndarray]:
    """Partition ``indices`` into ``n_folds`` class-balanced folds."""
    labels = np.asarray(labels)
    indices = np.asarray(indices)
    if n_folds < 2 or n_folds > indices.size:
        raise SplitError(f"cannot make {n_folds} folds from {indices.size} items")
    rng = np.random.default_rng(seed)
    assignment = np.empty(indices.size, dtype=np.int64)
    offset = 0
    for c in np.unique(labels[indices]):
        pos = rng.permutation(np.flatnonzero(labels[indices] == c))
        # round-robin continues across classes so fold sizes stay balanced
        assignment[pos] = (np.arange(pos.size) + offset) % n_folds
        offset += pos.size
    return [np.sort(indices[assignment == f]) for f in range(n_folds)]
