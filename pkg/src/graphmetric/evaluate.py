"""Distance matrices, k-NN classification and the model-selection protocol."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import GraphDataset, stratified_folds, stratified_split
from .embed import FeatureCache, SgcnParams, forward, init_params
from .engine import CloudSet
from .ot import DiscreteDistribution, rpw2, sample_directions
from .train import TrainConfig, train

log = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray
    index_map: tuple

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] != len(self.index_map):
            raise ValueError("distance matrix must be square and match index_map")
        if np.any(np.diag(v) != 0) or np.any(v != v.T) or np.any(v < 0):
            raise ValueError("distance matrix must be symmetric, nonnegative, zero diagonal")

    def __len__(self) -> int:
        return len(self.index_map)

    def submatrix(self, rows, cols) -> np.ndarray:
        pos = {g: i for i, g in enumerate(self.index_map)}
        r = [pos[g] for g in rows]
        c = [pos[g] for g in cols]
        return self.values[np.ix_(r, c)]


def _lambda_grid():
    return tuple(np.logspace(-4, 1, 6).tolist())


def _c_grid():
    # 12 log-spaced values in [1e-4, 1e5]; the exponent closest to 0 is snapped so 1 is included
    exponents = np.linspace(-4, 5, 12)
    exponents[np.argmin(np.abs(exponents))] = 0.0
    return tuple((10.0 ** exponents).tolist())


@dataclass(frozen=True)
class EvalProtocol:
    k_grid: tuple = (1, 2, 3, 5, 7)
    r_grid: tuple = (1, 2, 3, 4)
    folds: int = 5
    runs: int = 10
    train_fraction: float = 0.9
    seed: int = 0
    lambda_grid: tuple = field(default_factory=_lambda_grid)
    c_grid: tuple = field(default_factory=_c_grid)

    def __post_init__(self):
        if not self.k_grid or not self.r_grid:
            raise ValueError("k_grid and r_grid must be non-empty")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")

    @classmethod
    def for_dataset(cls, name: str, **kw) -> "EvalProtocol":
        if name.upper() == "MUTAG" and "r_grid" not in kw:
            kw["r_grid"] = tuple(range(1, 8))
        return cls(**kw)


def embed_all(dataset: GraphDataset, indices, params: SgcnParams,
              cache: FeatureCache | None = None) -> list[np.ndarray]:
    cache = cache if cache is not None else FeatureCache()
    return [forward(cache.get(dataset.graphs[i], params.depth, params.normalize_adjacency), params)
            for i in indices]


def distance_matrix(dataset: GraphDataset, indices, params: SgcnParams, kind: str = "rpw2",
                    num_projections: int = 50, seed: int = 0,
                    cache: FeatureCache | None = None, impl: str | None = None) -> DistanceMatrix:
    """Pairwise graph distances; each graph is embedded once.

    Sliced variants share one seeded set of directions across all pairs so
    that the matrix is a single consistent distance. ``impl`` routes rpw2
    through the reference ``sequential`` or ``quadratic`` routine instead of
    the batched engine.
    """
    indices = [int(i) for i in indices]
    ys = embed_all(dataset, indices, params, cache)
    if impl is not None:
        if kind != "rpw2":
            raise ValueError("impl only applies to rpw2")
        clouds = [DiscreteDistribution.uniform(y) for y in ys]
        n = len(clouds)
        out = np.zeros((n, n))
        for a in range(n):
            for b in range(a + 1, n):
                out[a, b] = out[b, a] = rpw2(clouds[a], clouds[b], impl)
        return DistanceMatrix(out, tuple(indices))
    directions = None
    if kind != "rpw2":
        directions = sample_directions(params.output_dim, num_projections, seed)
    sq = CloudSet(ys, kind, directions).sq_distance_matrix()
    return DistanceMatrix(np.sqrt(sq), tuple(indices))


def kernel_matrix(matrix: DistanceMatrix, lam: float) -> np.ndarray:
    """``exp(-lam * d)`` entrywise; unit diagonal, symmetric."""
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    return np.exp(-lam * matrix.values)


def _vote(neighbor_labels: np.ndarray, neighbor_dists: np.ndarray):
    classes, counts = np.unique(neighbor_labels, return_counts=True)
    sums = np.array([neighbor_dists[neighbor_labels == c].sum() for c in classes])
    # most votes, then smaller summed distance, then smaller class id
    best = np.lexsort((classes, sums, -counts))[0]
    return classes[best]


def knn_predict_from_distances(dists: np.ndarray, train_labels: np.ndarray, k: int):
    """Majority vote among the k nearest reference rows; ties go to the
    class with the smaller summed distance, then the smaller class id.
    Distance ties between neighbors resolve by reference position."""
    train_labels = np.asarray(train_labels)
    if not 1 <= k <= train_labels.size:
        raise ValueError(f"k={k} must lie in [1, {train_labels.size}]")
    order = np.argsort(dists, kind="stable")[:k]
    return _vote(train_labels[order], dists[order])


def knn_predict(train_indices, train_labels, test_index: int, k: int, matrix: DistanceMatrix):
    train_indices = list(train_indices)
    dists = matrix.submatrix([test_index], train_indices)[0]
    return knn_predict_from_distances(dists, np.asarray(train_labels), k)


def knn_accuracy(cross: np.ndarray, ref_labels, query_labels, k: int) -> float:
    preds = [knn_predict_from_distances(row, ref_labels, k) for row in cross]
    return float(np.mean(np.asarray(preds) == np.asarray(query_labels)))


@dataclass
class RunResult:
    run: int
    r_star: int
    k_star: int
    val_acc: float
    test_acc: float
    grid: dict = field(default_factory=dict)  # (r, k) -> validation accuracy


@dataclass
class ProtocolReport:
    runs: list

    @property
    def test_accuracies(self) -> np.ndarray:
        return np.array([r.test_acc for r in self.runs])

    @property
    def mean(self) -> float:
        return float(self.test_accuracies.mean())

    @property
    def std(self) -> float:
        return float(self.test_accuracies.std())

    def to_csv(self) -> str:
        lines = ["run,r_star,k_star,val_acc,test_acc"]
        for r in self.runs:
            lines.append(f"{r.run},{r.r_star},{r.k_star},{r.val_acc:.6f},{r.test_acc:.6f}")
        lines.append("mean,std")
        lines.append(f"{self.mean:.6f},{self.std:.6f}")
        return "\n".join(lines) + "\n"


def cross_validate_k(dm: np.ndarray, labels: np.ndarray, folds: list, k_grid) -> dict:
    """Mean fold accuracy for each k, using positions into ``dm``."""
    scores = {}
    for k in k_grid:
        accs = []
        for f, val in enumerate(folds):
            ref = np.concatenate([folds[g] for g in range(len(folds)) if g != f])
            if k > ref.size:
                raise ProtocolError(f"fold reference set of size {ref.size} smaller than k={k}")
            accs.append(knn_accuracy(dm[np.ix_(val, ref)], labels[ref], labels[val], k))
        scores[k] = float(np.mean(accs))
    return scores


def run_protocol(dataset: GraphDataset, protocol: EvalProtocol, cfg: TrainConfig,
                 output_dim: int | None = None, normalize_adjacency: bool = False,
                 untrained: bool = False, progress=None) -> ProtocolReport:
    """Repeated split / train / cross-validate / test evaluation.

    Each run draws a fresh stratified split. For every depth the embedding is
    trained on the training split only; k is chosen by stratified k-fold CV
    over the training split's learned distances; (r, k) with the best
    validation accuracy (ties: smaller r, then smaller k) is then scored on
    the held-out split with the whole training split as reference.

    ``untrained`` skips learning and scores the randomly initialized
    embedding (the ablation baseline).
    """
    labels = np.asarray(dataset.labels)
    seeds = np.random.SeedSequence(protocol.seed).generate_state(4 * protocol.runs).reshape(protocol.runs, 4)
    cache = FeatureCache()
    results = []
    for run in range(protocol.runs):
        split_seed, fold_seed, init_seed, train_seed = (int(s) for s in seeds[run])
        tr, te = stratified_split(dataset, protocol.train_fraction, split_seed)
        if np.intersect1d(tr, te).size:
            raise ProtocolError("train and test indices overlap")
        if np.unique(labels[tr]).size < 2:
            raise ProtocolError("training split holds a single class")
        folds_global = stratified_folds(labels, tr, protocol.folds, fold_seed)
        pos = {g: i for i, g in enumerate(tr)}
        folds = [np.array([pos[g] for g in f]) for f in folds_global]
        grid = {}
        models = {}
        for r in protocol.r_grid:
            params = init_params(dataset.num_features, output_dim, r, init_seed, normalize_adjacency)
            if untrained:
                trained = params
            else:
                trained = train(dataset, tr, params, replace(cfg, seed=train_seed), cache).params
            dm = distance_matrix(dataset, np.concatenate([tr, te]), trained, cfg.distance,
                                 cfg.num_projections, train_seed, cache)
            models[r] = dm
            d_train = dm.values[: tr.size, : tr.size]
            for k, acc in cross_validate_k(d_train, labels[tr], folds, protocol.k_grid).items():
                grid[(r, k)] = acc
            if progress:
                progress(run, r)
        r_star, k_star = min(grid, key=lambda rk: (-grid[rk], rk[0], rk[1]))
        dm = models[r_star].values
        cross = dm[tr.size:, : tr.size]
        test_acc = knn_accuracy(cross, labels[tr], labels[te], k_star)
        results.append(RunResult(run, r_star, k_star, grid[(r_star, k_star)], test_acc, grid))
        log.info("run %d: r*=%d k*=%d val=%.4f test=%.4f", run, r_star, k_star,
                 grid[(r_star, k_star)], test_acc)
    return ProtocolReport(results)


def write_square_matrix(path, values: np.ndarray) -> None:
    """First line N, then N rows of N space-separated reals."""
    n = values.shape[0]
    with Path(path).open("w") as fh:
        fh.write(f"{n}\n")
        for row in values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_square_matrix(path) -> np.ndarray:
    with Path(path).open() as fh:
        n = int(fh.readline())
        rows = [list(map(float, fh.readline().split())) for _ in range(n)]
    values = np.array(rows, dtype=np.float64).reshape(n, n)
    return values
