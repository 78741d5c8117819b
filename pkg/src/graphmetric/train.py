"""Metric learning of the embedding matrix with class-cloud or NCA losses."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .data import Graph, GraphDataset
from .embed import FeatureCache, SgcnParams, embed, embed_gradient, forward
from .engine import DISTANCES, CloudSet
from .ot import SlicedConfig, axis_plans, pw2, rpw2, sample_directions, sw2, _direction_plans, TransportPlan

log = logging.getLogger(__name__)

LOSSES = ("nccml", "nca")


class LossError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.999e-2
    epochs: int = 10
    batch_size: int = 8
    loss: str = "nccml"
    distance: str = "rpw2"
    seed: int = 0
    num_projections: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}")
        if self.num_projections < 1:
            raise ValueError("num_projections must be >= 1")


# learning-rate / epoch / batch overrides used for particular datasets
DATASET_OVERRIDES = {
    "ENZYMES": {"learning_rate": 0.999e-3, "epochs": 20},
    "PROTEINS-continuous": {"learning_rate": 0.999e-4, "epochs": 20},
    "Cuneiform": {"batch_size": 64},
}


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def adam_step(state: AdamState, gradient: np.ndarray, cfg: TrainConfig, theta: np.ndarray):
    """One bias-corrected Adam descent step; returns (new theta, new state)."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != theta.shape or state.first_moment.shape != theta.shape:
        raise ValueError("gradient, state and theta shapes differ")
    if not np.all(np.isfinite(gradient)):
        raise TrainingError("non-finite gradient; aborting training")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m = b1 * state.first_moment + (1 - b1) * gradient
    v = b2 * state.second_moment + (1 - b2) * gradient * gradient
    t = state.step_count + 1
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    new_theta = theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
    return new_theta, AdamState(m, v, t)


def nccml_from_sq_distances(d2: np.ndarray, labels: Sequence[int]):
    """Class-cloud softmax loss from a batch's squared-distance matrix.

    For anchor ``a`` and class ``e``, ``S[a, e]`` sums d2 from ``a`` to the
    batch members of class ``e`` (the anchor's own zero self-distance
    included). The softmax runs over the classes present in the batch and
    the loss is ``-sum_a log softmax(-S[a])[label_a]``.

    Returns (loss, dloss/dd2) with the derivative symmetric and zero on the
    diagonal.
    """
    labels = np.asarray(labels)
    classes, codes = np.unique(labels, return_inverse=True)
    if labels.size < 2 or classes.size < 2:
        raise LossError("batch needs at least two graphs from two classes")
    onehot = np.eye(classes.size)[codes]  # (B, C)
    s = d2 @ onehot
    log_p = -s - logsumexp(-s, axis=1, keepdims=True)
    loss = -float(np.sum(log_p[np.arange(labels.size), codes]))
    dl_ds = onehot - np.exp(log_p)  # d loss / d S[a, e]
    g = dl_ds @ onehot.T  # g[a, b] = dl/dS[a, label_b]
    grad = g + g.T
    np.fill_diagonal(grad, 0.0)
    return loss, grad


def nca_from_sq_distances(d2: np.ndarray, labels: Sequence[int]):
    """Negative NCA objective over ordered off-diagonal pairs of a batch.

    ``p(i, j) = exp(-d2_ij) / sum_{k != k'} exp(-d2_kk')``; the objective sums
    p over same-label ordered pairs. Returns (loss, dloss/dd2).
    """
    labels = np.asarray(labels)
    b = labels.size
    if b < 2:
        raise LossError("batch needs at least two graphs")
    off = ~np.eye(b, dtype=bool)
    z = np.where(off, -d2, -np.inf)
    p = np.exp(z - logsumexp(z))
    same = (labels[:, None] == labels[None, :]) & off
    mass_same = float(p[same].sum())
    dl = p * (same - mass_same)  # dloss/dd2 for each ordered pair
    grad = dl + dl.T
    np.fill_diagonal(grad, 0.0)
    return -mass_same, grad


_LOSS_FNS = {"nccml": nccml_from_sq_distances, "nca": nca_from_sq_distances}


def _cloud_set(ys, kind, directions):
    return CloudSet(ys, kind, directions)


def pairwise_graph_distance(g1: Graph, g2: Graph, params: SgcnParams, kind: str = "rpw2",
                            cfg: SlicedConfig = SlicedConfig()):
    """Distance between two graphs' embeddings plus the 1-D plans used.

    For ``rpw2`` one plan per axis is returned; for ``sw2``/``pw2`` one plan
    per sampled direction.
    """
    mu, nu = embed(g1, params), embed(g2, params)
    if kind == "rpw2":
        return rpw2(mu, nu), axis_plans(mu, nu)
    if kind not in ("sw2", "pw2"):
        raise ValueError(f"unknown distance {kind!r}")
    directions = sample_directions(mu.dim, cfg.num_projections, cfg.rng_seed)
    plans = [TransportPlan(si, tj, mass, mu.size, nu.size)
             for _, si, tj, mass, _, _ in _direction_plans(mu, nu, directions)]
    dist = (sw2 if kind == "sw2" else pw2)(mu, nu, directions=directions)
    return dist, plans


@dataclass
class BatchResult:
    loss: float
    gradient: np.ndarray
    sq_distances: np.ndarray


def batch_loss(graphs: Sequence[Graph], labels, params: SgcnParams, kind: str = "rpw2",
               loss: str = "nccml", directions: np.ndarray | None = None,
               cache: FeatureCache | None = None) -> BatchResult:
    """Loss and dLoss/dTheta for one batch; plans are held fixed for the gradient."""
    cache = cache if cache is not None else FeatureCache()
    feats = [cache.get(g, params.depth, params.normalize_adjacency) for g in graphs]
    ys = [forward(f, params) for f in feats]
    clouds = _cloud_set(ys, kind, directions)
    b = len(graphs)
    d2 = np.zeros((b, b))
    grads = {}
    for i in range(b):
        for j in range(i + 1, b):
            val, ga, gb = clouds.sq_distance_and_grad(i, j)
            d2[i, j] = d2[j, i] = val
            grads[i, j] = (ga, gb)
    value, dd2 = _LOSS_FNS[loss](d2, labels)
    dys = [np.zeros_like(y) for y in ys]
    for (i, j), (ga, gb) in grads.items():
        w = dd2[i, j]
        if w != 0.0:
            dys[i] += w * ga
            dys[j] += w * gb
    grad = np.zeros_like(params.theta)
    for f, dy in zip(feats, dys):
        grad += embed_gradient(f, params, dy)
    return BatchResult(value, grad, d2)


def nccml_loss(batch: Sequence[int], dataset: GraphDataset, params: SgcnParams,
               kind: str = "rpw2", directions: np.ndarray | None = None,
               cache: FeatureCache | None = None):
    """(loss, dLoss/dTheta) of the class-cloud loss on the given batch indices."""
    res = batch_loss([dataset.graphs[i] for i in batch], dataset.labels[list(batch)], params,
                     kind, "nccml", directions, cache)
    return res.loss, res.gradient


def nca_loss(batch: Sequence[int], dataset: GraphDataset, params: SgcnParams,
             kind: str = "rpw2", directions: np.ndarray | None = None,
             cache: FeatureCache | None = None):
    res = batch_loss([dataset.graphs[i] for i in batch], dataset.labels[list(batch)], params,
                     kind, "nca", directions, cache)
    return res.loss, res.gradient


def make_batches(indices: np.ndarray, labels: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Chunk an already shuffled index list; single-class chunks merge forward.

    A trailing single-class chunk (including a lone leftover graph) is merged
    into the previous batch.
    """
    chunks = [indices[i:i + batch_size] for i in range(0, len(indices), batch_size)]
    out: list[np.ndarray] = []
    carry = np.empty(0, dtype=indices.dtype)
    for chunk in chunks:
        chunk = np.concatenate([carry, chunk])
        if np.unique(labels[chunk]).size < 2:
            carry = chunk
            continue
        out.append(chunk)
        carry = np.empty(0, dtype=indices.dtype)
    if carry.size:
        if not out:
            raise TrainingError("training indices contain a single class")
        out[-1] = np.concatenate([out[-1], carry])
    return out


@dataclass
class TrainResult:
    params: SgcnParams
    history: list = field(default_factory=list)  # (epoch, batch, loss)

    def history_csv(self) -> str:
        lines = ["epoch,batch,loss"]
        lines += [f"{e},{b},{l!r}" for e, b, l in self.history]
        return "\n".join(lines) + "\n"


def train(dataset: GraphDataset, train_indices, params: SgcnParams, cfg: TrainConfig,
          cache: FeatureCache | None = None) -> TrainResult:
    """Epochs of seeded shuffles, batch losses and one Adam step per batch."""
    train_indices = np.asarray(train_indices, dtype=np.int64)
    labels = np.asarray(dataset.labels)
    if np.unique(labels[train_indices]).size < 2:
        raise TrainingError("training indices must cover at least two classes")
    cache = cache if cache is not None else FeatureCache()
    rng = np.random.default_rng(cfg.seed)
    theta = params.theta.copy()
    state = AdamState.zeros(theta.shape)
    result = TrainResult(params)
    p = params.output_dim
    for epoch in range(cfg.epochs):
        batches = make_batches(rng.permutation(train_indices), labels, cfg.batch_size)
        for bno, batch in enumerate(batches):
            current = params.with_theta(theta)
            directions = None
            if cfg.distance != "rpw2":
                directions = sample_directions(p, cfg.num_projections, int(rng.integers(2**63)))
            res = batch_loss([dataset.graphs[i] for i in batch], labels[batch], current,
                             cfg.distance, cfg.loss, directions, cache)
            if not np.isfinite(res.loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {bno}: {batch.tolist()}")
            theta, state = adam_step(state, res.gradient, cfg, theta)
            result.history.append((epoch, bno, res.loss))
    result.params = params.with_theta(theta)
    return result
