"""Simple graph convolution embedding: Y = ReLU((A + I)^r X Theta)."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .data import Graph
from .ot import DiscreteDistribution

log = logging.getLogger(__name__)


class StaleMaskError(RuntimeError):
    """embed_gradient called without a forward pass at the current Theta."""


@dataclass
class SgcnParams:
    theta: np.ndarray
    depth: int = 1
    normalize_adjacency: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 2:
            raise ValueError("theta must be a q x p matrix")
        q, p = self.theta.shape
        if p > q:
            raise ValueError(f"output_dim p={p} must not exceed input dim q={q}")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")

    @property
    def input_dim(self) -> int:
        return self.theta.shape[0]

    @property
    def output_dim(self) -> int:
        return self.theta.shape[1]

    def with_theta(self, theta: np.ndarray) -> "SgcnParams":
        return SgcnParams(theta, self.depth, self.normalize_adjacency, self.seed)


def default_output_dim(q: int) -> int:
    return min(5, q)


def init_theta(q: int, p: int, seed: int) -> np.ndarray:
    """Glorot-uniform start, bound sqrt(6 / (q + p))."""
    bound = np.sqrt(6.0 / (q + p))
    return np.random.default_rng(seed).uniform(-bound, bound, size=(q, p))


def init_params(q: int, p: int | None = None, depth: int = 1, seed: int = 0,
                normalize_adjacency: bool = False) -> SgcnParams:
    p = default_output_dim(q) if p is None else p
    return SgcnParams(init_theta(q, p, seed), depth, normalize_adjacency, seed)


def _operator(adjacency: sp.csr_matrix, normalize: bool) -> sp.csr_matrix:
    op = (adjacency + sp.identity(adjacency.shape[0], format="csr")).tocsr()
    if normalize:
        d = np.asarray(op.sum(axis=1)).ravel()
        inv = sp.diags(1.0 / np.sqrt(d))
        op = (inv @ op @ inv).tocsr()
    return op


def propagate(graph: Graph, depth: int, normalize: bool = False) -> np.ndarray:
    """``(A + I)^depth X`` by repeated sparse products.

    With ``normalize`` the operator is ``D^-1/2 (A + I) D^-1/2`` instead.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    h = np.array(graph.attributes, dtype=np.float64)
    if depth == 0:
        return h
    op = _operator(graph.adjacency, normalize)
    for _ in range(depth):
        h = op @ h
    return np.asarray(h)


def theta_token(theta: np.ndarray) -> bytes:
    return hashlib.blake2b(np.ascontiguousarray(theta).tobytes(), digest_size=16).digest()


@dataclass
class PropagatedFeatures:
    """Theta-independent ``(A + I)^r X`` plus the mask of the last forward pass."""

    h: np.ndarray
    relu_mask: Optional[np.ndarray] = None
    token: Optional[bytes] = field(default=None, repr=False)


class FeatureCache:
    """Write-once cache of propagated features keyed by (graph id, depth, normalize)."""

    def __init__(self):
        self._store: dict = {}

    def get(self, graph: Graph, depth: int, normalize: bool = False) -> PropagatedFeatures:
        key = (graph.graph_id, depth, normalize)
        feats = self._store.get(key)
        if feats is None:
            h = propagate(graph, depth, normalize)
            h.setflags(write=False)
            feats = self._store[key] = PropagatedFeatures(h)
        return feats

    def __len__(self) -> int:
        return len(self._store)


def forward(features: PropagatedFeatures, params: SgcnParams) -> np.ndarray:
    """ReLU(h Theta); records the activation mask on ``features``."""
    pre = features.h @ params.theta
    mask = pre > 0
    features.relu_mask = mask
    features.token = theta_token(params.theta)
    return np.where(mask, pre, 0.0)


def embed(graph: Graph, params: SgcnParams,
          features: PropagatedFeatures | None = None) -> DiscreteDistribution:
    """Uniform distribution over the node embeddings of ``graph``."""
    if graph.num_features != params.input_dim:
        raise ValueError(f"graph has q={graph.num_features}, params expect {params.input_dim}")
    if features is None:
        features = PropagatedFeatures(propagate(graph, params.depth, params.normalize_adjacency))
    y = forward(features, params)
    if not y.any():
        log.info("graph %d embeds every node at the origin", graph.graph_id)
    return DiscreteDistribution.uniform(y)


def embed_gradient(features: PropagatedFeatures, params: SgcnParams, upstream: np.ndarray) -> np.ndarray:
    """Chain rule through the embedding: ``h^T (upstream * relu_mask)``.

    ``upstream`` is dLoss/dY; the mask must come from a forward pass at the
    current Theta.
    """
    if features.relu_mask is None or features.token != theta_token(params.theta):
        raise StaleMaskError("no forward pass recorded at the current theta")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != features.relu_mask.shape:
        raise ValueError(f"upstream shape {upstream.shape} != {features.relu_mask.shape}")
    return features.h.T @ np.where(features.relu_mask, upstream, 0.0)


def save_params(path, params: SgcnParams) -> None:
    """Text checkpoint: one header line then the q x p matrix."""
    q, p = params.theta.shape
    header = (f"q={q} p={p} r={params.depth} normalize={int(params.normalize_adjacency)} "
              f"seed={'none' if params.seed is None else params.seed}")
    np.savetxt(path, params.theta, fmt="%.17g", header=header)


def load_params(path) -> SgcnParams:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
    if not first.startswith("#"):
        raise ValueError(f"{path} lacks a checkpoint header")
    meta = dict(item.split("=", 1) for item in first[1:].split())
    theta = np.loadtxt(path, ndmin=2)
    q, p = int(meta["q"]), int(meta["p"])
    if theta.shape != (q, p):
        raise ValueError(f"{path}: header says {q}x{p}, matrix is {theta.shape}")
    seed = None if meta.get("seed", "none") == "none" else int(meta["seed"])
    return SgcnParams(theta, int(meta["r"]), bool(int(meta["normalize"])), seed)
