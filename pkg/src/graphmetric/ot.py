"""Distances between discrete distributions built on one-dimensional transport.

All projected distances share one primitive: the monotone (north-west corner)
coupling of two sorted 1-D distributions. Sorting is stable, so among
co-optimal couplings of tied coordinates the one induced by the input order
is returned.
"""

from __future__ import annotations

import gc
import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np

WEIGHT_TOL = 1e-12
RENORMALIZE_TOL = 1e-9
ORACLE_MAX_PAIRS = 64


class DistanceError(ValueError):
    pass


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteDistribution:
    """Weighted point cloud: ``sum_i weights[i] * delta(support[i])``."""

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.float64)
        if support.ndim == 1:
            support = support[:, None]
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if support.ndim != 2 or support.shape[0] < 1 or support.shape[1] < 1:
            raise DistanceError(f"support must be a non-empty (n, p) matrix, got {support.shape}")
        if weights.shape != (support.shape[0],):
            raise DistanceError("one weight per support point required")
        if not np.all(np.isfinite(support)):
            raise DistanceError("support must be finite")
        if not np.all(weights > 0):
            raise DistanceError("weights must be strictly positive")
        total = weights.sum()
        if abs(total - 1.0) > RENORMALIZE_TOL:
            raise DistanceError(f"weights sum to {total}, expected 1")
        if abs(total - 1.0) > WEIGHT_TOL:
            weights = weights / total
        support.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, support) -> "DiscreteDistribution":
        support = np.asarray(support, dtype=np.float64)
        n = support.shape[0]
        return cls(support, np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return self.support.shape[0]

    @property
    def dim(self) -> int:
        return self.support.shape[1]


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling stored as parallel (source, target, mass) arrays."""

    source: np.ndarray
    target: np.ndarray
    mass: np.ndarray
    source_size: int
    target_size: int

    def __len__(self) -> int:
        return self.mass.size

    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.source.tolist(), self.target.tolist(), self.mass.tolist()))

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        rows = np.bincount(self.source, weights=self.mass, minlength=self.source_size)
        cols = np.bincount(self.target, weights=self.mass, minlength=self.target_size)
        return rows, cols

    def dense(self) -> np.ndarray:
        out = np.zeros((self.source_size, self.target_size))
        np.add.at(out, (self.source, self.target), self.mass)
        return out

    def to_text(self) -> str:
        return "".join(f"{i},{j},{m!r}\n" for i, j, m in self.entries())


@dataclass(frozen=True)
class SlicedConfig:
    num_projections: int = 50
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_projections < 1:
            raise DistanceError("num_projections must be >= 1")


def monotone_rank_plan(a_sorted: np.ndarray, b_sorted: np.ndarray):
    """North-west corner coupling of two weight vectors given in sorted order.

    Returns rank indices ``(ri, rj)`` and masses. Breakpoints are the union of
    both cumulative sums, so swapping the arguments swaps ``ri``/``rj`` and
    leaves the masses bit-identical.
    """
    ca = np.cumsum(a_sorted)
    cb = np.cumsum(b_sorted)
    ca[-1] = cb[-1] = 1.0
    t = np.union1d(ca, cb)
    mass = np.diff(t, prepend=0.0)
    ri = np.minimum(np.searchsorted(ca, t, side="left"), ca.size - 1)
    rj = np.minimum(np.searchsorted(cb, t, side="left"), cb.size - 1)
    return ri, rj, mass


@lru_cache(maxsize=4096)
def uniform_rank_plan(n: int, m: int):
    """Rank-space monotone plan between uniform weights of sizes n and m."""
    ri, rj, mass = monotone_rank_plan(np.full(n, 1.0 / n), np.full(m, 1.0 / m))
    for arr in (ri, rj, mass):
        arr.setflags(write=False)
    return ri, rj, mass


def _sorted_plan(x: np.ndarray, a: np.ndarray, y: np.ndarray, b: np.ndarray):
    sx = np.argsort(x, kind="stable")
    sy = np.argsort(y, kind="stable")
    ri, rj, mass = monotone_rank_plan(a[sx], b[sy])
    return sx[ri], sy[rj], mass


def wasserstein_1d(source: DiscreteDistribution, target: DiscreteDistribution):
    """Exact 1-D optimal transport by sorting.

    Returns the monotone ``TransportPlan`` and its squared cost
    ``sum pi_ij (x_i - y_j)^2``. O(n log n + n' log n').
    """
    if source.dim != 1 or target.dim != 1:
        raise DistanceError("wasserstein_1d needs one-dimensional distributions")
    x, y = source.support[:, 0], target.support[:, 0]
    si, tj, mass = _sorted_plan(x, source.weights, y, target.weights)
    plan = TransportPlan(si, tj, mass, source.size, target.size)
    return plan, float(np.sum(mass * (x[si] - y[tj]) ** 2))


def _check_dims(source: DiscreteDistribution, target: DiscreteDistribution):
    if source.dim != target.dim:
        raise DistanceError(f"dimension mismatch: {source.dim} vs {target.dim}")


def squared_cost_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean costs, accumulated coordinate by coordinate.

    Direct differences rather than the Gram trick: the expansion
    ``|x|^2 + |y|^2 - 2xy`` cancels catastrophically for nearby points.
    """
    cost = np.zeros((x.shape[0], y.shape[0]))
    buf = np.empty_like(cost)
    for k in range(x.shape[1]):
        np.subtract(x[:, k, None], y[None, :, k], out=buf)
        np.multiply(buf, buf, out=buf)
        cost += buf
    return cost


def axis_plans(source: DiscreteDistribution, target: DiscreteDistribution) -> list[TransportPlan]:
    """One monotone plan per coordinate axis."""
    _check_dims(source, target)
    plans = []
    for k in range(source.dim):
        si, tj, mass = _sorted_plan(source.support[:, k], source.weights,
                                    target.support[:, k], target.weights)
        plans.append(TransportPlan(si, tj, mass, source.size, target.size))
    return plans


def _rpw2_quadratic(source: DiscreteDistribution, target: DiscreteDistribution) -> float:
    cost = squared_cost_matrix(source.support, target.support)
    total = 0.0
    for plan in axis_plans(source, target):
        total += float(np.sum(plan.mass * cost[plan.source, plan.target]))
    return total / source.dim


def _rpw2_sequential(source: DiscreteDistribution, target: DiscreteDistribution) -> float:
    # two-pointer merge per axis; costs evaluated only along the merge path
    n, m, p = source.size, target.size, source.dim
    c = 0.0
    gc_was_enabled = gc.isenabled()
    gc.disable()  # the per-axis lists hold millions of objects at large n
    try:
        for k in range(p):
            su = np.argsort(source.support[:, k], kind="stable")
            sv = np.argsort(target.support[:, k], kind="stable")
            xs = source.support[su].tolist()
            ys = target.support[sv].tolist()
            a = source.weights[su].tolist()
            b = target.weights[sv].tolist()
            i = j = 0
            wu, wv = a[0], b[0]
            while True:
                d = 0.0
                for u, v in zip(xs[i], ys[j]):
                    d += (u - v) * (u - v)
                if wu < wv:
                    c += wu * d
                    i += 1
                    if i == n:
                        break
                    wv -= wu
                    wu = a[i]
                else:
                    c += wv * d
                    j += 1
                    if j == m:
                        break
                    wu -= wv
                    wv = b[j]
    finally:
        if gc_was_enabled:
            gc.enable()
    return c / p


def rpw2(source: DiscreteDistribution, target: DiscreteDistribution,
         impl: Literal["sequential", "quadratic"] = "quadratic") -> float:
    """Restricted projected 2-Wasserstein distance.

    Transport plans come from the 1-D problems on each canonical axis; every
    plan is then costed with the full squared Euclidean ground cost and the
    result averaged over axes before the square root.

    ``sequential`` walks the sorted supports with two pointers and never
    builds the n x n' cost matrix; ``quadratic`` builds that matrix once,
    shares it across axes and contracts each plan against it.
    """
    _check_dims(source, target)
    if impl == "quadratic":
        sq = _rpw2_quadratic(source, target)
    elif impl == "sequential":
        sq = _rpw2_sequential(source, target)
    else:
        raise DistanceError(f"unknown implementation {impl!r}")
    return float(np.sqrt(max(sq, 0.0)))


def sample_directions(dim: int, num: int, seed: int) -> np.ndarray:
    """``num`` directions uniform on the unit sphere of R^dim, as a (dim, num) matrix."""
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.standard_normal((dim, num))
    norms = np.linalg.norm(v, axis=0, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def _direction_plans(source, target, directions):
    px = source.support @ directions
    py = target.support @ directions
    for col in range(directions.shape[1]):
        si, tj, mass = _sorted_plan(px[:, col], source.weights, py[:, col], target.weights)
        yield col, si, tj, mass, px[:, col], py[:, col]


def sw2(source: DiscreteDistribution, target: DiscreteDistribution,
        cfg: SlicedConfig = SlicedConfig(), directions: np.ndarray | None = None) -> float:
    """Monte-Carlo sliced 2-Wasserstein distance over random unit directions."""
    _check_dims(source, target)
    if directions is None:
        directions = sample_directions(source.dim, cfg.num_projections, cfg.rng_seed)
    total = 0.0
    for _, si, tj, mass, px, py in _direction_plans(source, target, directions):
        total += float(np.sum(mass * (px[si] - py[tj]) ** 2))
    return float(np.sqrt(total / directions.shape[1]))


def pw2(source: DiscreteDistribution, target: DiscreteDistribution,
        cfg: SlicedConfig = SlicedConfig(), directions: np.ndarray | None = None) -> float:
    """Projected 2-Wasserstein: sliced plans re-costed in the ambient space."""
    _check_dims(source, target)
    if directions is None:
        directions = sample_directions(source.dim, cfg.num_projections, cfg.rng_seed)
    x, y = source.support, target.support
    total = 0.0
    for _, si, tj, mass, _, _ in _direction_plans(source, target, directions):
        total += float(np.sum(mass * np.sum((x[si] - y[tj]) ** 2, axis=1)))
    return float(np.sqrt(total / directions.shape[1]))


def _min_cost_flow(a, b, cost) -> float:
    """Successive shortest paths on the bipartite transport network.

    Shortest paths use Dijkstra on potential-reduced costs; reduced costs are
    nonnegative in exact arithmetic, so rounding-level negatives are clipped
    to zero. Dijkstra settles each node once, so predecessor links stay a tree.
    """
    n, m = cost.shape
    # nodes: 0 = s, 1..n sources, n+1..n+m targets, n+m+1 = t
    size = n + m + 2
    sink = size - 1
    cap = np.zeros((size, size))
    w = np.zeros((size, size))
    cap[0, 1:n + 1] = a
    cap[n + 1:n + m + 1, sink] = b
    cap[1:n + 1, n + 1:n + m + 1] = np.inf
    w[1:n + 1, n + 1:n + m + 1] = cost
    w[n + 1:n + m + 1, 1:n + 1] = -cost.T
    eps = 1e-15
    flow = np.zeros((size, size))
    pot = np.zeros(size)
    shipped = 0.0
    while shipped < 1.0 - 1e-13:
        residual = cap - flow
        reduced = np.where(residual > eps, np.maximum(w + pot[:, None] - pot[None, :], 0.0), np.inf)
        dist = np.full(size, np.inf)
        dist[0] = 0.0
        prev = np.full(size, -1)
        settled = np.zeros(size, dtype=bool)
        for _ in range(size):
            u = int(np.argmin(np.where(settled, np.inf, dist)))
            if settled[u] or dist[u] == np.inf:
                break
            settled[u] = True
            cand = dist[u] + reduced[u]
            better = (cand < dist) & ~settled
            dist[better] = cand[better]
            prev[better] = u
        if dist[sink] == np.inf:
            break
        pot += np.minimum(dist, dist[sink])
        path = [sink]
        while path[-1] != 0:
            path.append(int(prev[path[-1]]))
        path.reverse()
        push = min(residual[u, v] for u, v in zip(path, path[1:]))
        for u, v in zip(path, path[1:]):
            flow[u, v] += push
            flow[v, u] -= push
        shipped += push
    plan = np.clip(flow[1:n + 1, n + 1:n + m + 1], 0.0, None)
    return float(np.sum(plan * cost))


def exact_w2_oracle(source: DiscreteDistribution, target: DiscreteDistribution) -> float:
    """Exact 2-Wasserstein distance for tiny instances (n * n' <= 64).

    Uniform equal-size inputs enumerate all assignments; everything else goes
    through min-cost flow. Meant for tests, not speed.
    """
    _check_dims(source, target)
    n, m = source.size, target.size
    if n * m > ORACLE_MAX_PAIRS:
        raise OracleError(f"oracle limited to n*n' <= {ORACLE_MAX_PAIRS}, got {n}*{m}")
    cost = squared_cost_matrix(source.support, target.support)
    uniform = (n == m and np.allclose(source.weights, 1.0 / n, rtol=0, atol=1e-15)
               and np.allclose(target.weights, 1.0 / m, rtol=0, atol=1e-15))
    if uniform:
        perms = np.array(list(itertools.permutations(range(n))))
        sq = cost[np.arange(n), perms].sum(axis=1).min() / n
    else:
        sq = _min_cost_flow(source.weights, target.weights, cost)
    return float(np.sqrt(max(sq, 0.0)))


def tie_diagnostic(source: DiscreteDistribution, target: DiscreteDistribution) -> int:
    """Count triples (i, j, k) with equal k-th coordinates but distinct points.

    These are the inputs where the choice among co-optimal axis plans can
    change the distance.
    """
    _check_dims(source, target)
    x, y = source.support, target.support
    total = 0
    for k in range(source.dim):
        vals, counts_x = np.unique(x[:, k], return_counts=True)
        pos = np.searchsorted(vals, y[:, k])
        pos = np.minimum(pos, vals.size - 1)
        hit = vals[pos] == y[:, k]
        total += int(counts_x[pos[hit]].sum())
    # identical point pairs tie on every axis and are not counted
    rows_x: dict = {}
    for row in map(tuple, x.tolist()):
        rows_x[row] = rows_x.get(row, 0) + 1
    identical = sum(rows_x.get(row, 0) for row in map(tuple, y.tolist()))
    return total - source.dim * identical
