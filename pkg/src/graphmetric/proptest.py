"""Seeded invariant checks for the transport distances and the embedding.

Each check draws its own random instances from a fixed seed and returns a
``CheckResult``; ``run_suite`` runs them all. The acceptance tests call the
same functions at full size, the ``proptest`` subcommand can scale them down.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import Graph
from .embed import FeatureCache, PropagatedFeatures, SgcnParams, embed_gradient, forward, init_theta
from .engine import CloudSet
from .ot import (DiscreteDistribution, exact_w2_oracle, pw2, rpw2, sample_directions, sw2,
                 wasserstein_1d)
from .train import batch_loss

IDENTITY_TOL = 1e-9
TRIANGLE_SLACK = -1e-7
ORACLE_SLACK = 1e-9
EQUIV_RTOL = 1e-9


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def random_distribution(rng: np.random.Generator, n: int, dim: int,
                        weighted: bool = True) -> DiscreteDistribution:
    support = rng.standard_normal((n, dim)) * rng.uniform(0.5, 3.0)
    if not weighted:
        return DiscreteDistribution.uniform(support)
    w = rng.uniform(0.05, 1.0, size=n)
    return DiscreteDistribution(support, w / w.sum())


def _timed(name, fn):
    t0 = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, passed, detail, time.perf_counter() - t0)


def check_metric_properties(instances: int = 1000, seed: int = 0, max_size: int = 300,
                            max_dim: int = 8, impl: str = "quadratic") -> CheckResult:
    """Symmetry (bitwise), identity of indiscernibles, triangle inequality."""

    def run():
        rng = np.random.default_rng(seed)
        asym = ident = sep = 0
        worst_slack = np.inf
        for _ in range(instances):
            dim = int(rng.integers(1, max_dim + 1))
            a, b, c = (random_distribution(rng, int(rng.integers(1, max_size + 1)), dim,
                                           weighted=bool(rng.integers(2)))
                       for _ in range(3))
            dab, dba = rpw2(a, b, impl), rpw2(b, a, impl)
            dbc, dac = rpw2(b, c, impl), rpw2(a, c, impl)
            asym += dab != dba
            perm = rng.permutation(a.size)
            same = DiscreteDistribution(a.support[perm], a.weights[perm])
            ident += rpw2(a, a, impl) > IDENTITY_TOL or rpw2(a, same, impl) > IDENTITY_TOL
            sep += dab <= IDENTITY_TOL
            slack = (dab + dbc - dac) / max(dac, 1e-300)
            worst_slack = min(worst_slack, slack)
        ok = asym == 0 and ident == 0 and sep == 0 and worst_slack >= TRIANGLE_SLACK
        return ok, (f"{instances} triples, asymmetric={asym}, identity failures={ident}, "
                    f"separation failures={sep}, worst relative triangle slack={worst_slack:.3e}")

    return _timed("metric-properties", run)


def check_oracle_bound(instances: int = 500, seed: int = 1) -> CheckResult:
    """RPW2 >= exact W2 on tiny instances; the 1-D solver matches the oracle."""

    def run():
        rng = np.random.default_rng(seed)
        below = mismatch = 0
        worst_gap = np.inf
        worst_1d = 0.0
        for _ in range(instances):
            n = int(rng.integers(1, 9))
            m = int(rng.integers(1, 64 // n + 1))
            dim = int(rng.integers(1, 6))
            uniform = n == m and n <= 6 and bool(rng.integers(2))
            a = random_distribution(rng, n, dim, weighted=not uniform)
            b = random_distribution(rng, m, dim, weighted=not uniform)
            w2 = exact_w2_oracle(a, b)
            gap = rpw2(a, b) - w2
            worst_gap = min(worst_gap, gap)
            below += gap < -ORACLE_SLACK
            if dim == 1:
                _, cost = wasserstein_1d(a, b)
                err = abs(np.sqrt(cost) - w2)
                worst_1d = max(worst_1d, err)
                mismatch += err > ORACLE_SLACK * max(1.0, w2)
        ok = below == 0 and mismatch == 0
        return ok, (f"{instances} instances, rpw2 below W2: {below} (min gap {worst_gap:.3e}), "
                    f"1-D mismatches: {mismatch} (max err {worst_1d:.3e})")

    return _timed("oracle-lower-bound", run)


def check_impl_equivalence(instances: int = 1000, seed: int = 2, max_size: int = 300,
                           max_dim: int = 8) -> CheckResult:
    """Sequential and quadratic RPW2 agree to a relative 1e-9."""

    def run():
        rng = np.random.default_rng(seed)
        bad = 0
        worst = 0.0
        for _ in range(instances):
            dim = int(rng.integers(1, max_dim + 1))
            weighted = bool(rng.integers(2))
            a = random_distribution(rng, int(rng.integers(1, max_size + 1)), dim, weighted)
            b = random_distribution(rng, int(rng.integers(1, max_size + 1)), dim, weighted)
            s, q = rpw2(a, b, "sequential"), rpw2(a, b, "quadratic")
            rel = abs(s - q) / max(abs(q), 1e-300)
            worst = max(worst, rel)
            bad += rel > EQUIV_RTOL
        return bad == 0, f"{instances} pairs, disagreements={bad}, max relative diff={worst:.3e}"

    return _timed("impl-equivalence", run)


def check_sliced_ordering(instances: int = 200, seed: int = 3) -> CheckResult:
    """With shared directions SW2 <= PW2; on tiny inputs SW2 <= W2 <= PW2, RPW2."""

    def run():
        rng = np.random.default_rng(seed)
        bad = 0
        for i in range(instances):
            dim = int(rng.integers(1, 6))
            n = int(rng.integers(1, 9))
            m = int(rng.integers(1, 64 // n + 1))
            a, b = random_distribution(rng, n, dim), random_distribution(rng, m, dim)
            dirs = sample_directions(dim, 20, seed + i)
            s, p = sw2(a, b, directions=dirs), pw2(a, b, directions=dirs)
            w = exact_w2_oracle(a, b)
            bad += not (s <= w + ORACLE_SLACK and w <= p + ORACLE_SLACK)
        return bad == 0, f"{instances} instances, ordering violations={bad}"

    return _timed("sliced-ordering", run)


def random_graph(rng: np.random.Generator, q: int, graph_id: int, max_nodes: int = 10) -> Graph:
    n = int(rng.integers(2, max_nodes + 1))
    upper = np.triu(rng.random((n, n)) < 0.4, k=1)
    edges = list(zip(*np.nonzero(upper)))
    return Graph.from_edges(n, edges, 0.5 * rng.standard_normal((n, q)), graph_id)


def _structure(feats, params: SgcnParams, kind: str, directions):
    """Everything the gradient treats as constant: ReLU masks and sort orders."""
    ys = [forward(f, params) for f in feats]
    masks = tuple(f.relu_mask.tobytes() for f in feats)
    orders = tuple(o.tobytes() for o in CloudSet(ys, kind, directions).orders)
    return masks, orders


def _relative_error(g, g_fd) -> float:
    scale = max(np.linalg.norm(g), np.linalg.norm(g_fd), 1e-12)
    return float(np.linalg.norm(g - g_fd) / scale)


def finite_difference_batch(graphs, labels, params: SgcnParams, kind: str = "rpw2",
                            loss: str = "nccml", directions=None, step: float = 1e-6):
    """Analytic gradient, central differences, structure stability, FD noise floor.

    The noise floor bounds the rounding error of one central difference: the
    loss is assembled from O(B^2) squared distances of size max(d2), so each
    evaluation carries an absolute error near ``eps * B^2 * max(d2)``.
    Batches whose gradient is below that floor (saturated softmax) cannot be
    checked by differencing at all.
    """
    cache = FeatureCache()
    feats = [cache.get(g, params.depth, params.normalize_adjacency) for g in graphs]
    base = _structure(feats, params, kind, directions)
    res = batch_loss(graphs, labels, params, kind, loss, directions, cache)
    analytic = res.gradient
    noise = np.finfo(float).eps * len(graphs) ** 2 * max(1.0, float(res.sq_distances.max())) / step
    fd = np.zeros_like(params.theta)
    stable = True
    for idx in np.ndindex(params.theta.shape):
        vals = []
        for sign in (1.0, -1.0):
            theta = params.theta.copy()
            theta[idx] += sign * step
            probe = params.with_theta(theta)
            stable &= _structure(feats, probe, kind, directions) == base
            vals.append(batch_loss(graphs, labels, probe, kind, loss, directions, cache).loss)
        fd[idx] = (vals[0] - vals[1]) / (2 * step)
    return analytic, fd, stable, noise


def check_pipeline_gradient(batches: int = 50, seed: int = 4, kind: str = "rpw2",
                            loss: str = "nccml", tol: float = 1e-3) -> CheckResult:
    """Full-pipeline dLoss/dTheta against central differences on stable batches.

    Batches are redrawn when a probe flips a ReLU mask or a sort order, or
    when the gradient sits below the differencing noise floor.
    """

    def run():
        rng = np.random.default_rng(seed)
        q, p = 6, 4
        done = attempts = bad = 0
        worst = 0.0
        while done < batches and attempts < 20 * batches:
            attempts += 1
            size = int(rng.integers(3, 9))
            graphs = [random_graph(rng, q, gid) for gid in range(size)]
            labels = rng.integers(0, 3, size=size)
            if np.unique(labels).size < 2:
                labels[0], labels[1] = 0, 1
            params = SgcnParams(init_theta(q, p, int(rng.integers(2**31))),
                                depth=int(rng.integers(1, 4)))
            directions = None if kind == "rpw2" else sample_directions(p, 10, int(rng.integers(2**31)))
            g, g_fd, stable, noise = finite_difference_batch(graphs, labels, params, kind, loss,
                                                             directions)
            if not stable or noise > 1e-5 * np.linalg.norm(g):
                continue
            done += 1
            err = _relative_error(g, g_fd)
            worst = max(worst, err)
            bad += err > tol
        ok = done == batches and bad == 0
        return ok, (f"{done} stable batches ({attempts} drawn), over tolerance={bad}, "
                    f"max relative error={worst:.3e}")

    return _timed(f"gradient-{kind}-{loss}", run)


def check_embed_gradient(instances: int = 50, seed: int = 5, tol: float = 1e-4,
                         step: float = 1e-6) -> CheckResult:
    """embed_gradient against central differences of <U, Y(Theta)>."""

    def run():
        rng = np.random.default_rng(seed)
        bad = 0
        worst = 0.0
        for i in range(instances):
            q = int(rng.integers(2, 8))
            p = int(rng.integers(1, q + 1))
            graph = random_graph(rng, q, i)
            params = SgcnParams(init_theta(q, p, int(rng.integers(2**31))),
                                depth=int(rng.integers(0, 4)))
            feats = FeatureCache().get(graph, params.depth)
            upstream = rng.standard_normal((graph.node_count, p))
            forward(feats, params)
            g = embed_gradient(feats, params, upstream)
            mask = feats.relu_mask.copy()
            fd = np.zeros_like(g)
            for idx in np.ndindex(params.theta.shape):
                vals = []
                for sign in (1.0, -1.0):
                    theta = params.theta.copy()
                    theta[idx] += sign * step
                    probe = PropagatedFeatures(feats.h)
                    vals.append(float(np.sum(upstream * forward(probe, params.with_theta(theta)))))
                    if not np.array_equal(probe.relu_mask, mask):
                        vals[-1] = np.nan
                fd[idx] = (vals[0] - vals[1]) / (2 * step)
            if np.isnan(fd).any():
                continue
            err = _relative_error(g, fd)
            worst = max(worst, err)
            bad += err > tol
        return bad == 0, f"{instances} graphs, over tolerance={bad}, max relative error={worst:.3e}"

    return _timed("embed-gradient", run)


def check_plan_marginals(instances: int = 200, seed: int = 6) -> CheckResult:
    """Monotone plans carry exactly the input weights."""
    from .ot import axis_plans

    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(instances):
            dim = int(rng.integers(1, 5))
            a = random_distribution(rng, int(rng.integers(1, 50)), dim)
            b = random_distribution(rng, int(rng.integers(1, 50)), dim)
            for plan in axis_plans(a, b):
                rows, cols = plan.marginals()
                worst = max(worst, np.abs(rows - a.weights).max(), np.abs(cols - b.weights).max())
                if np.any(plan.mass < 0):
                    worst = np.inf
        return worst <= 1e-12, f"{instances} pairs, max marginal error={worst:.3e}"

    return _timed("plan-marginals", run)


def run_suite(scale: float = 1.0, seed: int = 0) -> list[CheckResult]:
    """All invariant checks; ``scale`` shrinks instance counts for quick runs."""
    count = lambda n: max(1, int(round(n * scale)))
    return [
        check_metric_properties(count(1000), seed),
        check_oracle_bound(count(500), seed + 1),
        check_impl_equivalence(count(1000), seed + 2),
        check_sliced_ordering(count(200), seed + 3),
        check_plan_marginals(count(200), seed + 6),
        check_embed_gradient(count(50), seed + 5),
        check_pipeline_gradient(count(50), seed + 4, "rpw2", "nccml"),
        check_pipeline_gradient(count(20), seed + 7, "sw2", "nccml"),
        check_pipeline_gradient(count(20), seed + 8, "pw2", "nca"),
    ]
