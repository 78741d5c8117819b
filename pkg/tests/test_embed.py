import numpy as np
import pytest

from graphmetric.data import Graph, tud_load
from graphmetric.embed import (FeatureCache, PropagatedFeatures, SgcnParams, StaleMaskError,
                               default_output_dim, embed, embed_gradient, forward, init_params,
                               init_theta, load_params, propagate, save_params)
from graphmetric.ot import DiscreteDistribution, rpw2
from graphmetric.train import pairwise_graph_distance


def cycle(n=4, q=3, seed=0):
    x = np.random.default_rng(seed).standard_normal((n, q))
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)], x)


def test_propagate_depth_zero_is_identity():
    g = cycle()
    np.testing.assert_array_equal(propagate(g, 0), g.attributes)


def test_propagate_two_node_path():
    g = Graph.from_edges(2, [(0, 1)], [[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_array_equal(propagate(g, 1), [[4.0, 1.0], [4.0, 1.0]])


def test_propagate_cycle_matches_dense_power():
    g = cycle()
    a = g.adjacency.toarray() + np.eye(4)
    np.testing.assert_allclose(propagate(g, 2), a @ a @ g.attributes, rtol=1e-14)
    d = np.diag(1 / np.sqrt(a.sum(axis=1)))
    s = d @ a @ d
    np.testing.assert_allclose(propagate(g, 2, normalize=True), s @ s @ g.attributes, rtol=1e-13)


@pytest.mark.parametrize("depth", [0, 1, 3])
def test_embed_single_node_clamps(depth):
    g = Graph.from_edges(1, [], [[1.0, -1.0]])
    mu = embed(g, SgcnParams(np.eye(2), depth))
    np.testing.assert_array_equal(mu.support, [[1.0, 0.0]])
    np.testing.assert_array_equal(mu.weights, [1.0])


def test_zero_theta_embeds_at_origin():
    params = SgcnParams(np.zeros((3, 2)), 2)
    a, b = embed(cycle(seed=1), params), embed(cycle(5, seed=2), params)
    assert not a.support.any() and not b.support.any()
    assert rpw2(a, b) == 0.0


def test_mutag_first_graph_uniform_weights(mutag_dir):
    indicator = [int(v) for v in (mutag_dir / "MUTAG_graph_indicator.txt").read_text().split()]
    n_first = indicator.count(1)
    ds = tud_load(mutag_dir)
    mu = embed(ds.graphs[0], init_params(ds.num_features, seed=0))
    assert n_first == 17 and mu.size == n_first
    np.testing.assert_array_equal(mu.weights, np.full(17, 1 / 17))


def test_embed_rejects_wrong_input_dim():
    with pytest.raises(ValueError):
        embed(cycle(q=3), SgcnParams(np.eye(4)))


def test_params_validation_and_init():
    with pytest.raises(ValueError):
        SgcnParams(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        SgcnParams(np.array([[np.nan]]))
    assert default_output_dim(7) == 5 and default_output_dim(3) == 3
    p = init_params(7, seed=4, depth=2)
    assert p.theta.shape == (7, 5) and p.depth == 2
    np.testing.assert_array_equal(p.theta, init_params(7, seed=4).theta)
    bound = np.sqrt(6 / 12)
    assert np.abs(init_theta(7, 5, 0)).max() <= bound


def test_gradient_zero_upstream():
    g = cycle()
    params = init_params(3, 2, 1, seed=0)
    feats = FeatureCache().get(g, 1)
    forward(feats, params)
    np.testing.assert_array_equal(embed_gradient(feats, params, np.zeros((4, 2))), 0.0)


def test_gradient_single_node_outer_product():
    x = np.array([[1.0, 2.0, 0.5]])
    theta = np.array([[1.0, 0.2], [0.3, 1.0], [0.1, 0.1]])  # x @ theta > 0 on both units
    params = SgcnParams(theta, 0)
    feats = PropagatedFeatures(x)
    forward(feats, params)
    up = np.array([[0.7, -1.3]])
    np.testing.assert_allclose(embed_gradient(feats, params, up), np.outer(x[0], up[0]), rtol=1e-15)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    g = Graph.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)],
                         rng.standard_normal((6, 4)))
    params = SgcnParams(rng.standard_normal((4, 3)), 2)
    feats = FeatureCache().get(g, 2)
    up = rng.standard_normal((6, 3))
    y = forward(feats, params)
    mask = feats.relu_mask.copy()
    grad = embed_gradient(feats, params, up)
    fd = np.zeros_like(grad)
    h = 1e-6
    for idx in np.ndindex(grad.shape):
        t = params.theta.copy()
        t[idx] += h
        plus = np.maximum(feats.h @ t, 0.0)
        t[idx] -= 2 * h
        minus = np.maximum(feats.h @ t, 0.0)
        assert np.array_equal(feats.h @ t > 0, mask)
        fd[idx] = np.sum(up * (plus - minus)) / (2 * h)
    assert y.shape == (6, 3)
    assert np.linalg.norm(grad - fd) <= 1e-5 * np.linalg.norm(fd)


def test_stale_mask_detected():
    g = cycle()
    params = init_params(3, 2, 1, seed=0)
    feats = FeatureCache().get(g, 1)
    with pytest.raises(StaleMaskError):
        embed_gradient(feats, params, np.zeros((4, 2)))
    forward(feats, params)
    moved = params.with_theta(params.theta + 0.1)
    with pytest.raises(StaleMaskError):
        embed_gradient(feats, moved, np.zeros((4, 2)))


def test_feature_cache_reuses_entries():
    cache = FeatureCache()
    g = cycle()
    assert cache.get(g, 2) is cache.get(g, 2)
    assert cache.get(g, 2) is not cache.get(g, 2, normalize=True)
    assert len(cache) == 2
    with pytest.raises(ValueError):
        cache.get(g, 2).h[0, 0] = 1.0


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(7, 5, 3, seed=11, normalize_adjacency=True)
    path = tmp_path / "theta.txt"
    save_params(path, params)
    assert path.read_text().splitlines()[0] == "# q=7 p=5 r=3 normalize=1 seed=11"
    back = load_params(path)
    np.testing.assert_array_equal(back.theta, params.theta)
    assert (back.depth, back.normalize_adjacency, back.seed) == (3, True, 11)


def test_checkpoint_rejects_bad_files(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("1 2\n3 4\n")
    with pytest.raises(ValueError):
        load_params(path)
    path.write_text("# q=3 p=2 r=1 normalize=0 seed=none\n1 2\n3 4\n")
    with pytest.raises(ValueError):
        load_params(path)


def test_graph_distance_examples():
    g = cycle(seed=5)
    params = init_params(3, 2, 1, seed=1)
    assert pairwise_graph_distance(g, g, params)[0] == 0.0
    a = Graph.from_edges(1, [], [[1.0, 0.0]])
    b = Graph.from_edges(1, [], [[0.0, 0.0]])
    dist, plans = pairwise_graph_distance(a, b, SgcnParams(np.eye(2), 1))
    assert dist == 1.0 and len(plans) == 2


def test_graph_distance_composes_with_ot_core():
    params = init_params(3, 3, 2, seed=2)
    g1, g2 = cycle(5, seed=6), cycle(7, seed=7)
    dist, _ = pairwise_graph_distance(g1, g2, params)
    mu = np.maximum(propagate(g1, 2) @ params.theta, 0)
    nu = np.maximum(propagate(g2, 2) @ params.theta, 0)
    assert dist == pytest.approx(rpw2(DiscreteDistribution.uniform(mu), DiscreteDistribution.uniform(nu),
                                      "sequential"), rel=1e-12)
