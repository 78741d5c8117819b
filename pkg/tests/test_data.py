import numpy as np
import pytest

from graphmetric.data import (DatasetError, EncodingError, FeatureRecipe, Graph, GraphDataset,
                              RecipeError, SplitError, one_hot_encode, stratified_folds,
                              stratified_split, tud_load)


def _raw_ints(path):
    return [[int(v) for v in line.split(",")] for line in path.read_text().split("\n") if line.strip()]


def test_toy_single_graph(tmp_path, tud_writer):
    d = tud_writer(tmp_path / "TOY", "TOY", [(1, 2)], [1, 1], [5], node_labels=[0, 1])
    ds = tud_load(d)
    g = ds.graphs[0]
    assert sorted(zip(*g.adjacency.nonzero())) == [(0, 1), (1, 0)]
    np.testing.assert_array_equal(g.attributes, [[1, 0], [0, 1]])
    assert ds.class_set == (5,) and ds.labels.tolist() == [0]


def test_duplicate_and_directed_edges_collapse(tmp_path, tud_writer):
    d = tud_writer(tmp_path / "T", "T", [(1, 2), (2, 1), (1, 2), (2, 3)], [1, 1, 1], [0],
                   node_labels=[0, 0, 1])
    adj = tud_load(d).graphs[0].adjacency.toarray()
    np.testing.assert_array_equal(adj, [[0, 1, 0], [1, 0, 1], [0, 1, 0]])


def test_one_hot_examples():
    np.testing.assert_array_equal(one_hot_encode([0, 2, 1], 3), [[1, 0, 0], [0, 0, 1], [0, 1, 0]])
    np.testing.assert_array_equal(one_hot_encode([0], 1), [[1]])


@pytest.mark.parametrize("labels,size", [([3], 3), ([-1], 2), ([0.5], 2)])
def test_one_hot_rejects_out_of_domain(labels, size):
    with pytest.raises(EncodingError):
        one_hot_encode(labels, size)


def test_mutag_degree_recipe(mutag_dir):
    ds = tud_load(mutag_dir, FeatureRecipe("degree"))
    assert len(ds.graphs) == 188
    assert round(ds.average_node_count(), 2) == 17.93
    assert ds.num_features == 4
    for g in ds.graphs:
        np.testing.assert_array_equal(g.attributes.sum(axis=1), 1.0)
        # the one-hot column is the rank of the node's degree among observed values
        cols = np.argmax(g.attributes, axis=1)
        np.testing.assert_array_equal(np.asarray(ds.degree_values)[cols], g.degrees())


def test_mutag_labels_match_raw_files(mutag_dir):
    ds = tud_load(mutag_dir)
    raw = [r[0] for r in _raw_ints(mutag_dir / "MUTAG_graph_labels.txt")]
    node_raw = [r[0] for r in _raw_ints(mutag_dir / "MUTAG_node_labels.txt")]
    assert ds.num_features == len(set(node_raw))
    assert ds.class_set == tuple(sorted(set(raw)))
    np.testing.assert_array_equal(np.asarray(ds.class_set)[ds.labels], raw)
    assert sum(g.node_count for g in ds.graphs) == len(node_raw)
    assert sum(g.adjacency.nnz for g in ds.graphs) == len(_raw_ints(mutag_dir / "MUTAG_A.txt"))


def test_degree_cap_clips(mutag_dir):
    ds = tud_load(mutag_dir, FeatureRecipe("degree", degree_cap=3))
    assert ds.num_features == 3
    g = max(ds.graphs, key=lambda g: g.degrees().max())
    assert g.degrees().max() >= 3
    np.testing.assert_array_equal(np.argmax(g.attributes, axis=1), np.minimum(g.degrees(), 2))


def test_extended_concat_column_count_toy(tmp_path, tud_writer):
    # one continuous column plus three distinct node labels
    d = tud_writer(tmp_path / "P", "P", [(1, 2), (3, 4)], [1, 1, 2, 2], [1, 2],
                   node_labels=[0, 1, 2, 1], node_attributes=[[0.5], [1.5], [2.5], [3.5]])
    ds = tud_load(d, FeatureRecipe("extended-concat"))
    assert ds.num_features == 4
    np.testing.assert_array_equal(ds.graphs[1].attributes, [[2.5, 0, 0, 1], [3.5, 0, 1, 0]])


def test_extended_concat_cuneiform_counts(cuneiform_dir):
    attrs = (cuneiform_dir / "Cuneiform_node_attributes.txt").read_text().split("\n")[0].split(",")
    label_rows = _raw_ints(cuneiform_dir / "Cuneiform_node_labels.txt")
    expected = len(attrs) + sum(len({row[c] for row in label_rows}) for c in range(len(label_rows[0])))
    ds = tud_load(cuneiform_dir, FeatureRecipe("extended-concat"))
    assert ds.num_features == expected
    x = np.vstack([g.attributes for g in ds.graphs])
    np.testing.assert_array_equal(x[:, len(attrs):].sum(axis=1), len(label_rows[0]))


def test_standardize_continuous_columns(cuneiform_dir):
    ds = tud_load(cuneiform_dir, FeatureRecipe("raw-continuous", standardize=True))
    x = np.vstack([g.attributes for g in ds.graphs])
    np.testing.assert_allclose(x.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(x.std(axis=0), 1.0, atol=1e-10)


def test_recipe_errors(tmp_path, tud_writer, mutag_dir):
    with pytest.raises(RecipeError):
        FeatureRecipe("spectral")
    with pytest.raises(RecipeError):
        tud_load(mutag_dir, FeatureRecipe("raw-continuous"))
    with pytest.raises(DatasetError):
        tud_load(tmp_path / "missing")
    d = tud_writer(tmp_path / "BAD", "BAD", [(1, 2)], [1, 1, 2], [0], node_labels=[0, 0, 0])
    with pytest.raises(DatasetError):
        tud_load(d)
    d = tud_writer(tmp_path / "X", "X", [(1, 3)], [1, 1, 2], [0, 1], node_labels=[0, 0, 0])
    with pytest.raises(DatasetError, match="different graphs"):
        tud_load(d)


def test_graph_validation():
    with pytest.raises(ValueError):
        Graph.from_edges(2, [(0, 1)], np.zeros((3, 1)))
    with pytest.raises(ValueError):
        Graph.from_edges(2, [(0, 1)], np.array([[np.nan], [0.0]]))


def _dataset(labels):
    graphs = tuple(Graph.from_edges(1, [], np.ones((1, 1)), i) for i in range(len(labels)))
    return GraphDataset(graphs, np.asarray(labels), tuple(sorted(set(labels))), "toy")


def test_split_ten_balanced():
    ds = _dataset([0] * 5 + [1] * 5)
    tr, te = stratified_split(ds, 0.9, seed=3)
    assert tr.size == 9 and te.size == 1
    again = stratified_split(ds, 0.9, seed=3)
    np.testing.assert_array_equal(te, again[1])
    seen = {int(ds.labels[stratified_split(ds, 0.9, s)[1][0]]) for s in range(20)}
    assert seen == {0, 1}


def test_split_half_of_four():
    ds = _dataset([0, 0, 1, 1])
    for seed in range(5):
        tr, te = stratified_split(ds, 0.5, seed)
        assert sorted(ds.labels[tr]) == [0, 1] and sorted(ds.labels[te]) == [0, 1]


def test_split_mutag_seeds(mutag_dir):
    ds = tud_load(mutag_dir)
    counts = np.bincount(ds.labels)
    tests = []
    for seed in (0, 1):
        tr, te = stratified_split(ds, 0.9, seed)
        assert np.intersect1d(tr, te).size == 0 and tr.size + te.size == 188
        ideal = 0.1 * counts
        assert np.all(np.abs(np.bincount(ds.labels[te], minlength=2) - ideal) <= 1)
        tests.append(te)
    assert not np.array_equal(*tests)


def test_split_errors():
    with pytest.raises(SplitError):
        stratified_split(_dataset([0, 0, 1]), 0.5, 0)
    with pytest.raises(SplitError):
        stratified_split(_dataset([0, 0, 1, 1]), 1.0, 0)


def test_folds_partition_and_balance():
    labels = np.array([0] * 30 + [1] * 13)
    idx = np.arange(1, 43)
    folds = stratified_folds(labels, idx, 5, seed=1)
    np.testing.assert_array_equal(np.sort(np.concatenate(folds)), idx)
    sizes = [f.size for f in folds]
    assert max(sizes) - min(sizes) <= 1
    for c in (0, 1):
        per = [int(np.sum(labels[f] == c)) for f in folds]
        assert max(per) - min(per) <= 1
