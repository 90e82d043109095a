import networkx as nx
import numpy as np
import pytest
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score

from irwe.evaluation import (
    MetricRow,
    NodePartition,
    SimilarityGraph,
    build_similarity_graph,
    classification_rows,
    cosine_similarity_matrix,
    degree_similarity_graph,
    filter_small_classes,
    kmeans,
    logistic_eval,
    make_splits,
    modularity,
    ncut,
    read_report,
    with_mean_rows,
    write_report,
)
from irwe.graph import Graph

from conftest import toy_graph


def two_cliques(m: int = 5) -> Graph:
    edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
    edges += [(i + m, j + m) for i, j in edges]
    return Graph.from_edges(edges, 2 * m)


class TestModularity:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_networkx(self, seed):
        rng = np.random.default_rng(seed)
        g = Graph.from_edges(nx.gnp_random_graph(30, 0.2, seed=seed).edges(), 30)
        lab = rng.integers(0, 4, 30)
        comms = [set(np.flatnonzero(lab == c).tolist()) for c in np.unique(lab)]
        assert modularity(lab, g) == pytest.approx(nx.community.modularity(g.to_networkx(), comms), abs=1e-12)

    @pytest.mark.parametrize("g", [toy_graph(), two_cliques(), Graph.from_edges(nx.karate_club_graph().edges(), 34)])
    def test_single_cluster_zero(self, g):
        assert abs(modularity(np.zeros(g.num_nodes, dtype=int), g)) <= 1e-12

    def test_two_cliques_half(self):
        assert abs(modularity(np.repeat([0, 1], 5), two_cliques()) - 0.5) <= 1e-12

    def test_random_assignment_near_zero(self):
        g = Graph.from_edges(nx.karate_club_graph().edges(), 34)
        rng = np.random.default_rng(0)
        vals = [modularity(rng.integers(0, 3, 34), g) for _ in range(100)]
        assert abs(np.mean(vals)) < 0.1

    def test_relabel_invariant_and_errors(self):
        g = toy_graph()
        lab = np.array([0, 0, 1, 1, 2, 2, 0, 1, 2, 0])
        assert modularity(lab, g) == pytest.approx(modularity((lab + 1) % 3 * 7, g), abs=1e-15)
        with pytest.raises(ValueError):
            modularity(np.zeros(3), Graph.from_edges([], 3))
        with pytest.raises(ValueError):
            modularity(np.zeros(4), g)


class TestNCut:
    def sim(self, g: Graph) -> SimilarityGraph:
        return SimilarityGraph(g.adjacency(), 1)

    def test_component_split(self):
        assert ncut(np.repeat([0, 1], 5), self.sim(two_cliques())) == 0.0

    def test_single_cluster(self):
        assert ncut(np.zeros(10, dtype=int), self.sim(toy_graph())) == 0.0

    def test_four_cycle(self):
        cyc = Graph.from_edges([(0, 1), (1, 2), (2, 3), (3, 0)], 4)
        assert ncut(np.array([0, 1, 0, 1]), self.sim(cyc)) == pytest.approx(1.0)

    def test_direct_formula(self):
        g = toy_graph(seed=3)
        a = g.adjacency()
        lab = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2, 0])
        expected = 0.0
        for r in range(3):
            inside = lab == r
            expected += a[inside][:, ~inside].sum() / a[inside].sum()
        assert ncut(lab, self.sim(g)) == pytest.approx(0.5 * expected, abs=1e-12)
        assert ncut(lab, self.sim(g)) == pytest.approx(ncut(2 - lab, self.sim(g)), abs=1e-15)

    def test_zero_volume_cluster(self):
        adj = np.zeros((3, 3))
        adj[0, 1] = adj[1, 0] = 1
        assert ncut(np.array([0, 0, 1]), SimilarityGraph(adj, 1)) == 0.0


class TestSimilarityGraph:
    def test_identical_profiles_mutual(self):
        prof = np.array([[1, 0, 2], [1, 0, 2], [0, 5, 0], [3, 1, 1]], dtype=float)
        sg = build_similarity_graph(prof, 1)
        assert sg.adjacency[0, 1] == sg.adjacency[1, 0] == 1
        np.testing.assert_array_equal(sg.adjacency, sg.adjacency.T)

    def test_complete_when_k_is_n_minus_1(self):
        sg = build_similarity_graph(np.random.default_rng(0).random((6, 3)), 5)
        np.testing.assert_array_equal(sg.adjacency, 1 - np.eye(6))
        with pytest.raises(ValueError):
            build_similarity_graph(np.ones((3, 2)), 3)

    def test_two_regimes_exhaustive(self):
        prof = np.array([[5, 1, 0], [6, 1, 0], [5, 2, 0], [0, 1, 5], [0, 1, 6], [0, 2, 5]], dtype=float)
        n = len(prof)
        sim = np.array([[prof[i] @ prof[j] / np.linalg.norm(prof[i]) / np.linalg.norm(prof[j]) for j in range(n)] for i in range(n)])
        expected = np.zeros((n, n))
        for i in range(n):
            ranked = sorted((j for j in range(n) if j != i), key=lambda j: (-sim[i, j], j))
            expected[i, ranked[:2]] = 1
        expected = np.maximum(expected, expected.T)
        sg = build_similarity_graph(prof, 2)
        np.testing.assert_array_equal(sg.adjacency, expected)
        assert sg.adjacency[:3, 3:].sum() == 0

    def test_zero_profile_tie_break(self):
        prof = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
        assert (cosine_similarity_matrix(prof)[0] == 0).all()
        sg = build_similarity_graph(prof, 2)
        assert sg.adjacency[0, 1] == sg.adjacency[0, 2] == 1

    def test_degree_similarity_graph(self):
        sg = degree_similarity_graph(toy_graph(), 3, 200, k=3)
        assert (sg.degrees >= 3).all() and sg.meta["hops"] == 3


class TestKMeans:
    def test_blob_recovery(self):
        rng = np.random.default_rng(0)
        centers = np.array([[0, 0], [10, 0], [0, 10], [10, 10]])
        truth = np.repeat(np.arange(4), 25)
        x = centers[truth] + rng.normal(0, 0.5, (100, 2))
        res = kmeans(x, 4, seed=1)
        assert adjusted_rand_score(truth, res.labels) == 1.0
        assert all(b <= a for a, b in zip(res.history, res.history[1:]))

    def test_matches_sklearn_inertia(self):
        x = np.random.default_rng(1).normal(size=(200, 5))
        ours = kmeans(x, 6, seed=0, restarts=10)
        ref = KMeans(6, n_init=10, random_state=0).fit(x)
        assert ours.inertia <= ref.inertia_ * 1.02

    def test_k_equals_n_and_duplicates(self):
        x = np.random.default_rng(2).normal(size=(5, 2))
        res = kmeans(x, 5)
        assert res.inertia == 0.0 and len(set(res.labels)) == 5
        dup = np.vstack([x, x[:1]])
        lab = kmeans(dup, 3, seed=4).labels
        assert lab[0] == lab[-1]

    def test_deterministic_and_errors(self):
        x = np.random.default_rng(3).normal(size=(40, 3))
        assert np.array_equal(kmeans(x, 3, seed=7).labels, kmeans(x, 3, seed=7).labels)
        with pytest.raises(ValueError):
            kmeans(x[:2], 3)


class TestClassification:
    def test_separable(self):
        rng = np.random.default_rng(0)
        y = np.repeat([0, 1], 50)
        x = np.c_[y * 10 + rng.normal(0, 1, 100), rng.normal(size=100)]
        part = make_splits(100, "inductive-80-10-10", 1)[0]
        assert logistic_eval(x, [[str(v)] for v in y], part) == 1.0

    def test_null(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2000, 4))
        y = [[str(v)] for v in rng.integers(0, 2, 2000)]
        scores = [logistic_eval(x, y, p) for p in make_splits(2000, "inductive-80-10-10", 3)]
        assert abs(np.mean(scores) - 0.5) < 0.1

    def test_constant_embeddings_majority(self):
        y = [["a"]] * 70 + [["b"]] * 30
        order = np.random.default_rng(0).permutation(100)
        y = [y[i] for i in order]
        part = make_splits(100, "inductive-80-10-10", 1)[0]
        test_labels = [y[i][0] for i in part.test]
        f1 = logistic_eval(np.ones((100, 3)), y, part)
        assert f1 == pytest.approx(test_labels.count("a") / len(test_labels))

    def test_multilabel(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(200, 3))
        y = [[c for c, on in (("p", r[0] > 0), ("q", r[1] > 0)) if on] for r in x]
        part = make_splits(200, "inductive-80-10-10", 1)[0]
        assert logistic_eval(x, y, part, mode="multilabel") > 0.9

    def test_single_class_split_errors(self):
        part = NodePartition(np.arange(5), np.array([5]), np.array([6, 7]))
        with pytest.raises(ValueError):
            logistic_eval(np.random.rand(8, 2), [["a"]] * 8, part)

    def test_filter_small_classes(self):
        labels = [["a"]] * 8 + [["b"]] * 7 + [["a", "b"]]
        out = filter_small_classes(labels)
        assert out[:8] == [["a"]] * 8 and out[15] == ["a", "b"]
        out = filter_small_classes([["a"]] * 8 + [["b"]] * 3)
        assert out[-1] == [] and len({c for r in out for c in r}) <= 2

    def test_classification_rows_micro_f1_range(self):
        rng = np.random.default_rng(3)
        y = [[str(v)] for v in rng.integers(0, 3, 60)]
        rows = classification_rows(rng.normal(size=(60, 4)), y, dataset="t", scheme="transductive-fractions", fractions=(0.2, 0.8), repeats=3)
        assert len(rows) == 6 and all(0 <= r.value <= 1 for r in rows)


class TestSplits:
    def test_inductive_sizes_and_coverage(self):
        parts = make_splits(100, "inductive-80-10-10", 10, seed=0)
        assert all((len(p.train), len(p.val), len(p.test)) == (80, 10, 10) for p in parts)
        assert sorted(np.concatenate([p.val for p in parts]).tolist()) == list(range(100))
        assert sorted(np.concatenate([p.test for p in parts]).tolist()) == list(range(100))

    def test_fraction_sizes(self):
        for frac in (0.2, 0.4, 0.6, 0.8):
            p = make_splits(100, "transductive-fractions", 2, seed=1, train_fraction=frac)[1]
            assert len(p.train) == round(frac * 100) and len(p.val) == 10 and len(p.train) + len(p.test) == 90

    def test_deterministic_and_disjoint(self):
        a = make_splits(57, "transductive-fractions", 10, seed=3)
        b = make_splits(57, "transductive-fractions", 10, seed=3)
        for p, q in zip(a, b):
            assert np.array_equal(p.train, q.train) and np.array_equal(p.test, q.test)
            assert not (set(p.train) & set(p.test)) and not (set(p.val) & set(p.test))
        with pytest.raises(ValueError):
            NodePartition(np.array([1]), np.array([1]), np.array([2]))

    def test_errors(self):
        with pytest.raises(ValueError):
            make_splits(9, "inductive-80-10-10")
        with pytest.raises(ValueError):
            make_splits(20, "other")


def test_report_roundtrip(tmp_path):
    rows = [MetricRow("d", "classify", "0.8", str(i), "micro-f1", v) for i, v in enumerate([0.5, 0.7])]
    rows = with_mean_rows(rows)
    write_report(tmp_path / "r.tsv", rows, {"embedding": "psi"})
    meta, back = read_report(tmp_path / "r.tsv")
    assert meta == {"embedding": "psi"}
    assert back[-1].repeat == "mean" and back[-1].value == pytest.approx(0.6)
    header = (tmp_path / "r.tsv").read_text().splitlines()[1]
    assert header.split("\t") == ["dataset", "task", "split-fraction", "repeat", "metric", "value"]
