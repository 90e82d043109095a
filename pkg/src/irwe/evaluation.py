"""Downstream evaluation: classification, clustering quality and split management."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import f1_score
from sklearn.multiclass import OneVsRestClassifier
from sklearn.preprocessing import MultiLabelBinarizer

from .graph import Graph, rooted_subgraph_degree_profile

log = logging.getLogger(__name__)

MIN_CLASS_SIZE = 8
PROFILE_PARAMS = {"default": (5, 500), "small": (3, 200)}


@dataclass
class SimilarityGraph:
    adjacency: np.ndarray  # symmetric 0/1
    k: int
    meta: dict = field(default_factory=dict)

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)


def cosine_similarity_matrix(x: np.ndarray) -> np.ndarray:
    """Cosine similarity; rows of zeros are 0-similar to everything."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    u = x / safe[:, None]
    sim = u @ u.T
    sim[norms == 0, :] = 0.0
    sim[:, norms == 0] = 0.0
    return sim


def build_similarity_graph(profiles: np.ndarray, k: int = 10) -> SimilarityGraph:
    """Link each node to its ``k`` most cosine-similar others (ties to the
    lower index), then symmetrize by union."""
    n = len(profiles)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n - 1:
        raise ValueError(f"k={k} needs at least {k + 1} nodes, got {n}")
    sim = cosine_similarity_matrix(profiles)
    adj = np.zeros((n, n))
    idx = np.arange(n)
    for i in range(n):
        others = idx[idx != i]
        order = np.lexsort((others, -sim[i, others]))
        adj[i, others[order[:k]]] = 1.0
    adj = np.maximum(adj, adj.T)
    return SimilarityGraph(adj, k, {"similarity": "cosine", "symmetrization": "union", "k": k})


def degree_similarity_graph(g: Graph, hops: int, buckets: int, k: int = 10) -> SimilarityGraph:
    """Similarity graph over hop-wise degree profiles of every node."""
    profiles = np.stack([rooted_subgraph_degree_profile(g, v, hops, buckets) for v in range(g.num_nodes)])
    sg = build_similarity_graph(profiles, k)
    sg.meta.update({"hops": hops, "buckets": buckets})
    return sg


def _check_assignment(labels, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"assignment must cover all {n} nodes")
    return np.unique(labels, return_inverse=True)[1]


def ncut(labels, g_d: SimilarityGraph) -> float:
    """``0.5 * sum_r cut(C_r) / vol(C_r)``; clusters of zero volume add nothing."""
    adj = g_d.adjacency
    lab = _check_assignment(labels, len(adj))
    onehot = np.eye(lab.max() + 1)[lab]
    vol = onehot.T @ adj.sum(axis=1)
    within = np.einsum("ir,ij,jr->r", onehot, adj, onehot)
    cut = vol - within
    ratios = np.divide(cut, vol, out=np.zeros_like(cut), where=vol > 0)
    return 0.5 * float(ratios.sum())


def modularity(labels, g: Graph) -> float:
    """Newman modularity of a hard partition of ``g``."""
    if g.num_edges == 0:
        raise ValueError("modularity is undefined on a graph without edges")
    lab = _check_assignment(labels, g.num_nodes)
    two_e = 2.0 * g.num_edges
    src = np.repeat(np.arange(g.num_nodes), g.degrees)
    inside = np.bincount(lab[src], weights=(lab[src] == lab[g.indices]).astype(float), minlength=lab.max() + 1)
    dsum = np.bincount(lab, weights=g.degrees.astype(float), minlength=lab.max() + 1)
    return float((inside - dsum * dsum / two_e).sum() / two_e)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    history: list  # inertia after each Lloyd iteration of the chosen restart


def _kmeanspp(x, k, rng):
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        i = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[i])
        d2 = np.minimum(d2, ((x - x[i]) ** 2).sum(axis=1))
    return np.array(centers)


def _assign(x, centers):
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    lab = d2.argmin(axis=1)
    return lab, d2[np.arange(len(x)), lab]


def _lloyd(x, centers, max_iter, tol):
    lab, dist = _assign(x, centers)
    history = [float(dist.sum())]
    for _ in range(max_iter):
        new = centers.copy()
        for r in range(len(centers)):
            members = lab == r
            if members.any():
                new[r] = x[members].mean(axis=0)
            else:
                # move an empty center onto the worst-served point
                far = int(dist.argmax())
                new[r] = x[far]
                dist[far] = 0.0
        new_lab, new_dist = _assign(x, new)
        inertia = float(new_dist.sum())
        if inertia > history[-1]:
            break
        centers, lab, dist = new, new_lab, new_dist
        history.append(inertia)
        if history[-2] - inertia <= tol * max(history[-2], 1e-300):
            break
    return lab, centers, history


def kmeans(points, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300, tol: float = 1e-10) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; best of ``restarts`` by inertia."""
    x = np.asarray(points, dtype=np.float64)
    if k < 1 or k > len(x):
        raise ValueError(f"need 1 <= K <= n, got K={k}, n={len(x)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(restarts, 1)):
        lab, centers, history = _lloyd(x, _kmeanspp(x, k, rng), max_iter, tol)
        if best is None or history[-1] < best.inertia:
            best = KMeansResult(lab, centers, history[-1], history)
    return best


@dataclass
class NodePartition:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        sets = [set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("partition parts overlap")


SPLIT_SCHEMES = ("transductive-fractions", "inductive-80-10-10")


def make_splits(n: int, scheme: str, repeats: int = 10, seed: int = 0, train_fraction: float = 0.8) -> list[NodePartition]:
    """Ten-fold style partitions of ``range(n)``.

    Repeat ``k`` uses fold ``k`` for validation. ``transductive-fractions``
    draws ``train_fraction * n`` training nodes from the remaining folds and
    tests on the rest; ``inductive-80-10-10`` tests on fold ``k + 1``.
    """
    if n < 10:
        raise ValueError("need at least 10 nodes for 10-fold splits")
    if scheme not in SPLIT_SCHEMES:
        raise ValueError(f"unknown split scheme {scheme!r}; choose from {SPLIT_SCHEMES}")
    if scheme == "transductive-fractions" and not 0 < train_fraction <= 0.9:
        raise ValueError("train_fraction must lie in (0, 0.9]")
    rng = np.random.default_rng(seed)
    out = []
    for rep in range(repeats):
        if rep % 10 == 0:
            folds = np.array_split(rng.permutation(n), 10)
        k = rep % 10
        val = np.sort(folds[k])
        if scheme == "inductive-80-10-10":
            test = np.sort(folds[(k + 1) % 10])
            train = np.sort(np.concatenate([folds[j] for j in range(10) if j not in (k, (k + 1) % 10)]))
        else:
            rest = rng.permutation(np.concatenate([folds[j] for j in range(10) if j != k]))
            n_train = min(int(round(train_fraction * n)), len(rest) - 1)
            train, test = np.sort(rest[:n_train]), np.sort(rest[n_train:])
        out.append(NodePartition(train, val, test))
    return out


def filter_small_classes(labels: Sequence[Sequence[str]], min_count: int = MIN_CLASS_SIZE) -> list[list[str]]:
    """Drop classes with fewer than ``min_count`` members from every label list."""
    counts = Counter(c for row in labels for c in row)
    keep = {c for c, n in counts.items() if n >= min_count}
    dropped = sorted(set(counts) - keep)
    if dropped:
        log.info("removed %d classes with < %d members", len(dropped), min_count)
    return [[c for c in row if c in keep] for row in labels]


def _fit_predict(x_train, y_train, x_test, mode: str, c: float):
    base = LogisticRegression(C=c, tol=1e-6, max_iter=5000)
    if mode == "multiclass":
        if len(set(y_train)) < 2:
            raise ValueError("training split holds a single class")
        return base.fit(x_train, y_train).predict(x_test)
    clf = OneVsRestClassifier(base).fit(x_train, y_train)
    return (clf.predict_proba(x_test) >= 0.5).astype(int)


def logistic_eval(
    embeddings,
    labels: Sequence[Sequence[str]],
    split: NodePartition,
    mode: str = "multiclass",
    c_grid: Sequence[float] = (1.0,),
) -> float:
    """Micro-F1 of L2-regularized logistic regression on ``split.test``.

    ``C`` is chosen on the validation part when ``c_grid`` has several values;
    the final model is fit on train plus validation.
    """
    if mode not in ("multiclass", "multilabel"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(embeddings, dtype=np.float64)
    if mode == "multiclass":
        if any(len(r) != 1 for r in (labels[i] for i in np.concatenate([split.train, split.val, split.test]))):
            raise ValueError("multiclass evaluation needs exactly one label per split node")
        y = np.array([r[0] for r in labels], dtype=object) if len(labels) else np.array([])

        def target(idx):
            return y[idx]

        def score(truth, pred):
            return f1_score(truth, pred, average="micro")
    else:
        mlb = MultiLabelBinarizer().fit(labels)
        if len(mlb.classes_) == 0:
            raise ValueError("no classes left after filtering")
        y = mlb.transform(labels)

        def target(idx):
            return y[idx]

        def score(truth, pred):
            return f1_score(truth, pred, average="micro", zero_division=0)

    c_best = c_grid[0]
    if len(c_grid) > 1 and len(split.val):
        scores = [score(target(split.val), _fit_predict(x[split.train], target(split.train), x[split.val], mode, c)) for c in c_grid]
        c_best = c_grid[int(np.argmax(scores))]
    fit_idx = np.concatenate([split.train, split.val])
    pred = _fit_predict(x[fit_idx], target(fit_idx), x[split.test], mode, c_best)
    return float(score(target(split.test), pred))


@dataclass
class MetricRow:
    dataset: str
    task: str
    split: str
    repeat: str
    metric: str
    value: float


def with_mean_rows(rows: list[MetricRow]) -> list[MetricRow]:
    """Append one mean-over-repeats row per (dataset, task, split, metric)."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r.dataset, r.task, r.split, r.metric), []).append(r.value)
    means = [MetricRow(d, t, s, "mean", m, float(np.mean(v))) for (d, t, s, m), v in groups.items()]
    return rows + means


def write_report(path: str | Path, rows: list[MetricRow], meta: dict | None = None):
    """TSV report; metadata goes in leading ``# key=value`` lines."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["dataset", "task", "split-fraction", "repeat", "metric", "value"])
        for r in rows:
            w.writerow([r.dataset, r.task, r.split, r.repeat, r.metric, repr(float(r.value))])


def read_report(path: str | Path) -> tuple[dict, list[MetricRow]]:
    meta, rows = {}, []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            meta[k] = v
        else:
            body.append(line)
    for rec in csv.DictReader(body, delimiter="\t"):
        rows.append(MetricRow(rec["dataset"], rec["task"], rec["split-fraction"], rec["repeat"], rec["metric"], float(rec["value"])))
    return meta, rows


def classification_rows(
    embeddings,
    labels: Sequence[Sequence[str]],
    *,
    dataset: str,
    scheme: str,
    fractions: Sequence[float] = (0.8,),
    repeats: int = 10,
    seed: int = 0,
    c_grid: Sequence[float] = (1.0,),
    task: str = "classify",
) -> list[MetricRow]:
    """Micro-F1 per repeat over labelled nodes (small classes removed)."""
    labels = filter_small_classes(labels)
    labelled = np.array([i for i, r in enumerate(labels) if r])
    if len(labelled) < 10:
        raise ValueError("fewer than 10 labelled nodes after filtering")
    mode = "multilabel" if any(len(r) > 1 for r in labels) else "multiclass"
    x = np.asarray(embeddings)[labelled]
    sub_labels = [labels[i] for i in labelled]
    rows = []
    fracs = fractions if scheme == "transductive-fractions" else (0.8,)
    for frac in fracs:
        for rep, part in enumerate(make_splits(len(labelled), scheme, repeats, seed, frac)):
            f1 = logistic_eval(x, sub_labels, part, mode, c_grid)
            rows.append(MetricRow(dataset, task, f"{frac:g}", str(rep), "micro-f1", f1))
    return rows


def clustering_rows(
    embeddings,
    k: int,
    *,
    dataset: str,
    task: str,
    score,
    metric: str,
    repeats: int = 10,
    seed: int = 0,
) -> list[MetricRow]:
    """KMeans with ``k`` clusters per repeat, scored by ``score(labels)``."""
    rows = []
    for rep in range(repeats):
        result = kmeans(embeddings, k, seed=seed + rep)
        rows.append(MetricRow(dataset, task, "all", str(rep), metric, score(result.labels)))
    return rows
