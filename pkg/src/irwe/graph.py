"""Undirected, unweighted graph topology and the loaders around it."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """Raised for malformed edge-list or label files."""


@dataclass(frozen=True)
class Graph:
    """Simple graph with contiguous internal indices ``0..N-1``.

    ``indptr``/``indices`` hold the CSR adjacency; each neighbor list is sorted.
    ``node_ids`` maps internal index -> external identifier.
    """

    node_ids: tuple[str, ...]
    indptr: np.ndarray
    indices: np.ndarray
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._index is None:
            object.__setattr__(self, "_index", {nid: i for i, nid in enumerate(self.node_ids)})
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[int, int]],
        num_nodes: int,
        node_ids: Sequence[str] | None = None,
    ) -> "Graph":
        """Build from index pairs; self-loops and duplicates are dropped."""
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            raise IndexError("edge endpoint outside [0, num_nodes)")
        edges = edges[edges[:, 0] != edges[:, 1]]
        both = np.concatenate([edges, edges[:, ::-1]])
        both = np.unique(both, axis=0) if len(both) else both
        order = np.lexsort((both[:, 1], both[:, 0])) if len(both) else np.zeros(0, dtype=np.int64)
        both = both[order]
        counts = np.bincount(both[:, 0], minlength=num_nodes) if len(both) else np.zeros(num_nodes, dtype=np.int64)
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = both[:, 1].astype(np.int64) if len(both) else np.zeros(0, dtype=np.int64)
        if node_ids is None:
            node_ids = [str(i) for i in range(num_nodes)]
        if len(node_ids) != num_nodes:
            raise ValueError("node_ids length does not match num_nodes")
        return cls(tuple(str(n) for n in node_ids), indptr, indices)

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def index_of(self, node_id: str) -> int:
        return self._index[node_id]

    def has_node(self, node_id: str) -> bool:
        return node_id in self._index

    def edges(self) -> np.ndarray:
        """Each undirected edge once, as ``(i, j)`` with ``i < j``."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees)
        mask = src < self.indices
        return np.stack([src[mask], self.indices[mask]], axis=1)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        src = np.repeat(np.arange(self.num_nodes), self.degrees)
        a[src, self.indices] = 1.0
        return a

    def to_networkx(self):
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(range(self.num_nodes))
        g.add_edges_from(map(tuple, self.edges()))
        return g


def parse_edge_lines(lines: Iterable[str], source: str = "<lines>") -> Graph:
    """Parse whitespace-separated edge lines; ``#`` starts a comment line."""
    index: dict[str, int] = {}
    pairs = []
    dropped_loops = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"{source}:{lineno}: expected two node ids, got {len(parts)} tokens")
        a, b = parts
        for t in (a, b):
            if t not in index:
                index[t] = len(index)
        if a == b:
            dropped_loops += 1
            continue
        pairs.append((index[a], index[b]))
    canon = {(min(i, j), max(i, j)) for i, j in pairs}
    dropped_dups = len(pairs) - len(canon)
    if dropped_loops or dropped_dups:
        log.warning("%s: dropped %d self-loops and %d duplicate edges", source, dropped_loops, dropped_dups)
    ids = sorted(index, key=index.get)
    return Graph.from_edges(sorted(canon), len(ids), ids)


def load_edge_list(path: str | Path) -> Graph:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        return parse_edge_lines(fh, source=str(path))


def load_labels(path: str | Path, graph: Graph) -> tuple[list[list[str]], bool]:
    """Read ``id label`` or ``id l1,l2,...`` lines.

    Returns per-node label lists (empty for unlabeled nodes) and whether any
    node carries more than one label. Ids absent from ``graph`` (e.g. a
    header row) are skipped with a warning.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    labels: list[list[str]] = [[] for _ in range(graph.num_nodes)]
    unknown = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected 'id label[,label...]'")
            if not graph.has_node(parts[0]):
                unknown += 1
                continue
            labels[graph.index_of(parts[0])] = [t for t in parts[1].split(",") if t]
    if unknown:
        log.warning("%s: skipped %d lines whose id is not in the graph", path, unknown)
    multilabel = any(len(x) > 1 for x in labels)
    return labels, multilabel


def induced_subgraph(g: Graph, keep: Iterable[int]) -> Graph:
    """Subgraph on ``keep`` (reindexed in ascending original order)."""
    keep = np.unique(np.asarray(list(keep), dtype=np.int64))
    if keep.size and (keep[0] < 0 or keep[-1] >= g.num_nodes):
        raise IndexError("keep contains an out-of-range node index")
    remap = np.full(g.num_nodes, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    e = g.edges()
    e = remap[e]
    e = e[(e >= 0).all(axis=1)]
    return Graph.from_edges(e, len(keep), [g.node_ids[i] for i in keep])


def subgraph_in_order(g: Graph, order: Sequence[int]) -> Graph:
    """Subgraph on ``order`` whose node ``k`` is ``g``'s node ``order[k]``."""
    order = np.asarray(list(order), dtype=np.int64)
    if len(np.unique(order)) != len(order):
        raise ValueError("order contains repeated nodes")
    if order.size and (order.min() < 0 or order.max() >= g.num_nodes):
        raise IndexError("order contains an out-of-range node index")
    remap = np.full(g.num_nodes, -1, dtype=np.int64)
    remap[order] = np.arange(len(order))
    e = remap[g.edges()]
    e = e[(e >= 0).all(axis=1)]
    return Graph.from_edges(e, len(order), [g.node_ids[i] for i in order])


def bfs_distances(g: Graph, source: int, max_hops: int | None = None) -> np.ndarray:
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        if max_hops is not None and dist[u] >= max_hops:
            continue
        for w in g.neighbors(u):
            if dist[w] < 0:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def rooted_subgraph_degree_profile(
    g: Graph,
    v: int,
    hops: int,
    buckets: int,
    deg_min: int | None = None,
    deg_max: int | None = None,
) -> np.ndarray:
    """Hop-wise bucketed degree histogram of the rooted subgraph around ``v``.

    Block ``i`` counts the degree buckets of nodes at exactly distance ``i``.
    """
    from .walks import degree_bucket

    if hops < 0 or buckets < 1:
        raise ValueError("hops must be >= 0 and buckets >= 1")
    degs = g.degrees
    lo = int(degs.min()) if deg_min is None else deg_min
    hi = int(degs.max()) if deg_max is None else deg_max
    dist = bfs_distances(g, v, hops)
    profile = np.zeros((hops + 1, buckets))
    for u in np.flatnonzero(dist >= 0):
        profile[dist[u], degree_bucket(int(degs[u]), lo, hi, buckets)] += 1
    return profile.ravel()
