"""Random-walk sampling, anonymous walks and the walk-induced node statistics."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import Graph

MAX_AW_LENGTH = 12
STATS_FORMAT_VERSION = 1


def child_rng(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, purpose, *keys)``.

    Streams do not depend on the order in which they are requested.
    """
    tag = zlib.crc32(purpose.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag, *map(int, keys)]))


def sample_walks(g: Graph, v: int, l: int, n_s: int, seed: int) -> np.ndarray:
    """``n_s`` uniform random walks of ``l`` steps from ``v``, as an ``(n_s, l+1)`` array."""
    walks, _ = _sample_node(g, v, l, n_s, 0, seed)
    return walks


def _sample_node(g: Graph, v: int, l: int, n_s: int, n_i: int, seed: int):
    if l < 1 or n_s < 1:
        raise ValueError("walk length and walk count must be >= 1")
    if g.degree(v) == 0:
        raise ValueError(f"node {g.node_ids[v]!r} has no outgoing edges")
    rng = child_rng(seed, "walks", v)
    indptr, indices = g.indptr, g.indices
    walks = np.empty((n_s, l + 1), dtype=np.int64)
    walks[:, 0] = v
    for j in range(l):
        cur = walks[:, j]
        start = indptr[cur]
        offs = rng.integers(0, indptr[cur + 1] - start)
        walks[:, j + 1] = indices[start + offs]
    inf_idx = rng.permutation(n_s)[:n_i]
    return walks, inf_idx


def to_anonymous(walks: np.ndarray) -> np.ndarray:
    """Replace each node by the rank of its first occurrence in the walk.

    Works on a single walk ``(l+1,)`` or a batch ``(n, l+1)``.
    """
    w = np.asarray(walks)
    single = w.ndim == 1
    w = np.atleast_2d(w)
    length = w.shape[1]
    eq = w[:, :, None] == w[:, None, :]
    first = eq.argmax(axis=2)
    is_new = first == np.arange(length)
    rank = np.cumsum(is_new, axis=1) - 1
    codes = np.take_along_axis(rank, first, axis=1)
    return codes[0] if single else codes


def is_canonical(codes) -> bool:
    """True iff ``codes`` is a first-occurrence (restricted growth) sequence."""
    top = -1
    for c in codes:
        if c < 0 or c > top + 1:
            return False
        top = max(top, c)
    return len(codes) > 0 and codes[0] == 0


def bell_number(n: int) -> int:
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for x in row:
            nxt.append(nxt[-1] + x)
        row = nxt
    return row[0]


@dataclass(frozen=True)
class AwTable:
    """Lexicographically ordered anonymous walks of one length."""

    length: int
    codes: np.ndarray  # (eta, length+1) int8
    keys: np.ndarray  # (eta,) int64, strictly increasing

    @property
    def eta(self) -> int:
        return len(self.keys)

    def __len__(self):
        return self.eta

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        """Table positions of ``keys``; -1 where a key is absent."""
        keys = np.asarray(keys, dtype=np.int64)
        if self.eta == 0:
            return np.full(keys.shape, -1, dtype=np.int64)
        pos = np.searchsorted(self.keys, keys).clip(max=self.eta - 1)
        return np.where(self.keys[pos] == keys, pos, -1)

    def index(self, codes) -> int:
        i = int(self.lookup(aw_keys(np.atleast_2d(codes), self.length))[0])
        if i < 0:
            raise KeyError(f"anonymous walk {tuple(codes)} not in table")
        return i

    def subset(self, positions: np.ndarray) -> "AwTable":
        positions = np.asarray(positions, dtype=np.int64)
        return AwTable(self.length, self.codes[positions], self.keys[positions])


def aw_keys(codes: np.ndarray, l: int) -> np.ndarray:
    """Base-(l+1) integer key per code row; key order equals lexicographic order."""
    codes = np.asarray(codes, dtype=np.int64)
    weights = (l + 1) ** np.arange(l, -1, -1, dtype=np.int64)
    return codes @ weights


def enumerate_aws(l: int) -> AwTable:
    """All anonymous walks of length ``l`` (``Bell(l+1)`` of them) in lexicographic order."""
    if not 1 <= l <= MAX_AW_LENGTH:
        raise ValueError(f"walk length {l} outside supported range [1, {MAX_AW_LENGTH}]")
    codes = np.zeros((1, 1), dtype=np.int8)
    top = np.zeros(1, dtype=np.int8)
    for _ in range(l):
        fan = top.astype(np.int64) + 2
        parent = np.repeat(np.arange(len(codes)), fan)
        offsets = np.arange(len(parent)) - np.repeat(np.cumsum(fan) - fan, fan)
        nxt = offsets.astype(np.int8)
        codes = np.concatenate([codes[parent], nxt[:, None]], axis=1)
        top = np.maximum(top[parent], nxt)
    return AwTable(l, codes, aw_keys(codes, l))


def aw_statistics(walks: np.ndarray, table: AwTable, strict: bool = True) -> np.ndarray:
    """Count how many of ``walks`` map to each anonymous walk in ``table``.

    With ``strict=False`` walks whose anonymous form is absent from the table
    are ignored (the truncated count used for unseen nodes).
    """
    walks = np.atleast_2d(walks)
    if walks.shape[1] != table.length + 1:
        raise ValueError("walk length does not match the table")
    pos = table.lookup(aw_keys(to_anonymous(walks), table.length))
    if strict and (pos < 0).any():
        raise KeyError("anonymous walk missing from table (corrupted table?)")
    return np.bincount(pos[pos >= 0], minlength=table.eta)


def reduce_table(stats, table: AwTable) -> tuple[AwTable, np.ndarray]:
    """Drop anonymous walks never observed in ``stats`` (nodes x table).

    Returns the reduced table and an old->new index map (-1 for dropped).
    """
    if stats.shape[0] == 0:
        raise ValueError("empty statistics")
    if stats.shape[1] != table.eta:
        raise ValueError("statistics width does not match the table")
    colsum = np.asarray(stats.sum(axis=0)).ravel()
    keep = np.flatnonzero(colsum > 0)
    remap = np.full(table.eta, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    return table.subset(keep), remap


def degree_bucket(deg, deg_min: int, deg_max: int, e: int):
    """Bucket index of ``deg`` among ``e`` equal-width bins over ``[deg_min, deg_max]``.

    Out-of-range degrees are clamped into the first/last bucket.
    """
    if deg_max == deg_min:
        return np.zeros_like(deg) if isinstance(deg, np.ndarray) else 0
    j = np.floor_divide((np.asarray(deg) - deg_min) * e, deg_max - deg_min)
    j = np.clip(j, 0, e - 1)
    return j if isinstance(deg, np.ndarray) else int(j)


def degree_features(
    walks: np.ndarray,
    g: Graph,
    l: int,
    e: int,
    deg_min: int,
    deg_max: int,
    known: np.ndarray | None = None,
) -> np.ndarray:
    """Per-position sums of bucketed one-hot degrees along ``walks``.

    ``known`` is a boolean mask over ``g``'s nodes; positions holding
    unknown nodes are skipped.
    """
    walks = np.atleast_2d(walks)
    if walks.shape[1] != l + 1:
        raise ValueError("walks do not have length l")
    buckets = degree_bucket(g.degrees[walks], deg_min, deg_max, e)
    slots = buckets + e * np.arange(l + 1)
    if known is not None:
        slots = slots[known[walks]]
    return np.bincount(slots.ravel(), minlength=(l + 1) * e)


def rw_statistic(walks: np.ndarray, universe: int, to_universe: np.ndarray | None = None) -> np.ndarray:
    """Visit counts of every node over all walk positions.

    ``to_universe`` maps walk node indices into ``[0, universe)`` with -1 for
    nodes outside it (skipped).
    """
    nodes = np.asarray(walks).ravel()
    if to_universe is not None:
        nodes = to_universe[nodes]
        nodes = nodes[nodes >= 0]
    return np.bincount(nodes, minlength=universe)


def projection_matrix(num_rows: int, d: int, seed: int, purpose: str = "theta") -> np.ndarray:
    """Gaussian random projection with entries ~ N(0, 1/d)."""
    rng = child_rng(seed, purpose, num_rows, d)
    return rng.normal(0.0, 1.0 / np.sqrt(d), size=(num_rows, d))


def project_position(r, theta: np.ndarray) -> np.ndarray:
    if r.shape[-1] != theta.shape[0]:
        raise ValueError(f"count vector width {r.shape[-1]} != projection rows {theta.shape[0]}")
    return np.asarray(r @ theta)


@dataclass
class WalkSummary:
    """Raw walk-derived quantities for a block of start nodes.

    ``aw_counts`` is a sparse nodes x table matrix, ``visits`` a sparse
    nodes x universe matrix.
    """

    aw_counts: sp.csr_matrix
    delta: np.ndarray
    visits: sp.csr_matrix
    walks_inf: np.ndarray


def summarize_walks(
    g: Graph,
    nodes,
    *,
    l: int,
    n_s: int,
    n_i: int,
    e: int,
    seed: int,
    deg_min: int,
    deg_max: int,
    table: AwTable,
    strict: bool = True,
    known: np.ndarray | None = None,
    universe: int | None = None,
    to_universe: np.ndarray | None = None,
) -> WalkSummary:
    """Sample walks for each node in ``nodes`` and extract every statistic in one pass.

    Full walk sets are discarded after counting; only the ``n_i`` inference
    walks per node are kept.
    """
    nodes = list(nodes)
    universe = g.num_nodes if universe is None else universe
    aw_rows, aw_cols, aw_vals = [], [], []
    vis_rows, vis_cols, vis_vals = [], [], []
    delta = np.zeros((len(nodes), (l + 1) * e), dtype=np.int64)
    walks_inf = np.zeros((len(nodes), n_i, l + 1), dtype=np.int64)
    for row, v in enumerate(nodes):
        walks, inf_idx = _sample_node(g, v, l, n_s, n_i, seed)
        counts = aw_statistics(walks, table, strict=strict)
        nz = np.flatnonzero(counts)
        aw_rows.append(np.full(len(nz), row))
        aw_cols.append(nz)
        aw_vals.append(counts[nz])
        delta[row] = degree_features(walks, g, l, e, deg_min, deg_max, known)
        r = rw_statistic(walks, universe, to_universe)
        nz = np.flatnonzero(r)
        vis_rows.append(np.full(len(nz), row))
        vis_cols.append(nz)
        vis_vals.append(r[nz])
        walks_inf[row] = walks[inf_idx]

    def _csr(rows, cols, vals, width):
        if not rows:
            return sp.csr_matrix((0, width), dtype=np.int64)
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(nodes), width),
            dtype=np.int64,
        )

    return WalkSummary(
        aw_counts=_csr(aw_rows, aw_cols, aw_vals, table.eta),
        delta=delta,
        visits=_csr(vis_rows, vis_cols, vis_vals, universe),
        walks_inf=walks_inf,
    )


@dataclass
class NodeStatistics:
    """Model inputs for a set of nodes, row-aligned with ``node_ids``.

    ``walks_inf`` holds node indices into this same row order.
    """

    node_ids: list
    s_tilde: np.ndarray
    delta: np.ndarray
    pi_g: np.ndarray
    walks_inf: np.ndarray

    def __len__(self):
        return len(self.node_ids)


@dataclass
class StatisticsHeader:
    l: int
    n_s: int
    n_i: int
    e: int
    seed: int
    deg_min: int
    deg_max: int
    eta_tilde: int


def save_statistics(path: str | Path, stats: NodeStatistics, header: StatisticsHeader, table: AwTable, remap: np.ndarray | None = None):
    meta = {"format": "irwe-stats", "version": STATS_FORMAT_VERSION, **header.__dict__}
    arrays = dict(
        header=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        node_ids=np.array(stats.node_ids, dtype=str),
        s_tilde=stats.s_tilde,
        delta=stats.delta,
        pi_g=stats.pi_g,
        walks_inf=stats.walks_inf,
        table_codes=table.codes,
    )
    if remap is not None:
        arrays["remap"] = remap
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_statistics(path: str | Path) -> tuple[NodeStatistics, StatisticsHeader, AwTable]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["header"]).decode())
        if meta.get("format") != "irwe-stats" or meta.get("version") != STATS_FORMAT_VERSION:
            raise ValueError(f"{path}: not a version-{STATS_FORMAT_VERSION} statistics cache")
        header = StatisticsHeader(**{k: meta[k] for k in StatisticsHeader.__dataclass_fields__})
        stats = NodeStatistics(
            node_ids=[str(x) for x in z["node_ids"]],
            s_tilde=z["s_tilde"],
            delta=z["delta"],
            pi_g=z["pi_g"],
            walks_inf=z["walks_inf"],
        )
        codes = z["table_codes"]
    table = AwTable(header.l, codes, aw_keys(codes, header.l))
    return stats, header, table
