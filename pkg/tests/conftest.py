import os
from pathlib import Path

import numpy as np
import pytest
import torch

from irwe.graph import Graph
from irwe.trainer import TrainConfig

torch.set_num_threads(1)

DATA_ENV = "IRWE_BRAZIL_DIR"
BRAZIL_EDGES = "brazil-airports.edgelist"
BRAZIL_LABELS = "labels-brazil-airports.txt"


def tiny_config(**overrides) -> TrainConfig:
    base = dict(
        l=4, n_s=40, n_i=4, e=4, d=8, h_psi=2, h_rout=2, l_tran=1, h_tran=2,
        enc_aw="in,8,t,d,t", dec_aw="d,8,t,out,t", reducer="in,16,r,d,r",
        dec_id="d,16,t,out,t", m=2, lr_psi=5e-3, lr_gamma=5e-3, tau=5.0, seed=3,
    )
    base.update(overrides)
    return TrainConfig(**base)


def toy_graph(seed: int = 0, n: int = 10, p: float = 0.35) -> Graph:
    """Connected random graph: a ring plus random chords."""
    rng = np.random.default_rng(seed)
    edges = [(i, (i + 1) % n) for i in range(n)]
    for i in range(n):
        for j in range(i + 2, n):
            if rng.random() < p:
                edges.append((i, j))
    return Graph.from_edges(edges, n, [f"n{i}" for i in range(n)])


def planted_graph(seed: int = 0, communities: int = 4, size: int = 30):
    """Communities of hub-and-spoke stars joined by sparse random links.

    Returns the graph, role labels (hub / bridge / leaf / mid by degree
    quartile) and community labels.
    """
    rng = np.random.default_rng(seed)
    edges = []
    n = communities * size
    for c in range(communities):
        base = c * size
        hubs = [base, base + 1, base + 2]
        for v in range(base + 3, base + size):
            for h in rng.choice(hubs, size=rng.integers(1, 3), replace=False):
                edges.append((v, int(h)))
            if rng.random() < 0.5:
                edges.append((v, base + 3 + int(rng.integers(size - 3))))
        edges += [(hubs[0], hubs[1]), (hubs[1], hubs[2]), (hubs[0], hubs[2])]
    for _ in range(communities * 3):
        a, b = rng.choice(communities, size=2, replace=False)
        edges.append((int(a * size + rng.integers(size)), int(b * size + rng.integers(size))))
    g = Graph.from_edges(edges, n)
    deg = g.degrees
    quart = np.searchsorted(np.quantile(deg, [0.25, 0.5, 0.75]), deg, side="right")
    roles = [[f"r{q}"] for q in quart]
    comms = [[f"c{v // size}"] for v in range(n)]
    return g, roles, comms


@pytest.fixture
def toy():
    return toy_graph()


def brazil_dir() -> Path | None:
    candidates = [os.environ.get(DATA_ENV), Path(__file__).resolve().parents[1] / "data" / "brazil"]
    for c in candidates:
        if c and (Path(c) / BRAZIL_EDGES).is_file() and (Path(c) / BRAZIL_LABELS).is_file():
            return Path(c)
    return None
