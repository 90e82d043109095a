"""Inductive node embeddings of structural identity and community position from random walks."""

__version__ = "0.1.0"

from .graph import Graph, load_edge_list, load_labels
from .trainer import (
    EmbeddingSet,
    TrainConfig,
    TrainedModel,
    infer_inductive_graph,
    infer_inductive_nodes,
    infer_transductive,
    train,
)

__all__ = [
    "EmbeddingSet",
    "Graph",
    "TrainConfig",
    "TrainedModel",
    "infer_inductive_graph",
    "infer_inductive_nodes",
    "infer_transductive",
    "load_edge_list",
    "load_labels",
    "train",
]
