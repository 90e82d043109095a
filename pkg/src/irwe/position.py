"""Position embeddings: identity-reweighted global encodings, a transformer
over walks, attentive readout, and the contrastive reconstruction target."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import torch
from torch import nn

from .graph import Graph
from .nn import MLP, BatchNorm, LayerSpec, Linear, MultiHeadAttention, TransformerEncoder


class PositionModule(nn.Module):
    def __init__(
        self,
        *,
        l: int,
        d: int,
        reweight_mlp: str,
        layers: int,
        heads: int,
        readout_heads: int,
        ff_mult: int = 4,
    ):
        super().__init__()
        self.l, self.d = l, d
        self.bn_psi = BatchNorm(d)
        self.bn_pos = BatchNorm(d)
        self.mlp_psi = MLP(LayerSpec.parse(reweight_mlp, d=d))
        self.mlp_pos = MLP(LayerSpec.parse(reweight_mlp, d=d))
        self.w_t = Linear(d + l + 1, d, bias=False)
        self.transformer = TransformerEncoder(d, layers, heads, ff_mult)
        self.readout = MultiHeadAttention(d, readout_heads)
        self.w_gamma = Linear(d, d)
        self.w_context = Linear(d, d)
        self.register_buffer("local_codes", torch.eye(l + 1), persistent=False)

    def reweight(self, psi, pi_g):
        """Element-wise reweighting of the normalized global encodings by identity."""
        pos = self.bn_pos(pi_g)
        return (self.mlp_psi(self.bn_psi(psi)) + self.mlp_pos(pos)) * pos

    def fuse_tokens(self, walks, pi_bar):
        """Token ``j`` of each walk is ``[pi_bar(w_j) || onehot(j)] W_t``."""
        if walks.shape[-1] != self.l + 1:
            raise ValueError(f"walks must have {self.l + 1} nodes")
        if walks.numel() and int(walks.max()) >= pi_bar.shape[0]:
            raise IndexError("walk visits a node without a reweighted encoding")
        glob = pi_bar[walks]
        local = self.local_codes.to(glob.dtype).expand(*walks.shape, self.l + 1)
        return self.w_t(torch.cat([glob, local], dim=-1))

    def encode_walks(self, walks_inf, pi_bar, starts=None):
        """First-position transformer outputs, shape ``(nodes, n_I, d)``.

        ``starts`` (one node index per row) is checked against each walk's
        first node when given.
        """
        if starts is not None and not bool((walks_inf[..., 0] == starts[:, None]).all()):
            raise ValueError("an inference walk does not start at its node")
        n, n_i, length = walks_inf.shape
        tokens = self.fuse_tokens(walks_inf.reshape(n * n_i, length), pi_bar)
        out = self.transformer(tokens)[:, 0]
        return out.reshape(n, n_i, self.d)

    def attentive_readout(self, t_bar, pi_g, return_weights: bool = False):
        if t_bar.shape[-2] == 0:
            raise ValueError("attentive readout needs at least one walk representation")
        z = self.readout(pi_g.unsqueeze(-2), t_bar, t_bar, return_weights=return_weights)
        if return_weights:
            z, w = z
        z = z.squeeze(-2)
        out = (self.w_gamma(z), self.w_context(z))
        return (*out, w) if return_weights else out

    def forward(self, psi, pi_g, walks_inf, rows=None):
        """Position and context embeddings for ``rows`` (default: all rows of ``walks_inf``).

        ``psi`` and ``pi_g`` cover every node the walks may visit.
        """
        pi_bar = self.reweight(psi, pi_g)
        if rows is None:
            rows = torch.arange(walks_inf.shape[0])
        t_bar = self.encode_walks(walks_inf[rows], pi_bar)
        return self.attentive_readout(t_bar, pi_g[rows])


@dataclass
class ContrastiveStats:
    """Closed-form optimum of the negative-sampling objective, on edges only."""

    C: sp.csr_matrix
    Q: int
    tau: float
    noise: np.ndarray
    p: sp.csr_matrix

    def dense(self) -> np.ndarray:
        return self.C.toarray()


def build_contrastive_stats(g: Graph, Q: int = 5, tau: float = 1.0) -> ContrastiveStats:
    """``C_ij = ln p_ij - ln(Q n_j)`` on edges with ``p_ij = A_ij / deg(i)``
    and ``n_j`` proportional to ``(sum_i p_ij) ** 0.75``."""
    if Q < 1 or tau <= 0:
        raise ValueError("need Q >= 1 and tau > 0")
    deg = g.degrees
    if (deg == 0).any():
        bad = g.node_ids[int(np.flatnonzero(deg == 0)[0])]
        raise ValueError(f"isolated node {bad!r}: transition probability undefined")
    src = np.repeat(np.arange(g.num_nodes), deg)
    p_vals = 1.0 / deg[src]
    p = sp.csr_matrix((p_vals, (src, g.indices)), shape=(g.num_nodes, g.num_nodes))
    noise = np.asarray(p.sum(axis=0)).ravel() ** 0.75
    noise = noise / noise.sum()
    c_vals = np.log(p_vals) - np.log(Q * noise[g.indices])
    C = sp.csr_matrix((c_vals, (src, g.indices)), shape=p.shape)
    return ContrastiveStats(C=C, Q=Q, tau=tau, noise=noise, p=p)


def position_loss(gamma, context, C, tau: float):
    """Squared Frobenius error between ``gamma @ context.T / tau`` and ``C``."""
    return ((gamma @ context.T / tau - C) ** 2).sum()


def position_loss_sampled(gamma, context, edges, edge_targets, tau: float, n_samples: int, generator=None):
    """Unbiased estimate of :func:`position_loss` for large graphs.

    Edge entries are summed exactly; the non-edge part (target 0) is
    estimated from ``n_samples`` uniform node pairs.
    """
    n = gamma.shape[0]
    i, j = edges[:, 0], edges[:, 1]
    edge_part = (((gamma[i] * context[j]).sum(-1) / tau - edge_targets) ** 2).sum()
    a = torch.randint(0, n, (n_samples,), generator=generator)
    b = torch.randint(0, n, (n_samples,), generator=generator)
    edge_key = set((i * n + j).tolist())
    keep = torch.tensor([int(x) not in edge_key for x in (a * n + b).tolist()], dtype=torch.bool)
    pairs = ((gamma[a[keep]] * context[b[keep]]).sum(-1) / tau) ** 2
    # pairs are drawn over all n*n entries; edge draws count as zero
    return edge_part + pairs.sum() * (n * n / n_samples)


def contrastive_objective(z, p, noise_weight):
    """Negative-sampling objective over free logits ``z`` for positive weight
    ``p`` and negative weight ``Q n``; used to check the closed-form optimum."""
    return -(p * torch.nn.functional.logsigmoid(z) + noise_weight * torch.nn.functional.logsigmoid(-z)).sum()
