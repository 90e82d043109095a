"""Identity embeddings: anonymous-walk auto-encoder, statistic reducer,
attention combiner and statistic-reconstruction decoder."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .nn import MLP, LayerSpec, MultiHeadAttention
from .walks import AwTable


def aw_one_hot(codes, l: int) -> np.ndarray:
    """Position-wise one-hot of an anonymous walk (or a batch), width ``(l+1)**2``."""
    codes = np.asarray(codes, dtype=np.int64)
    single = codes.ndim == 1
    codes = np.atleast_2d(codes)
    if codes.shape[1] != l + 1:
        raise ValueError(f"anonymous walk must have {l + 1} entries")
    if codes.max(initial=0) > l or codes.min(initial=0) < 0:
        raise ValueError(f"anonymous walk codes must lie in [0, {l}]")
    out = np.zeros((len(codes), l + 1, l + 1))
    rows = np.arange(len(codes))[:, None]
    out[rows, np.arange(l + 1), codes] = 1.0
    out = out.reshape(len(codes), -1)
    return out[0] if single else out


def table_one_hot(table: AwTable) -> np.ndarray:
    return aw_one_hot(table.codes, table.length)


def normalized_features(s_tilde, delta, n_s: int) -> np.ndarray:
    """``[s~ || delta] / n_S``; the reducer input and the decoder target."""
    return np.concatenate([np.asarray(s_tilde), np.asarray(delta)], axis=1) / float(n_s)


class IdentityModule(nn.Module):
    def __init__(
        self,
        *,
        l: int,
        d: int,
        eta: int,
        stat_width: int,
        heads: int,
        enc_aw: str,
        dec_aw: str,
        reducer: str,
        dec_id: str,
    ):
        super().__init__()
        onehot = (l + 1) ** 2
        self.enc_aw = MLP(LayerSpec.parse(enc_aw, **{"in": onehot, "d": d}))
        self.dec_aw = MLP(LayerSpec.parse(dec_aw, **{"d": d, "out": onehot}))
        self.reducer = MLP(LayerSpec.parse(reducer, **{"in": eta + stat_width, "d": d}))
        self.attention = MultiHeadAttention(d, heads)
        self.decoder = MLP(LayerSpec.parse(dec_id, **{"d": d, "out": eta + stat_width}))
        for name, mlp in [("enc_aw", self.enc_aw), ("reducer", self.reducer)]:
            if mlp.spec.sizes[-1] != d:
                raise ValueError(f"{name} must end at width d={d}")

    def aw_autoencode(self, rho):
        phi = self.enc_aw(rho)
        return phi, self.dec_aw(phi)

    def reduce_features(self, feats):
        return self.reducer(feats)

    def encode(self, g_bar, phi, return_weights: bool = False):
        return self.attention(g_bar, phi, phi, return_weights=return_weights)

    def decode(self, psi):
        return self.decoder(psi)

    def forward(self, rho, feats):
        """Identity embeddings for every row of ``feats`` (no decoder)."""
        phi, _ = self.aw_autoencode(rho)
        return self.encode(self.reduce_features(feats), phi)


def identity_loss(rho, rho_hat, target, g_hat, alpha: float):
    """Sum of squared AW reconstruction errors plus ``alpha`` times the statistic reconstruction error."""
    loss = ((rho - rho_hat) ** 2).sum()
    if alpha:
        loss = loss + alpha * ((target - g_hat) ** 2).sum()
    return loss


def identity_objective(module: IdentityModule, rho, feats, alpha: float):
    phi, rho_hat = module.aw_autoencode(rho)
    psi = module.encode(module.reduce_features(feats), phi)
    return identity_loss(rho, rho_hat, feats, module.decode(psi), alpha), psi


def to_tensor(x, dtype=torch.float64):
    return torch.as_tensor(np.asarray(x), dtype=dtype)
