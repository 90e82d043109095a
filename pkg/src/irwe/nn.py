"""Differentiable building blocks shared by the identity and position modules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import torch
from torch import nn

ACTIVATIONS = {"t": torch.tanh, "s": torch.sigmoid, "r": torch.relu, None: None}
BN_EPS = 1e-5
LN_EPS = 1e-5


@dataclass(frozen=True)
class LayerSpec:
    """Widths ``sizes[0] -> sizes[1] -> ...`` with one activation code per affine layer."""

    sizes: tuple[int, ...]
    activations: tuple[str | None, ...]

    def __post_init__(self):
        if len(self.sizes) < 2 or len(self.activations) != len(self.sizes) - 1:
            raise ValueError("LayerSpec needs >= 2 sizes and one activation per layer")
        bad = [a for a in self.activations if a not in ACTIVATIONS]
        if bad:
            raise ValueError(f"unknown activation codes {bad}; use t, s, r or none")
        if any(s < 1 for s in self.sizes):
            raise ValueError("layer sizes must be positive")

    @classmethod
    def parse(cls, text: str, **symbols: int) -> "LayerSpec":
        """Parse ``"in,64,t,d,t"``-style specs; names are looked up in ``symbols``.

        A width with no following code has no activation.
        """
        tokens = [t.strip() for t in text.split(",") if t.strip()]
        sizes: list[int] = []
        acts: list[str | None] = []
        for tok in tokens:
            if tok in ("t", "s", "r", "none"):
                if len(sizes) < 2 or len(acts) != len(sizes) - 1 or acts[-1] is not None:
                    raise ValueError(f"misplaced activation {tok!r} in {text!r}")
                acts[-1] = None if tok == "none" else tok
                continue
            if tok.isdigit():
                width = int(tok)
            elif tok in symbols:
                width = int(symbols[tok])
            else:
                raise ValueError(f"unknown size symbol {tok!r} in {text!r}")
            if sizes:
                acts.append(None)
            sizes.append(width)
        return cls(tuple(sizes), tuple(acts))


def glorot_(weight: torch.Tensor) -> torch.Tensor:
    fan_out, fan_in = weight.shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        return weight.uniform_(-bound, bound)


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(glorot_(torch.empty(d_out, d_in)))
        self.bias = nn.Parameter(torch.zeros(d_out)) if bias else None

    def forward(self, x):
        y = x @ self.weight.T
        return y if self.bias is None else y + self.bias


class MLP(nn.Module):
    def __init__(self, spec: LayerSpec):
        super().__init__()
        self.spec = spec
        self.layers = nn.ModuleList(Linear(a, b) for a, b in zip(spec.sizes[:-1], spec.sizes[1:]))

    def forward(self, x):
        if x.shape[-1] != self.spec.sizes[0]:
            raise ValueError(f"MLP expects width {self.spec.sizes[0]}, got {x.shape[-1]}")
        for layer, act in zip(self.layers, self.spec.activations):
            x = layer(x)
            if act is not None:
                x = ACTIVATIONS[act](x)
        return x


def mlp_forward(mlp: MLP, x):
    return mlp(x)


class BatchNorm(nn.Module):
    """Column-wise batch normalization.

    Training normalizes with the current batch moments and folds them into
    running moments (momentum 0.1); eval mode uses the running moments.
    """

    def __init__(self, d: int, momentum: float = 0.1, eps: float = BN_EPS):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))
        self.register_buffer("running_mean", torch.zeros(d))
        self.register_buffer("running_var", torch.ones(d))

    def forward(self, x):
        if self.training:
            if x.shape[0] < 2:
                raise ValueError("batch normalization in training mode needs at least 2 rows")
            mean = x.mean(dim=0)
            var = x.var(dim=0, unbiased=False)
            with torch.no_grad():
                self.running_mean.lerp_(mean.detach(), self.momentum)
                self.running_var.lerp_(var.detach(), self.momentum)
        else:
            mean, var = self.running_mean, self.running_var
        return (x - mean) / torch.sqrt(var + self.eps) * self.weight + self.bias

    @torch.no_grad()
    def recalibrate(self, x):
        """Set the running moments to the exact moments of ``x``."""
        self.running_mean.copy_(x.mean(dim=0))
        self.running_var.copy_(x.var(dim=0, unbiased=False))


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with ``heads`` learned projections.

    Head outputs are concatenated; ``out_proj`` adds the usual output mapping.
    """

    def __init__(self, d: int, heads: int, out_proj: bool = False):
        super().__init__()
        if d % heads:
            raise ValueError(f"model width {d} is not divisible by {heads} heads")
        self.d, self.heads, self.d_head = d, heads, d // heads
        self.w_q = Linear(d, d, bias=False)
        self.w_k = Linear(d, d, bias=False)
        self.w_v = Linear(d, d, bias=False)
        self.w_o = Linear(d, d) if out_proj else None

    def _split(self, x):
        return x.reshape(*x.shape[:-1], self.heads, self.d_head).transpose(-2, -3)

    def forward(self, q, k, v, return_weights: bool = False):
        qh, kh, vh = self._split(self.w_q(q)), self._split(self.w_k(k)), self._split(self.w_v(v))
        scores = qh @ kh.transpose(-1, -2) / math.sqrt(self.d_head)
        weights = torch.softmax(scores, dim=-1)
        z = (weights @ vh).transpose(-2, -3)
        z = z.reshape(*z.shape[:-2], self.d)
        if self.w_o is not None:
            z = self.w_o(z)
        return (z, weights) if return_weights else z


def multi_head_attention(att: MultiHeadAttention, q, k, v):
    return att(q, k, v)


class TransformerEncoderLayer(nn.Module):
    """Post-norm encoder layer: self-attention and feedforward, each with skip + LayerNorm."""

    def __init__(self, d: int, heads: int, ff_mult: int = 4):
        super().__init__()
        self.attn = MultiHeadAttention(d, heads, out_proj=True)
        self.norm1 = nn.LayerNorm(d, eps=LN_EPS)
        self.ff1 = Linear(d, ff_mult * d)
        self.ff2 = Linear(ff_mult * d, d)
        self.norm2 = nn.LayerNorm(d, eps=LN_EPS)

    def forward(self, x):
        x = self.norm1(x + self.attn(x, x, x))
        return self.norm2(x + self.ff2(torch.relu(self.ff1(x))))


class TransformerEncoder(nn.Module):
    def __init__(self, d: int, layers: int, heads: int, ff_mult: int = 4):
        super().__init__()
        self.layers = nn.ModuleList(TransformerEncoderLayer(d, heads, ff_mult) for _ in range(layers))

    def forward(self, tokens):
        for layer in self.layers:
            tokens = layer(tokens)
        return tokens


PARTITIONS = ("theta_psi", "theta_gamma", "frozen")


@dataclass
class ParamStore:
    """Named tensors tagged with the partition that owns their updates."""

    tensors: dict[str, torch.Tensor] = field(default_factory=dict)
    tags: dict[str, str] = field(default_factory=dict)

    def add(self, name: str, tensor: torch.Tensor, tag: str):
        if name in self.tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        if tag not in PARTITIONS:
            raise ValueError(f"unknown partition {tag!r}")
        self.tensors[name] = tensor
        self.tags[name] = tag

    def partition(self, *tags: str) -> dict[str, torch.Tensor]:
        return {n: t for n, t in self.tensors.items() if self.tags[n] in tags}

    @classmethod
    def from_module(cls, module: nn.Module, tag_of: Callable[[str], str], frozen: Iterable[str] = ()):
        store = cls()
        for name, p in module.named_parameters():
            store.add(name, p, tag_of(name))
        for name in frozen:
            store.add(name, module.get_buffer(name), "frozen")
        return store


class NonFiniteGradient(FloatingPointError):
    pass


class Adam:
    """Adam with bias correction over a fixed set of named tensors."""

    def __init__(self, params: Mapping[str, torch.Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0
        self.m = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.v = {n: torch.zeros_like(p) for n, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    @torch.no_grad()
    def step(self):
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            if not torch.isfinite(g).all():
                raise NonFiniteGradient(f"non-finite gradient in tensor {name!r}")
            grads[name] = g
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name].mul_(b1).add_(g, alpha=1 - b1)
            self.v[name].mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(self.lr * (self.m[name] / c1) / (torch.sqrt(self.v[name] / c2) + self.eps))

    def state_arrays(self, prefix: str) -> dict:
        out = {f"{prefix}/t": torch.tensor(self.t)}
        for n in self.params:
            out[f"{prefix}/m/{n}"] = self.m[n]
            out[f"{prefix}/v/{n}"] = self.v[n]
        return out

    def load_state_arrays(self, prefix: str, arrays: Mapping[str, torch.Tensor]):
        self.t = int(arrays[f"{prefix}/t"])
        for n in self.params:
            self.m[n].copy_(arrays[f"{prefix}/m/{n}"])
            self.v[n].copy_(arrays[f"{prefix}/v/{n}"])


def adam_step(opt: Adam):
    opt.step()


def clip_grad_norm(params: Iterable[torch.Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    total = torch.sqrt(sum((g.detach() ** 2).sum() for g in grads))
    if total > max_norm:
        for g in grads:
            g.mul_(max_norm / (total + 1e-12))
    return float(total)


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    tol: float = 1e-4,
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare autograd gradients with central finite differences, tensor by tensor.

    The error per tensor is ``|a - n| / max(|a| + |n|, floor)`` in the 2-norm;
    the floor keeps finite-difference round-off on (near) zero gradients from
    reading as a relative error. ``max_entries`` probes a random subset of
    large tensors.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    trainable = [p for p in params.values() if p.requires_grad]
    grads = torch.autograd.grad(loss, trainable, allow_unused=True) if trainable else []
    analytic = {}
    it = iter(grads)
    for name, p in params.items():
        g = next(it) if p.requires_grad else None
        analytic[name] = torch.zeros_like(p) if g is None else g.detach()

    gen = torch.Generator().manual_seed(seed)
    errors = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            idx = torch.arange(flat.numel())
            if max_entries is not None and flat.numel() > max_entries:
                idx = torch.randperm(flat.numel(), generator=gen)[:max_entries]
            a = analytic[name].view(-1)[idx]
            num = torch.empty_like(a)
            for k, i in enumerate(idx.tolist()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                num[k] = (up - down) / (2 * h)
            denom = max(float(a.norm() + num.norm()), floor)
            errors[name] = float((a - num).norm()) / denom
    return GradCheckReport(errors, tol)
