"""Joint alternating optimization and the three inference drivers."""

from __future__ import annotations

import configparser
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .graph import Graph, induced_subgraph, subgraph_in_order
from .identity import IdentityModule, identity_objective, normalized_features, table_one_hot
from .nn import Adam, NonFiniteGradient, ParamStore, clip_grad_norm
from .position import PositionModule, build_contrastive_stats, position_loss, position_loss_sampled
from .walks import (
    AwTable,
    NodeStatistics,
    StatisticsHeader,
    aw_keys,
    enumerate_aws,
    load_statistics,
    projection_matrix,
    reduce_table,
    save_statistics,
    summarize_walks,
)

log = logging.getLogger(__name__)

DTYPE = torch.float64
MODEL_FORMAT_VERSION = 1
SAMPLED_LOSS_MIN_NODES = 5000


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None):
        super().__init__(message)
        self.checkpoint = checkpoint


CONFIG_SECTIONS = {
    "walks": ("l", "n_s", "n_i", "e"),
    "model": ("d", "h_psi", "h_rout", "l_tran", "h_tran", "enc_aw", "dec_aw", "reducer", "dec_id", "reweight_mlp"),
    "loss": ("alpha", "tau", "q", "loss_samples"),
    "optim": ("m", "m_psi", "m_gamma", "lr_psi", "lr_gamma", "clip_norm"),
    "run": ("seed", "keep_checkpoints"),
}


@dataclass
class TrainConfig:
    """Hyperparameters; defaults are the transductive Brazil settings.

    Layer specs use ``in``/``out``/``d`` for widths fixed by the data.
    """

    l: int = 9
    n_s: int = 1000
    n_i: int = 20
    e: int = 32
    d: int = 64
    h_psi: int = 16
    h_rout: int = 16
    l_tran: int = 4
    h_tran: int = 16
    enc_aw: str = "in,64,t,d,t"
    dec_aw: str = "d,64,t,out,t"
    reducer: str = "in,1024,r,512,r,128,r,d,r"
    dec_id: str = "d,128,t,out,t"
    reweight_mlp: str = "d,d,s,d,s"
    alpha: float = 0.1
    tau: float = 100.0
    q: int = 5
    loss_samples: int = 0
    m: int = 200
    m_psi: int = 1
    m_gamma: int = 1
    lr_psi: float = 5e-4
    lr_gamma: float = 5e-4
    clip_norm: float = 5.0
    seed: int = 0
    keep_checkpoints: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = ["l", "n_s", "n_i", "e", "d", "h_psi", "h_rout", "h_tran", "q", "m_psi", "m_gamma", "keep_checkpoints"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("tau", "lr_psi", "lr_gamma", "clip_norm"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("m", "l_tran", "loss_samples", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.l > 12:
            raise ConfigError("l must be <= 12")
        if self.n_i > self.n_s:
            raise ConfigError("n_i cannot exceed n_s")
        for name in ("h_psi", "h_rout", "h_tran"):
            if self.d % getattr(self, name):
                raise ConfigError(f"d={self.d} is not divisible by {name}={getattr(self, name)}")

    @classmethod
    def brazil_inductive(cls, **overrides) -> "TrainConfig":
        base = dict(n_i=10, reducer="in,512,r,128,r,d", dec_id="d,256,t,out,t")
        return cls(**{**base, **overrides})

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        unknown = set(values) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def from_ini(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        kinds = {f.name: type(f.default) for f in dataclasses.fields(cls)}
        values = {}
        for section in parser.sections():
            if section not in CONFIG_SECTIONS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in CONFIG_SECTIONS[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                try:
                    values[key] = kinds[key](raw)
                except ValueError as exc:
                    raise ConfigError(f"{path}: bad value for {key}: {raw!r}") from exc
        return cls(**values)

    def to_ini(self, path: str | Path):
        parser = configparser.ConfigParser(interpolation=None)
        for section, keys in CONFIG_SECTIONS.items():
            parser[section] = {k: repr(getattr(self, k)) if isinstance(getattr(self, k), float) else str(getattr(self, k)) for k in keys}
        with open(path, "w", encoding="utf-8") as fh:
            parser.write(fh)


def _partition(name: str) -> str:
    return "theta_psi" if name.startswith("identity.") else "theta_gamma"


class IRWEModel(nn.Module):
    """Identity and position modules plus the frozen projection ``theta``."""

    def __init__(self, cfg: TrainConfig, table: AwTable, num_nodes: int, theta: np.ndarray | None = None):
        super().__init__()
        self.cfg = cfg
        stat_width = (cfg.l + 1) * cfg.e
        self.identity = IdentityModule(
            l=cfg.l,
            d=cfg.d,
            eta=table.eta,
            stat_width=stat_width,
            heads=cfg.h_psi,
            enc_aw=cfg.enc_aw,
            dec_aw=cfg.dec_aw,
            reducer=cfg.reducer,
            dec_id=cfg.dec_id,
        )
        self.position = PositionModule(
            l=cfg.l,
            d=cfg.d,
            reweight_mlp=cfg.reweight_mlp,
            layers=cfg.l_tran,
            heads=cfg.h_tran,
            readout_heads=cfg.h_rout,
        )
        if theta is None:
            theta = projection_matrix(num_nodes, cfg.d, cfg.seed)
        self.register_buffer("theta", torch.as_tensor(theta, dtype=DTYPE))
        self.register_buffer("rho", torch.as_tensor(table_one_hot(table), dtype=DTYPE), persistent=False)
        self.to(DTYPE)

    def param_store(self) -> ParamStore:
        return ParamStore.from_module(self, _partition, frozen=("theta",))

    def embed(self, inputs: "ModelInputs"):
        psi = self.identity(self.rho, inputs.feats)
        gamma, context = self.position(psi, inputs.pi, inputs.walks_inf)
        return psi, gamma, context

    @torch.no_grad()
    def recalibrate(self, inputs: "ModelInputs"):
        """Set batch-norm running moments to the full-batch moments at the current parameters."""
        psi = self.identity(self.rho, inputs.feats)
        self.position.bn_psi.recalibrate(psi)
        self.position.bn_pos.recalibrate(inputs.pi)


@dataclass
class ModelInputs:
    feats: torch.Tensor
    pi: torch.Tensor
    walks_inf: torch.Tensor

    @classmethod
    def from_statistics(cls, stats: NodeStatistics, n_s: int) -> "ModelInputs":
        # global encodings are fed per sampled walk so their scale does not grow with n_S
        return cls(
            feats=torch.as_tensor(normalized_features(stats.s_tilde, stats.delta, n_s), dtype=DTYPE),
            pi=torch.as_tensor(stats.pi_g / n_s, dtype=DTYPE),
            walks_inf=torch.as_tensor(stats.walks_inf, dtype=torch.long),
        )


@dataclass
class EmbeddingSet:
    node_ids: list
    psi: np.ndarray
    gamma: np.ndarray
    gamma_bar: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.node_ids)

    def get(self, kind: str) -> np.ndarray:
        if kind not in ("psi", "gamma", "gamma_bar"):
            raise KeyError(f"unknown embedding kind {kind!r}")
        return getattr(self, kind)

    def write(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for kind in ("psi", "gamma", "gamma_bar"):
            path = out_dir / f"{kind}.txt"
            write_embedding_text(path, self.node_ids, self.get(kind))
            paths.append(path)
        path = out_dir / "embeddings.npz"
        self.save_npz(path)
        paths.append(path)
        return paths

    def save_npz(self, path: str | Path):
        header = {"format": "irwe-embeddings", "version": MODEL_FORMAT_VERSION, **self.meta}
        with open(path, "wb") as fh:
            np.savez(
                fh,
                header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
                node_ids=np.array(self.node_ids, dtype=str),
                psi=self.psi,
                gamma=self.gamma,
                gamma_bar=self.gamma_bar,
            )

    @classmethod
    def load_npz(cls, path: str | Path) -> "EmbeddingSet":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["header"]).decode())
            if meta.pop("format", None) != "irwe-embeddings":
                raise ValueError(f"{path}: not an embedding file")
            meta.pop("version", None)
            return cls([str(x) for x in z["node_ids"]], z["psi"], z["gamma"], z["gamma_bar"], meta)


def write_embedding_text(path: str | Path, node_ids, matrix: np.ndarray):
    with open(path, "w", encoding="utf-8") as fh:
        for nid, row in zip(node_ids, matrix):
            fh.write(nid + " " + " ".join(repr(float(x)) for x in row) + "\n")


def read_embedding_text(path: str | Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    ids, rows = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric embedding entry") from exc
            ids.append(parts[0])
    if len({len(r) for r in rows}) > 1:
        raise ValueError(f"{path}: rows have different widths")
    return ids, np.asarray(rows)


@dataclass
class TrainedModel:
    config: TrainConfig
    model: IRWEModel
    table: AwTable
    stats: NodeStatistics
    deg_min: int
    deg_max: int
    loss_history: list = field(default_factory=list)
    callback_history: list = field(default_factory=list)

    @property
    def node_ids(self) -> list:
        return list(self.stats.node_ids)

    def stats_header(self) -> StatisticsHeader:
        c = self.config
        return StatisticsHeader(c.l, c.n_s, c.n_i, c.e, c.seed, self.deg_min, self.deg_max, self.table.eta)

    def save(self, run_dir: str | Path):
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        save_statistics(run_dir / "stats.npz", self.stats, self.stats_header(), self.table)
        header = {
            "format": "irwe-model",
            "version": MODEL_FORMAT_VERSION,
            "config": self.config.to_dict(),
            "deg_min": self.deg_min,
            "deg_max": self.deg_max,
            "num_nodes": len(self.stats),
            "loss_history": self.loss_history,
        }
        _save_arrays(run_dir / "model.npz", header, _state_arrays(self.model), self.table.codes)

    @classmethod
    def load(cls, run_dir: str | Path) -> "TrainedModel":
        run_dir = Path(run_dir)
        for name in ("model.npz", "stats.npz"):
            if not (run_dir / name).is_file():
                raise FileNotFoundError(f"file not found: {run_dir / name}")
        header, arrays, codes = _load_arrays(run_dir / "model.npz", "irwe-model")
        cfg = TrainConfig.from_dict(header["config"])
        table = AwTable(cfg.l, codes, aw_keys(codes, cfg.l))
        stats, sheader, stable = load_statistics(run_dir / "stats.npz")
        if stable.eta != table.eta or not np.array_equal(stable.codes, table.codes):
            raise ValueError(f"{run_dir}: statistics cache does not match the model's table")
        if (sheader.deg_min, sheader.deg_max) != (header["deg_min"], header["deg_max"]):
            raise ValueError(f"{run_dir}: statistics cache does not match the model's degree range")
        model = IRWEModel(cfg, table, header["num_nodes"], theta=arrays["theta"].numpy())
        model.load_state_dict(arrays)
        return cls(cfg, model, table, stats, header["deg_min"], header["deg_max"], header["loss_history"])


def _state_arrays(model: nn.Module) -> dict:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def _save_arrays(path: Path, header: dict, tensors: dict, codes: np.ndarray):
    arrays = {f"t/{k}": v.numpy() for k, v in tensors.items()}
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    arrays["table_codes"] = codes
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)


def _load_arrays(path: Path, fmt: str):
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format") != fmt or header.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"{path}: not a version-{MODEL_FORMAT_VERSION} {fmt} file")
        tensors = {k[2:]: torch.from_numpy(z[k].copy()) for k in z.files if k.startswith("t/")}
        codes = z["table_codes"]
    return header, tensors, codes


def load_checkpoint(path: str | Path, trained: TrainedModel) -> dict:
    """Load checkpointed parameters into ``trained.model``; returns the header."""
    header, tensors, _ = _load_arrays(Path(path), "irwe-checkpoint")
    trained.model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model/")})
    return header


def _drop_isolated(g: Graph) -> Graph:
    isolated = np.flatnonzero(g.degrees == 0)
    if len(isolated) == 0:
        return g
    log.warning("excluding %d isolated nodes (first: %r)", len(isolated), g.node_ids[isolated[0]])
    return induced_subgraph(g, np.flatnonzero(g.degrees > 0))


def compute_training_statistics(g: Graph, cfg: TrainConfig):
    """One-time sampling pass over the training graph.

    Returns the statistics, the reduced table, degree range and ``theta``.
    """
    deg_min, deg_max = int(g.degrees.min()), int(g.degrees.max())
    summary = summarize_walks(
        g, range(g.num_nodes), l=cfg.l, n_s=cfg.n_s, n_i=cfg.n_i, e=cfg.e, seed=cfg.seed,
        deg_min=deg_min, deg_max=deg_max, table=enumerate_aws(cfg.l),
    )
    table, remap = reduce_table(summary.aw_counts, enumerate_aws(cfg.l))
    s_tilde = summary.aw_counts.toarray()[:, remap >= 0]
    theta = projection_matrix(g.num_nodes, cfg.d, cfg.seed)
    pi_g = np.asarray(summary.visits @ theta)
    stats = NodeStatistics(list(g.node_ids), s_tilde, summary.delta, pi_g, summary.walks_inf)
    return stats, table, deg_min, deg_max, theta


def _torch_seed(seed: int) -> int:
    return int(np.random.SeedSequence([seed, 0x1E17]).generate_state(1)[0])


class _LossCsv:
    def __init__(self, path: Path | None):
        self.path = path
        if path is not None:
            path.write_text("iteration,loss_psi,loss_gamma\n", encoding="utf-8")

    def append(self, it: int, lpsi: float, lgamma: float):
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(f"{it},{lpsi!r},{lgamma!r}\n")


def train(
    g: Graph,
    cfg: TrainConfig,
    run_dir: str | Path | None = None,
    callback: Callable[[int, "TrainedModel"], object] | None = None,
    eval_every: int = 0,
) -> TrainedModel:
    """Sample once, then alternate ``m_psi`` identity steps and ``m_gamma``
    position steps for ``m`` iterations.

    With ``run_dir`` the loss CSV, per-iteration checkpoints (last
    ``keep_checkpoints`` kept), statistics cache and final model are written
    there. ``callback(iteration, trained)`` runs every ``eval_every`` iterations.
    """
    g = _drop_isolated(g)
    if g.num_nodes < 2:
        raise ValueError("training needs at least two connected nodes")
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    stats, table, deg_min, deg_max, theta = compute_training_statistics(g, cfg)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(_torch_seed(cfg.seed))
        model = IRWEModel(cfg, table, g.num_nodes, theta)
    trained = TrainedModel(cfg, model, table, stats, deg_min, deg_max)
    if run_dir is not None:
        save_statistics(run_dir / "stats.npz", stats, trained.stats_header(), table)

    inputs = ModelInputs.from_statistics(stats, cfg.n_s)
    contrast = build_contrastive_stats(g, cfg.q, cfg.tau)
    sampled = cfg.loss_samples > 0 and g.num_nodes > SAMPLED_LOSS_MIN_NODES
    if sampled:
        coo = contrast.C.tocoo()
        edges = torch.as_tensor(np.stack([coo.row, coo.col], axis=1), dtype=torch.long)
        targets = torch.as_tensor(coo.data, dtype=DTYPE)
        loss_gen = torch.Generator().manual_seed(_torch_seed(cfg.seed + 1))
    else:
        C = torch.as_tensor(contrast.dense(), dtype=DTYPE)

    store = model.param_store()
    psi_params = store.partition("theta_psi")
    all_params = store.partition("theta_psi", "theta_gamma")
    opt_psi = Adam(psi_params, cfg.lr_psi)
    opt_gamma = Adam(all_params, cfg.lr_gamma)
    theta0 = model.theta.clone()

    def identity_loss_value():
        loss, _ = identity_objective(model.identity, model.rho, inputs.feats, cfg.alpha)
        return loss

    def position_loss_value():
        _, gamma, context = model.embed(inputs)
        if sampled:
            return position_loss_sampled(gamma, context, edges, targets, cfg.tau, cfg.loss_samples, loss_gen)
        return position_loss(gamma, context, C, cfg.tau)

    def step(opt, params, loss_fn, it, what):
        opt.zero_grad()
        loss = loss_fn()
        if not torch.isfinite(loss):
            raise NonFiniteGradient(f"non-finite {what} loss")
        loss.backward()
        clip_grad_norm(params.values(), cfg.clip_norm)
        opt.step()
        return loss.item()

    csv = _LossCsv(run_dir / "loss.csv" if run_dir is not None else None)
    good_state = _state_arrays(model)
    last_ckpt: Path | None = None
    ckpts: list[Path] = []
    model.train()
    for it in range(1, cfg.m + 1):
        try:
            for _ in range(cfg.m_psi):
                lpsi = step(opt_psi, psi_params, identity_loss_value, it, "identity")
            for _ in range(cfg.m_gamma):
                lgamma = step(opt_gamma, all_params, position_loss_value, it, "position")
        except NonFiniteGradient as exc:
            model.load_state_dict(good_state)
            raise TrainingDiverged(f"iteration {it}: {exc}; parameters restored to the last good checkpoint", last_ckpt) from exc
        if not torch.equal(model.theta, theta0):
            raise AssertionError("projection matrix changed during training")
        trained.loss_history.append([it, lpsi, lgamma])
        csv.append(it, lpsi, lgamma)
        good_state = _state_arrays(model)
        if run_dir is not None:
            last_ckpt = _save_checkpoint(run_dir, it, good_state, (opt_psi, opt_gamma), table)
            ckpts.append(last_ckpt)
            while len(ckpts) > cfg.keep_checkpoints:
                ckpts.pop(0).unlink(missing_ok=True)
        if callback is not None and eval_every and it % eval_every == 0:
            model.recalibrate(inputs)
            model.eval()
            trained.callback_history.append([it, callback(it, trained)])
            model.train()

    model.recalibrate(inputs)
    model.eval()
    if run_dir is not None:
        trained.save(run_dir)
    return trained


def _save_checkpoint(run_dir: Path, it: int, state: dict, opts, table: AwTable) -> Path:
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    tensors = {f"model/{k}": v for k, v in state.items()}
    for name, opt in zip(("opt_psi", "opt_gamma"), opts):
        tensors.update(opt.state_arrays(name))
    path = ckpt_dir / f"iter_{it:06d}.npz"
    header = {"format": "irwe-checkpoint", "version": MODEL_FORMAT_VERSION, "iteration": it}
    _save_arrays(path, header, tensors, table.codes)
    return path


@torch.no_grad()
def _forward(trained: TrainedModel, stats: NodeStatistics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    model = trained.model
    model.eval()
    psi, gamma, context = model.embed(ModelInputs.from_statistics(stats, trained.config.n_s))
    return psi.numpy(), gamma.numpy(), context.numpy()


def infer_transductive(trained: TrainedModel) -> EmbeddingSet:
    """One feedforward pass over the cached training statistics."""
    if trained.stats is None:
        raise ValueError("statistics cache missing")
    psi, gamma, context = _forward(trained, trained.stats)
    return EmbeddingSet(trained.node_ids, psi, gamma, context, {"mode": "transductive", "seed": trained.config.seed})


def infer_inductive_nodes(trained: TrainedModel, g_new: Graph, new_nodes) -> EmbeddingSet:
    """Embed ``new_nodes`` (ids in ``g_new``) alongside the training nodes.

    Training-node statistics are reused as cached. New nodes are sampled on
    the subgraph of ``g_new`` induced by old and new nodes, with anonymous
    walks restricted to the reduced table, degree buckets from the training
    range and visit counts over training nodes only. Rows are ordered
    training nodes first, then ``new_nodes``.
    """
    cfg = trained.config
    old_ids = trained.node_ids
    new_ids = [str(x) for x in new_nodes]
    if len(set(new_ids)) != len(new_ids):
        raise ValueError("new node list has duplicates")
    clash = set(new_ids) & set(old_ids)
    if clash:
        raise ValueError(f"new nodes already seen in training: {sorted(clash)[:5]}")
    missing = [x for x in old_ids + new_ids if not g_new.has_node(x)]
    if missing:
        raise ValueError(f"node {missing[0]!r} not in the new graph")
    merged = subgraph_in_order(g_new, [g_new.index_of(x) for x in old_ids + new_ids])
    n_old = len(old_ids)
    new_rows = np.arange(n_old, merged.num_nodes)
    isolated = [merged.node_ids[i] for i in new_rows if merged.degree(i) == 0]
    if isolated:
        raise ValueError(f"new node {isolated[0]!r} is isolated in the new topology")

    stats = trained.stats
    if len(new_rows):
        known = np.zeros(merged.num_nodes, dtype=bool)
        known[:n_old] = True
        to_universe = np.where(known, np.arange(merged.num_nodes), -1)
        summary = summarize_walks(
            merged, new_rows, l=cfg.l, n_s=cfg.n_s, n_i=cfg.n_i, e=cfg.e, seed=cfg.seed,
            deg_min=trained.deg_min, deg_max=trained.deg_max, table=trained.table,
            strict=False, known=known, universe=n_old, to_universe=to_universe,
        )
        theta = trained.model.theta.numpy()
        stats = NodeStatistics(
            old_ids + new_ids,
            np.concatenate([stats.s_tilde, summary.aw_counts.toarray()]),
            np.concatenate([stats.delta, summary.delta]),
            np.concatenate([stats.pi_g, np.asarray(summary.visits @ theta)]),
            np.concatenate([stats.walks_inf, summary.walks_inf]),
        )
    psi, gamma, context = _forward(trained, stats)
    meta = {"mode": "inductive-nodes", "seed": cfg.seed, "num_new": len(new_ids)}
    return EmbeddingSet(list(stats.node_ids), psi, gamma, context, meta)


def infer_inductive_graph(trained: TrainedModel, g2: Graph) -> EmbeddingSet:
    """Embed every node of an unseen graph with the trained parameters.

    Visit counts are projected with a fresh Gaussian matrix sized for ``g2``;
    its seed and purpose tag are recorded in the metadata.
    """
    cfg = trained.config
    if g2.num_nodes == 0:
        raise ValueError("graph has no nodes")
    isolated = np.flatnonzero(g2.degrees == 0)
    if len(isolated):
        raise ValueError(f"node {g2.node_ids[isolated[0]]!r} is isolated")
    summary = summarize_walks(
        g2, range(g2.num_nodes), l=cfg.l, n_s=cfg.n_s, n_i=cfg.n_i, e=cfg.e, seed=cfg.seed,
        deg_min=trained.deg_min, deg_max=trained.deg_max, table=trained.table, strict=False,
    )
    purpose = "theta-across"
    theta = projection_matrix(g2.num_nodes, cfg.d, cfg.seed, purpose=purpose)
    stats = NodeStatistics(
        list(g2.node_ids), summary.aw_counts.toarray(), summary.delta, np.asarray(summary.visits @ theta), summary.walks_inf
    )
    psi, gamma, context = _forward(trained, stats)
    meta = {"mode": "inductive-graph", "seed": cfg.seed, "projection_seed": cfg.seed, "projection_purpose": purpose}
    return EmbeddingSet(list(g2.node_ids), psi, gamma, context, meta)


def loss_csv_rows(path: str | Path) -> list[tuple[int, float, float]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            it, a, b = line.strip().split(",")
            rows.append((int(it), float(a), float(b)))
    return rows


__all__ = [
    "ConfigError",
    "EmbeddingSet",
    "IRWEModel",
    "ModelInputs",
    "TrainConfig",
    "TrainedModel",
    "TrainingDiverged",
    "compute_training_statistics",
    "infer_inductive_graph",
    "infer_inductive_nodes",
    "infer_transductive",
    "load_checkpoint",
    "read_embedding_text",
    "train",
    "write_embedding_text",
]
