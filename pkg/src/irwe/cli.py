"""Command-line entry point: ``irwe {sample,train,infer,eval}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (
    PROFILE_PARAMS,
    SPLIT_SCHEMES,
    classification_rows,
    clustering_rows,
    degree_similarity_graph,
    filter_small_classes,
    modularity,
    ncut,
    with_mean_rows,
    write_report,
)
from .graph import GraphFormatError, load_edge_list, load_labels
from .trainer import (
    ConfigError,
    EmbeddingSet,
    TrainConfig,
    TrainedModel,
    compute_training_statistics,
    infer_inductive_graph,
    infer_inductive_nodes,
    infer_transductive,
    read_embedding_text,
    train,
)
from .walks import StatisticsHeader, save_statistics

log = logging.getLogger("irwe")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 2, 3
THREADS_ENV = "IRWE_NUM_THREADS"


class UserError(Exception):
    pass


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json_atomic(path: Path, obj: dict):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


class Manifest:
    """Run manifest: command, config, seed, input hashes and artifacts."""

    def __init__(self, out_dir: Path, command: str, inputs: dict, config: dict | None = None, seed: int | None = None):
        self.path = out_dir / "manifest.json"
        self.data = {
            "tool": "irwe",
            "version": __version__,
            "command": command,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "seed": seed,
            "config": config,
            "inputs": {k: {"path": str(p), "sha256": sha256(p)} for k, p in inputs.items() if p is not None},
            "artifacts": [],
            "status": "running",
        }
        write_json_atomic(self.path, self.data)

    def finish(self, artifacts, **extra):
        self.data["artifacts"] = sorted(str(a) for a in artifacts)
        self.data["status"] = "complete"
        self.data.update(extra)
        write_json_atomic(self.path, self.data)


@contextmanager
def run_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UserError(f"run directory {out_dir} is locked by another process (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"file not found: {p} ({what})")
    return p


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig.from_ini(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def cmd_sample(args) -> int:
    graph_path = _existing(args.graph, "--graph")
    cfg = _load_config(args)
    out = Path(args.out_dir)
    with run_lock(out):
        manifest = Manifest(out, "sample", {"graph": graph_path}, cfg.to_dict(), cfg.seed)
        g = load_edge_list(graph_path)
        stats, table, lo, hi, _ = compute_training_statistics(g, cfg)
        header = StatisticsHeader(cfg.l, cfg.n_s, cfg.n_i, cfg.e, cfg.seed, lo, hi, table.eta)
        save_statistics(out / "stats.npz", stats, header, table)
        manifest.finish([out / "stats.npz"])
    print(f"sampled {len(stats)} nodes; reduced table holds {table.eta} anonymous walks")
    return EXIT_OK


def cmd_train(args) -> int:
    graph_path = _existing(args.graph, "--graph")
    _existing(args.config, "--config")
    cfg = _load_config(args)
    out = Path(args.out_dir)
    with run_lock(out):
        manifest = Manifest(out, "train", {"graph": graph_path, "config": args.config and Path(args.config)}, cfg.to_dict(), cfg.seed)
        cfg.to_ini(out / "config.ini")
        g = load_edge_list(graph_path)
        trained = train(g, cfg, out)
        ckpts = sorted((out / "checkpoints").glob("*.npz")) if (out / "checkpoints").exists() else []
        artifacts = [out / "config.ini", out / "stats.npz", out / "model.npz", out / "loss.csv", *ckpts]
        manifest.finish([a for a in artifacts if a.exists()], num_nodes=len(trained.stats))
    if trained.loss_history:
        _, lpsi, lgamma = trained.loss_history[-1]
        print(f"trained {cfg.m} iterations on {len(trained.stats)} nodes; final L_psi={lpsi:.6g} L_gamma={lgamma:.6g}")
    else:
        print(f"initialized model on {len(trained.stats)} nodes (m=0)")
    return EXIT_OK


def _read_id_list(path: Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.split()[0] for ln in fh if ln.strip() and not ln.startswith("#")]


def cmd_infer(args) -> int:
    model_dir = _existing(args.model_dir, "--model-dir")
    graph_path = _existing(args.graph, "--graph")
    new_path = _existing(args.new_nodes, "--new-nodes")
    if args.mode != "inductive-nodes" and args.new_nodes is not None:
        raise UserError(f"--new-nodes is only valid with --mode inductive-nodes, not {args.mode}")
    if args.mode == "transductive" and args.graph is not None:
        raise UserError("--graph is not used in transductive mode")
    if args.mode != "transductive" and graph_path is None:
        raise UserError(f"--mode {args.mode} requires --graph")
    if args.mode == "inductive-nodes" and new_path is None:
        raise UserError("--mode inductive-nodes requires --new-nodes")
    out = Path(args.out)
    with run_lock(out):
        inputs = {"model": model_dir / "model.npz", "stats": model_dir / "stats.npz", "graph": graph_path, "new_nodes": new_path}
        trained = TrainedModel.load(model_dir)
        manifest = Manifest(out, f"infer {args.mode}", inputs, trained.config.to_dict(), trained.config.seed)
        if args.mode == "transductive":
            emb = infer_transductive(trained)
        elif args.mode == "inductive-nodes":
            emb = infer_inductive_nodes(trained, load_edge_list(graph_path), _read_id_list(new_path))
        else:
            emb = infer_inductive_graph(trained, load_edge_list(graph_path))
        emb.meta["manifest"] = str(manifest.path)
        paths = emb.write(out)
        manifest.finish(paths, num_nodes=len(emb), mode=args.mode)
    print(f"wrote {len(emb)} embeddings per kind to {out}")
    return EXIT_OK


def load_embeddings(path: Path, kind: str) -> tuple[list[str], np.ndarray]:
    """Read one embedding kind from a directory, an ``.npz`` or a text file."""
    if path.is_dir():
        path = path / "embeddings.npz" if (path / "embeddings.npz").exists() else path / f"{kind}.txt"
    if path.suffix == ".npz":
        emb = EmbeddingSet.load_npz(path)
        return emb.node_ids, emb.get(kind)
    return read_embedding_text(path)


DEFAULT_KIND = {"classify": "psi", "cluster-identity": "psi", "community": "gamma"}


def cmd_eval(args) -> int:
    emb_path = _existing(args.embeddings, "--embeddings")
    graph_path = _existing(args.graph, "--graph")
    labels_path = _existing(args.labels, "--labels")
    if args.task == "classify" and labels_path is None:
        raise UserError("--task classify requires --labels")
    if args.task in ("cluster-identity", "community") and graph_path is None:
        raise UserError(f"--task {args.task} requires --graph")
    kind = args.kind or DEFAULT_KIND[args.task]
    ids, x = load_embeddings(emb_path, kind)
    g = load_edge_list(graph_path) if graph_path else None
    dataset = args.dataset or (graph_path.stem if graph_path else emb_path.stem)
    meta = {"embedding": kind, "seed": args.seed, "repeats": args.repeats}

    labels = None
    if labels_path is not None:
        if g is None:
            raise UserError("--labels requires --graph to resolve node ids")
        raw, _ = load_labels(labels_path, g)
        by_id = {g.node_ids[i]: r for i, r in enumerate(raw)}
        labels = [by_id.get(i, []) for i in ids]

    if g is not None and args.task != "classify":
        missing = [i for i in ids if not g.has_node(i)]
        if missing:
            raise UserError(f"embedding id {missing[0]!r} not in --graph")
        # reorder so embedding rows follow graph indices
        pos = {nid: r for r, nid in enumerate(ids)}
        if len(pos) != g.num_nodes:
            raise UserError("embeddings must cover every node of --graph for clustering tasks")
        x = x[[pos[g.node_ids[i]] for i in range(g.num_nodes)]]
        if labels is not None:
            labels = [labels[pos[g.node_ids[i]]] for i in range(g.num_nodes)]

    if args.task == "classify":
        fractions = [float(f) for f in args.fractions.split(",")]
        c_grid = [float(c) for c in args.c_grid.split(",")]
        rows = classification_rows(
            x, labels, dataset=dataset, scheme=args.splits_scheme, fractions=fractions,
            repeats=args.repeats, seed=args.seed, c_grid=c_grid,
        )
        meta.update({"splits_scheme": args.splits_scheme, "c_grid": args.c_grid})
    else:
        k = args.clusters
        if k is None:
            if labels is None:
                raise UserError(f"--task {args.task} needs --clusters or --labels")
            k = len({c for r in filter_small_classes(labels) for c in r})
        meta["clusters"] = k
        if args.task == "community":
            rows = clustering_rows(x, k, dataset=dataset, task="community", score=lambda lab: modularity(lab, g),
                                   metric="modularity", repeats=args.repeats, seed=args.seed)
        else:
            hops, buckets = PROFILE_PARAMS[args.profile]
            g_d = degree_similarity_graph(g, hops, buckets, args.top_k)
            meta.update({f"similarity_graph_{k2}": v for k2, v in g_d.meta.items()})
            rows = clustering_rows(x, k, dataset=dataset, task="cluster-identity", score=lambda lab: ncut(lab, g_d),
                                   metric="ncut", repeats=args.repeats, seed=args.seed)
    rows = with_mean_rows(rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest_path = out.with_name(out.stem + ".manifest.json")
    manifest = {
        "tool": "irwe", "version": __version__, "command": f"eval {args.task}",
        "inputs": {k2: {"path": str(p), "sha256": sha256(p if p.is_file() else p / "embeddings.npz")}
                   for k2, p in {"embeddings": emb_path, "graph": graph_path, "labels": labels_path}.items()
                   if p is not None and (p.is_file() or (p / "embeddings.npz").exists())},
        "artifacts": [str(out)], "meta": meta,
    }
    write_json_atomic(manifest_path, manifest)
    meta["manifest"] = str(manifest_path)
    write_report(out, rows, meta)
    mean = [r for r in rows if r.repeat == "mean"]
    for r in mean:
        print(f"{r.dataset}\t{r.task}\t{r.split}\t{r.metric}\t{r.value:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irwe", description="Inductive identity and position node embeddings from random walks.")
    p.add_argument("--version", action="version", version=f"irwe {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="sample walks and write the statistics cache")
    s.add_argument("--graph", required=True)
    s.add_argument("--config")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sample)

    t = sub.add_parser("train", help="train a model; writes a run directory")
    t.add_argument("--graph", required=True)
    t.add_argument("--config", help="INI file; defaults to the built-in transductive settings")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--seed", type=int, help="overrides [run] seed")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="compute embeddings from a trained run")
    i.add_argument("--model-dir", required=True)
    i.add_argument("--mode", choices=("transductive", "inductive-nodes", "inductive-graph"), default="transductive")
    i.add_argument("--graph", help="new topology (inductive modes)")
    i.add_argument("--new-nodes", help="file with one new node id per line (inductive-nodes)")
    i.add_argument("--out", required=True, help="output directory")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="evaluate embeddings; writes a TSV report")
    e.add_argument("--embeddings", required=True, help="embedding directory, .npz or text file")
    e.add_argument("--graph")
    e.add_argument("--labels")
    e.add_argument("--task", choices=("classify", "cluster-identity", "community"), required=True)
    e.add_argument("--kind", choices=("psi", "gamma", "gamma_bar"))
    e.add_argument("--splits-scheme", choices=SPLIT_SCHEMES, default="transductive-fractions")
    e.add_argument("--fractions", default="0.2,0.4,0.6,0.8")
    e.add_argument("--c-grid", default="1.0", help="comma-separated inverse L2 strengths tuned on validation")
    e.add_argument("--repeats", type=int, default=10)
    e.add_argument("--clusters", type=int)
    e.add_argument("--profile", choices=sorted(PROFILE_PARAMS), default="default")
    e.add_argument("--top-k", type=int, default=10)
    e.add_argument("--dataset")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)
    return p


def _apply_thread_env():
    value = os.environ.get(THREADS_ENV)
    if value:
        import torch

        try:
            torch.set_num_threads(int(value))
        except ValueError:
            raise UserError(f"{THREADS_ENV} must be an integer, got {value!r}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_thread_env()
        return args.func(args)
    except (UserError, FileNotFoundError, GraphFormatError, ConfigError, ValueError, KeyError) as exc:
        print(f"irwe: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        print(f"irwe: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
