"""Command-line entry point: ``dyted <command> [flags]``.

Commands write their outputs under ``--out``. Failures print a single line
``error: <kind>: <message>`` to stderr and exit with status 1; usage errors
exit with status 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import evaluation as ev
from .graph import (ConfigError, DynamicGraph, EdgeListError, PlantedConfig, generate_planted,
                    load_labels, load_planted_config, read_edge_list, write_edge_list, write_labels)
from .sampler import verify_proposition, write_verify_csv
from .training import (TrainConfig, TrainingError, extract_representations, load_checkpoint,
                       load_train_config, save_checkpoint, train, train_backbone, write_history)

logger = logging.getLogger("dyted")

TRAIN_OVERRIDES = {
    "d": int, "tau": float, "tau_g": float, "lambda1": float, "lambda2": float, "lambda3": float,
    "n": int, "n_prime": int, "k_D": int, "learning_rate": float, "epochs": int, "alpha_init": float,
}


def _add_common(p, config=True):
    if config:
        p.add_argument("--config", metavar="PATH", help="TOML or JSON config file")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")


def _add_train_overrides(p):
    for name, typ in TRAIN_OVERRIDES.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.add_argument("--pretext", choices=("structure-proximity", "link-prediction"))
    p.add_argument("--sampling", choices=("bernoulli", "uniform"))


def _add_graph_input(p):
    p.add_argument("--edges", metavar="PATH", required=True, help="edge list `src dst t` (t 1-based)")
    p.add_argument("--snapshots", "-T", dest="T", type=int, required=True, help="number of snapshots")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyted", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("generate", help="sample a planted dynamic graph with labels")
    _add_common(p)
    p.add_argument("--snapshots", "-T", dest="T", type=int, help="number of snapshots")
    for name in ("node_count", "static_classes", "dynamic_states"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=int)
    for name in ("state_transition_prob", "edge_base_rate", "static_affinity", "dynamic_affinity"):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=float)

    p = sub.add_parser("train", help="train the disentangled model (or the plain backbone)")
    _add_common(p)
    _add_graph_input(p)
    _add_train_overrides(p)
    p.add_argument("--baseline", action="store_true", help="train the backbone on the pretext loss only")

    p = sub.add_parser("extract", help="write representations from a checkpoint")
    _add_common(p, config=False)
    _add_graph_input(p)
    p.add_argument("--checkpoint", metavar="DIR", required=True)

    p = sub.add_parser("eval", help="evaluate stored representations")
    _add_common(p, config=False)
    p.add_argument("--task", choices=("link", "node"), required=True)
    p.add_argument("--reps", metavar="DIR", required=True, help="directory written by `extract`")
    p.add_argument("--variant", choices=ev.VARIANTS, action="append",
                   help="representation variant (repeatable; default: all available)")
    p.add_argument("--edges", metavar="PATH", help="edge list holding the link-prediction target")
    p.add_argument("--snapshots", "-T", dest="T", type=int)
    p.add_argument("--target", type=int, help="1-based target snapshot (default: last)")
    p.add_argument("--labels", metavar="PATH", help="label file for --task node")
    p.add_argument("--label-kind", choices=("static", "per-snapshot"), default="static")

    p = sub.add_parser("sampler-verify", help="check the clip-overlap inequalities exactly")
    _add_common(p, config=False)
    p.add_argument("--alpha", type=float, action="append", help="alpha in (0, 1] (repeatable)")
    p.add_argument("--lmin", type=int, default=3)
    p.add_argument("--lmax", type=int, default=20)

    p = sub.add_parser("sweep", help="retrain/evaluate over a noise, data-fraction or width grid")
    _add_common(p)
    _add_graph_input(p)
    _add_train_overrides(p)
    p.add_argument("--kind", choices=ev.SWEEP_KINDS, required=True)
    p.add_argument("--grid", default="", help="comma-separated grid points")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--variant", choices=ev.VARIANTS, action="append")
    p.add_argument("--labels", metavar="PATH")
    p.add_argument("--label-kind", choices=("static", "per-snapshot"), default="static")
    return parser


def _overrides(args, names):
    return {k: getattr(args, k) for k in names if getattr(args, k, None) is not None}


def _train_config(args) -> TrainConfig:
    names = list(TRAIN_OVERRIDES) + ["pretext", "sampling", "seed"]
    if args.config:
        return load_train_config(args.config, **_overrides(args, names))
    return TrainConfig(**_overrides(args, names))


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _read_labels(path, kind):
    with open(path, encoding="utf-8") as fh:
        return load_labels(fh, kind)


def write_embeddings(array: np.ndarray, path) -> None:
    """``node_id v1 v2 ...`` per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(array):
            fh.write(f"{i} " + " ".join(repr(float(x)) for x in row) + "\n")


def read_embeddings(path) -> np.ndarray:
    data = np.loadtxt(path, ndmin=2)
    order = np.argsort(data[:, 0], kind="stable")
    return data[order, 1:]


def cmd_generate(args):
    names = [f for f in PlantedConfig.__dataclass_fields__]
    over = _overrides(args, names)
    cfg = load_planted_config(args.config, **over) if args.config else PlantedConfig(**over)
    graph, static, dynamic = generate_planted(cfg)
    with open(_out(args, "edges.txt"), "w", encoding="utf-8") as fh:
        write_edge_list(graph, fh)
    with open(_out(args, "labels_static.txt"), "w", encoding="utf-8") as fh:
        write_labels(static, fh)
    with open(_out(args, "labels_dynamic.txt"), "w", encoding="utf-8") as fh:
        write_labels(dynamic, fh)
    with open(_out(args, "planted.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.__dict__, fh, indent=2)
    print(f"wrote {graph.num_edges} edges over {graph.T} snapshots to {args.out}")


def cmd_train(args):
    cfg = _train_config(args)
    graph = read_edge_list(args.edges, args.T)
    t0 = time.time()
    result = (train_backbone if args.baseline else train)(cfg, graph)
    save_checkpoint(result, _out(args, "checkpoint"))
    with open(_out(args, "history.csv"), "w", encoding="utf-8") as fh:
        write_history(result.history, fh)
    final = f"; final loss {result.history[-1]['total']:.5f}" if result.history else ""
    print(f"trained {cfg.epochs} iterations in {time.time() - t0:.1f}s{final}")


def cmd_extract(args):
    result = load_checkpoint(args.checkpoint)
    graph = read_edge_list(args.edges, args.T)
    reps = extract_representations(result.time_invariant, result.time_varying, graph)
    os.makedirs(args.out, exist_ok=True)
    np.savez(_out(args, "representations.npz"), S=reps.S, D=reps.D)
    files = []
    if reps.S.shape[1]:
        write_embeddings(reps.S, _out(args, "time_invariant.txt"))
        files.append("time_invariant.txt")
    for t in range(reps.T):
        name = f"time_varying_t{t + 1}.txt"
        write_embeddings(reps.D[t], _out(args, name))
        files.append(name)
    manifest = {"baseline": result.baseline, "node_count": graph.node_count, "T": reps.T,
                "S_width": reps.S.shape[1], "D_width": reps.D.shape[2], "files": files}
    with open(_out(args, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote representations for {graph.node_count} nodes, {reps.T} snapshots to {args.out}")


def _load_reps(directory):
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    with np.load(os.path.join(directory, "representations.npz")) as npz:
        reps = ev.RepresentationSet(npz["S"], npz["D"])
    return reps, manifest


def cmd_eval(args):
    reps, manifest = _load_reps(args.reps)
    seed = args.seed or 0
    default = ("baseline",) if manifest["baseline"] else ("combine", "time-invariant", "time-varying", "pooled")
    variants = args.variant or default
    if manifest["baseline"] and set(variants) - {"baseline", "pooled"}:
        raise ValueError("baseline representations only support the baseline and pooled variants")
    rep_map = {v: reps for v in variants}
    if args.task == "link":
        if not args.edges or not args.T:
            raise ValueError("--task link needs --edges and --snapshots")
        graph = read_edge_list(args.edges, args.T)
        t = (args.target or graph.T) - 1
        if not 0 <= t < graph.T:
            raise ValueError(f"target snapshot {t + 1} outside 1..{graph.T}")
        if t >= 1:
            # features at the step before the target
            rep_map = {v: ev.RepresentationSet(r.S, r.D[: t]) for v, r in rep_map.items()}
        reports = ev.evaluate_variants(rep_map, target=graph[t], seed=seed)
    else:
        if not args.labels:
            raise ValueError("--task node needs --labels")
        reports = ev.evaluate_variants(rep_map, labels=_read_labels(args.labels, args.label_kind), seed=seed)
    with open(_out(args, "metrics.csv"), "w", encoding="utf-8") as fh:
        ev.write_metrics(reports, fh)
    for r in reports:
        print(r.task, r.variant, " ".join(f"{k}={v:.4f}" for k, v in r.metrics.items()))


def cmd_sampler_verify(args):
    alphas = args.alpha or [0.25, 0.5, 0.75, 1.0]
    rows = verify_proposition(alphas, range(args.lmin, args.lmax + 1))
    with open(_out(args, "sampler_verify.csv"), "w", encoding="utf-8") as fh:
        write_verify_csv(rows, fh)
    bad = sum(not r["pass"] for r in rows)
    print(f"{len(rows)} rows, {bad} violations")
    return 1 if bad else 0


def cmd_sweep(args):
    cfg = _train_config(args)
    graph = read_edge_list(args.edges, args.T)
    grid = [float(x) for x in args.grid.split(",") if x.strip()]
    if args.kind == "classifier-width":
        grid = [int(x) for x in grid]
    seeds = [int(x) for x in args.seeds.split(",") if x.strip()]
    labels = _read_labels(args.labels, args.label_kind) if args.labels else None
    with open(_out(args, f"sweep_{args.kind}.csv"), "w", encoding="utf-8") as fh:
        n = ev.sweep(args.kind, grid, graph, cfg, fh, seeds=seeds,
                     variants=tuple(args.variant or ("combine", "baseline")), labels=labels)
    print(f"wrote {n} rows")


COMMANDS = {
    "generate": cmd_generate, "train": cmd_train, "extract": cmd_extract, "eval": cmd_eval,
    "sampler-verify": cmd_sampler_verify, "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except (EdgeListError, ConfigError, TrainingError, ValueError, OSError, KeyError) as exc:
        kind = type(exc).__name__
        msg = " ".join(str(exc).split())
        print(f"error: {kind}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
