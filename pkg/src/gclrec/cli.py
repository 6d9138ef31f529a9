"""Command-line entry points: train, eval, synth.

Exit codes: 0 success, 1 configuration error, 2 data/checkpoint error,
3 numeric divergence. Relative data paths that do not exist are retried
under $GCLREC_DATA_DIR.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import os
import sys

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config
from .errors import CheckpointError, ConfigError, DataError, GclrecError, NumericError
from .graph import ingest_edge_list, split, synth_generate, write_edge_list
from .link_prediction import PredictionHead, evaluate, predict_edges
from .manifest import build_manifest, losses_csv
from .subtask import write_hard_samples_tsv
from .training import RunResult, run_framework

DATA_DIR_ENV = "GCLREC_DATA_DIR"

_CONFIG_FLAGS = [f.name for f in dataclasses.fields(TrainConfig)]


def _resolve_data_path(path: str) -> str:
    if os.path.exists(path):
        return path
    base = os.environ.get(DATA_DIR_ENV)
    if base and not os.path.isabs(path):
        candidate = os.path.join(base, path)
        if os.path.exists(candidate):
            return candidate
    raise DataError(f"data file not found: {path}")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "seeds":
            parser.add_argument(flag, type=str, default=None,
                                help="comma-separated seed list (default: 1,2,3,4,5)")
        elif f.type == "bool":
            parser.add_argument(flag, type=str, choices=("true", "false"), default=None,
                                help=f"default: {f.default}")
        else:
            parser.add_argument(flag, type=str, default=None, help=f"default: {f.default}")


def _apply_config_flags(args: argparse.Namespace, base: TrainConfig) -> TrainConfig:
    from .config import _parse_value

    overrides = {}
    for name in _CONFIG_FLAGS:
        raw = getattr(args, name, None)
        if raw is not None:
            overrides[name] = _parse_value(name, raw)
    return base.replace(**overrides) if overrides else base


def _run_one(payload: tuple) -> RunResult:
    graph, config, seed = payload
    return run_framework(graph, config, seed)


def cmd_train(args: argparse.Namespace) -> int:
    config = TrainConfig()
    if args.config:
        config = load_config(args.config, base=config)
    config = _apply_config_flags(args, config)
    data_path = _resolve_data_path(args.data)
    graph = ingest_edge_list(data_path, config.label_mode)
    os.makedirs(args.out, exist_ok=True)

    jobs = [(graph, config, seed) for seed in config.seeds]
    if args.parallel_seeds > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.parallel_seeds) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]

    for r in results:
        save_checkpoint(os.path.join(args.out, f"checkpoint_seed{r.seed}.ckpt"), r.checkpoint_tensors)
        if r.hard is not None:
            write_hard_samples_tsv(r.hard, os.path.join(args.out, f"hard_samples_seed{r.seed}.tsv"))
    save_checkpoint(os.path.join(args.out, "checkpoint.ckpt"), results[0].checkpoint_tensors)
    text = build_manifest(config, graph, results)
    with open(os.path.join(args.out, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    with open(os.path.join(args.out, "losses.csv"), "w", encoding="utf-8") as fh:
        fh.write(losses_csv(results))

    for r in results:
        if r.metrics is not None:
            print(
                f"seed {r.seed}: AUC {_pct(r.metrics.auc)}  "
                f"Macro-F1 {_pct(r.metrics.macro_f1)}  Micro-F1 {_pct(r.metrics.micro_f1)}"
            )
    print(f"manifest written to {os.path.join(args.out, 'manifest.txt')}")
    return 0


def _pct(value) -> str:
    return "n/a" if value is None else f"{100.0 * value:.2f}"


def cmd_eval(args: argparse.Namespace) -> int:
    tensors = load_checkpoint(args.checkpoint)
    required = ("z_user", "z_item", "head.w1", "head.b1", "head.w2", "head.b2",
                "meta.seed", "meta.label_mode")
    missing = [k for k in required if k not in tensors]
    if missing:
        raise CheckpointError(f"{args.checkpoint}: missing tensors {missing}")
    label_mode = "multi" if tensors["meta.label_mode"][0, 0] == 0.0 else "binary"
    seed = int(tensors["meta.seed"][0, 0])
    data_path = _resolve_data_path(args.data)
    graph = ingest_edge_list(data_path, label_mode)
    z_user, z_item = tensors["z_user"], tensors["z_item"]
    if z_user.shape[0] != graph.user_count or z_item.shape[0] != graph.item_count:
        raise CheckpointError(
            f"checkpoint embeddings ({z_user.shape[0]} users, {z_item.shape[0]} items) "
            f"do not match data ({graph.user_count} users, {graph.item_count} items)"
        )
    head = PredictionHead.from_arrays(
        tensors["head.w1"], tensors["head.b1"], tensors["head.w2"], tensors["head.b2"]
    )
    test = split(graph, seed).test
    if not test.edges:
        raise DataError("test split is empty")
    probs = predict_edges(ad.constant(z_user), ad.constant(z_item), test.edges, head).data
    labels = graph.labels
    metrics = evaluate(probs, [labels.index(e[2]) for e in test.edges], len(labels))
    print(f"AUC: {_pct(metrics.auc)}")
    print(f"Macro-F1: {_pct(metrics.macro_f1)}")
    print(f"Micro-F1: {_pct(metrics.micro_f1)}")
    print(f"Accuracy: {_pct(metrics.accuracy)} (extra, not a headline metric)")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    graph = synth_generate(
        users=args.users,
        items=args.items,
        clusters=args.clusters,
        noise=args.noise,
        seed=args.seed,
        label_mode=args.label_mode,
    )
    write_edge_list(graph, args.out)
    counts = {lab.name.lower(): n for lab, n in graph.label_counts().items()}
    print(
        f"wrote {args.out}: {graph.user_count} users, {graph.item_count} items, "
        f"{len(graph.edges)} edges ({counts})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gclrec",
        description="Two-task graph contrastive learning for multi-label link prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser(
        "train",
        help="train on a TSV edge list and write manifest + checkpoints",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_train.add_argument("--data", required=True, help="TSV edge list (user<TAB>item<TAB>rating)")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--config", default=None, help="key=value config file")
    p_train.add_argument("--parallel-seeds", type=int, default=1,
                         help="run this many seeds in parallel processes")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser(
        "synth",
        help="generate a clustered synthetic dataset",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p_synth.add_argument("--users", type=int, default=300)
    p_synth.add_argument("--items", type=int, default=150)
    p_synth.add_argument("--clusters", type=int, default=3)
    p_synth.add_argument("--noise", type=float, default=0.05)
    p_synth.add_argument("--seed", type=int, default=1)
    p_synth.add_argument("--label-mode", choices=("multi", "binary"), default="multi")
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return 3
    except GclrecError as err:  # contract/shape problems are config-level misuse
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
