#!/usr/bin/env python3
"""Synthetic-data study: ablations, aggregation variants, augmentation
sensitivity, and the subtask/main cost ratio, reported as per-seed AUCs and
medians. Writes a JSON result file consumed by humans (and reused by the
acceptance tests' logic, which rebuilds the same matrix)."""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import time
import warnings

import numpy as np

from gclrec import TrainConfig, run_framework, synth_generate


def one_run(payload):
    (users, items, clusters, noise, graph_seed), overrides, seed = payload
    warnings.simplefilter("ignore")
    graph = synth_generate(users, items, clusters, noise, graph_seed)
    result = run_framework(graph, TrainConfig(**overrides), seed=seed)
    return {
        "overrides": overrides,
        "seed": seed,
        "auc": result.metrics.auc if result.metrics else None,
        "macro_f1": result.metrics.macro_f1 if result.metrics else None,
        "micro_f1": result.metrics.micro_f1 if result.metrics else None,
        "masked_users": result.masked_users,
        "masked_items": result.masked_items,
        "hard_edges": result.hard_edge_count,
        "sim_evals": result.counters,
        "sim_evals_per_epoch": result.per_epoch_counters,
    }


def build_matrix(seeds) -> list[tuple[str, dict, int]]:
    jobs: list[tuple[str, dict, int]] = []
    for name, overrides in {
        "full": {},
        "no_validation": {"ablation": "no_validation"},
        "no_subtask": {"ablation": "no_subtask"},
        "no_main": {"ablation": "no_main"},
        "agg_mlp": {"agg_method": "mlp"},
        "agg_mean": {"agg_method": "mean"},
        "p1_add": {"augment_mode": "add", "p_augment": 0.01},
        "p5_add": {"augment_mode": "add", "p_augment": 0.05},
        "p1_remove": {"augment_mode": "remove", "p_augment": 0.01},
        "p5_remove": {"augment_mode": "remove", "p_augment": 0.05},
    }.items():
        for seed in seeds:
            jobs.append((name, overrides, seed))
    return jobs


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="synthetic_study.json")
    parser.add_argument("--seeds", default="1,2,3,4,5")
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument("--users", type=int, default=300)
    parser.add_argument("--items", type=int, default=150)
    parser.add_argument("--clusters", type=int, default=3)
    parser.add_argument("--noise", type=float, default=0.05)
    parser.add_argument("--graph-seed", type=int, default=1)
    args = parser.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    gen = (args.users, args.items, args.clusters, args.noise, args.graph_seed)

    jobs = build_matrix(seeds)
    payloads = [(gen, overrides, seed) for _, overrides, seed in jobs]
    t0 = time.time()
    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(one_run, payloads))
    else:
        rows = [one_run(p) for p in payloads]
    elapsed = time.time() - t0

    study: dict[str, dict] = {}
    for (name, _, _), row in zip(jobs, rows):
        study.setdefault(name, {"runs": []})["runs"].append(row)
    for name, block in study.items():
        aucs = [r["auc"] for r in block["runs"] if r["auc"] is not None]
        block["median_auc"] = float(np.median(aucs)) if aucs else None

    payload = {"generator": gen, "seeds": seeds, "elapsed_sec": elapsed, "variants": study}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)

    print(f"study finished in {elapsed:.0f}s -> {args.out}")
    for name in study:
        print(f"  {name:14s} median AUC = {study[name]['median_auc']:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
