"""Run manifest: a flat key=value report of config, per-epoch losses, counters
and metrics per seed, plus mean/std aggregates. The timestamp line is the only
part expected to differ between identical reruns."""

from __future__ import annotations

import datetime

import numpy as np

from .config import TrainConfig
from .graph import BipartiteGraph
from .training import RunResult

TIMESTAMP_KEY = "timestamp"


def build_manifest(config: TrainConfig, graph: BipartiteGraph, results: list[RunResult]) -> str:
    lines: list[str] = ["manifest_version = 1"]
    lines.append(f"{TIMESTAMP_KEY} = {datetime.datetime.now().isoformat()}")
    for raw in config.to_kv_text().strip().splitlines():
        lines.append(f"config.{raw}")
    lines.append(f"data.users = {graph.user_count}")
    lines.append(f"data.items = {graph.item_count}")
    lines.append(f"data.edges = {len(graph.edges)}")
    for lab, count in graph.label_counts().items():
        lines.append(f"data.label.{lab.name.lower()} = {count}")
    lines.append("seeds = " + ",".join(str(r.seed) for r in results))

    for r in results:
        p = f"seed.{r.seed}"
        for stage, losses in (
            ("main", r.main_losses),
            ("subtask", r.subtask_losses),
            ("validation", r.validation_losses),
        ):
            for epoch, value in enumerate(losses):
                lines.append(f"{p}.{stage}.loss.{epoch} = {value!r}")
        for key, value in r.stage_losses.as_dict().items():
            lines.append(f"{p}.components.{key} = {value!r}")
        lines.append(f"{p}.total_loss = {r.total!r}")
        for stage, count in sorted(r.counters.items()):
            lines.append(f"{p}.sim_evals.{stage} = {count}")
        for stage, count in sorted(r.per_epoch_counters.items()):
            lines.append(f"{p}.sim_evals_per_epoch.{stage} = {count}")
        lines.append(f"{p}.hard_edges = {r.hard_edge_count}")
        lines.append(f"{p}.masked_users = {r.masked_users}")
        lines.append(f"{p}.masked_items = {r.masked_items}")
        if r.metrics is not None:
            for key, value in sorted(r.metrics.as_dict().items()):
                lines.append(f"{p}.metrics.{key} = {value!r}")

    with_metrics = [r for r in results if r.metrics is not None]
    if with_metrics:
        keys = sorted(with_metrics[0].metrics.as_dict())
        for key in keys:
            values = [r.metrics.as_dict().get(key) for r in with_metrics]
            values = [v for v in values if v is not None]
            if values:
                lines.append(f"aggregate.{key}.mean = {float(np.mean(values))!r}")
                lines.append(f"aggregate.{key}.std = {float(np.std(values))!r}")
    return "\n".join(lines) + "\n"


def strip_timestamp(text: str) -> str:
    return "\n".join(
        line for line in text.splitlines() if not line.startswith(f"{TIMESTAMP_KEY} =")
    )


def losses_csv(results: list[RunResult]) -> str:
    rows = ["seed,stage,epoch,loss"]
    for r in results:
        for stage, losses in (
            ("main", r.main_losses),
            ("subtask", r.subtask_losses),
            ("validation", r.validation_losses),
        ):
            for epoch, value in enumerate(losses):
                rows.append(f"{r.seed},{stage},{epoch},{value!r}")
    return "\n".join(rows) + "\n"
