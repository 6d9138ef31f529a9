"""gclrec: two-task graph contrastive learning for multi-label link
prediction on user-item bipartite graphs."""

from .config import TrainConfig
from .graph import BipartiteGraph, EdgeLabel, ingest_edge_list, synth_generate
from .link_prediction import Metrics, evaluate
from .training import RunResult, run_framework, run_main_task

__version__ = "0.1.0"

__all__ = [
    "BipartiteGraph",
    "EdgeLabel",
    "Metrics",
    "RunResult",
    "TrainConfig",
    "evaluate",
    "ingest_edge_list",
    "run_framework",
    "run_main_task",
    "synth_generate",
    "__version__",
]
