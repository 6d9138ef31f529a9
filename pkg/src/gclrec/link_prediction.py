"""Edge-label prediction head, main-task loss, and evaluation metrics.

The head maps the concatenated item||user embedding through a tanh MLP
(2d -> d -> label_count) and a row softmax. AUC is the one-vs-rest
macro-average of a rank-statistic implementation that counts ties as 0.5
concordance, so it agrees exactly with a pairwise-count oracle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError
from .graph import EdgeLabel


class PredictionHead:
    def __init__(self, dim: int, label_count: int, rng: np.random.Generator, name: str = "head"):
        self.dim = dim
        self.label_count = label_count
        self.w1 = ad.xavier_uniform(2 * dim, dim, rng, name=f"{name}.w1")
        self.b1 = ad.parameter(np.zeros((1, dim)), name=f"{name}.b1")
        self.w2 = ad.xavier_uniform(dim, label_count, rng, name=f"{name}.w2")
        self.b2 = ad.parameter(np.zeros((1, label_count)), name=f"{name}.b2")

    @classmethod
    def from_arrays(cls, w1, b1, w2, b2, trainable: bool = True) -> "PredictionHead":
        head = cls.__new__(cls)
        head.dim = np.asarray(w2).shape[0]
        head.label_count = np.asarray(w2).shape[1]
        make = ad.parameter if trainable else ad.constant
        head.w1 = make(w1, name="head.w1")
        head.b1 = make(b1, name="head.b1")
        head.w2 = make(w2, name="head.w2")
        head.b2 = make(b2, name="head.b2")
        return head

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


def predict_edges(
    z_user: Tensor, z_item: Tensor, edges, head: PredictionHead, gathers=None
) -> Tensor:
    """Per-edge label distribution, rows in input edge order.

    `gathers` optionally reuses precomputed (user, item) one-hot row-selection
    matrices across epochs.
    """
    if not edges:
        raise ShapeError("predict_edges: empty edge sequence")
    users = [e[0] for e in edges]
    items = [e[1] for e in edges]
    if max(users) >= z_user.rows or min(users) < 0:
        raise ContractError("edge user index outside embedding rows")
    if max(items) >= z_item.rows or min(items) < 0:
        raise ContractError("edge item index outside embedding rows")
    if gathers is None:
        take_u = ad.gather_matrix(users, z_user.rows, name="gather.users")
        take_i = ad.gather_matrix(items, z_item.rows, name="gather.items")
    else:
        take_u, take_i = gathers
    x = ad.concat_columns(ad.matmul(take_i, z_item), ad.matmul(take_u, z_user))
    hidden = ad.tanh(ad.affine(x, head.w1, head.b1))
    return ad.row_softmax(ad.affine(hidden, head.w2, head.b2))


def one_hot(edges, labels: tuple[EdgeLabel, ...]) -> np.ndarray:
    index = {lab: k for k, lab in enumerate(labels)}
    out = np.zeros((len(edges), len(labels)))
    for n, (_, _, lab) in enumerate(edges):
        out[n, index[lab]] = 1.0
    return out


def cross_entropy_sum(probs: Tensor, targets: Tensor) -> Tensor:
    """Sum over rows of -y . log(y_hat)."""
    return ad.scale(ad.sum_all(ad.multiply(targets, ad.log(probs))), -1.0)


def _spread(z: Tensor) -> Tensor:
    # sum over rows of the squared distance to the mean-pooled readout
    return ad.squared_l2(ad.subtract(z, ad.mean_rows(z)))


def main_loss(
    probs: Tensor, targets: Tensor, z_user: Tensor, z_item: Tensor, eta: float
) -> Tensor:
    """Cross-entropy plus eta-weighted readout regularizers for both roles."""
    if probs.shape != targets.shape:
        raise ShapeError(f"main_loss: probs {probs.shape} vs targets {targets.shape}")
    loss = cross_entropy_sum(probs, targets)
    if eta != 0.0:
        reg = ad.add(_spread(z_user), _spread(z_item))
        loss = ad.add(loss, ad.scale(reg, eta))
    return loss


# -- metrics ---------------------------------------------------------------

@dataclass
class Metrics:
    auc: float | None
    macro_f1: float
    micro_f1: float
    accuracy: float  # extra convenience metric, not part of the headline trio
    per_class: dict[int, dict[str, float]] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        out = {
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "accuracy": self.accuracy,
        }
        if self.auc is not None:
            out["auc"] = self.auc
        return out


def rank_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Ranking AUC via the rank-sum statistic with midranks for ties."""
    n_pos = int(positive.sum())
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("rank_auc needs both positives and negatives")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # midrank of the tie group, 1-based
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    pos_rank_sum = ranks[positive].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(probs: np.ndarray, labels, label_count: int) -> Metrics:
    """Metrics from a probability matrix and integer class labels."""
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != len(y):
        raise ShapeError(f"evaluate: probs {probs.shape} vs {len(y)} labels")
    pred = probs.argmax(axis=1)  # argmax ties resolve to the lowest class index

    aucs = []
    per_class: dict[int, dict[str, float]] = {}
    for c in range(label_count):
        positive = y == c
        n_pos = int(positive.sum())
        tp = float(((pred == c) & positive).sum())
        fp = float(((pred == c) & ~positive).sum())
        fn = float(((pred != c) & positive).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class[c] = {"precision": precision, "recall": recall}
        if n_pos == 0 or n_pos == len(y):
            side = "positives" if n_pos == 0 else "negatives"
            warnings.warn(f"class {c} has no {side}; excluded from AUC", stacklevel=2)
            continue
        aucs.append(rank_auc(probs[:, c], positive))
        per_class[c]["auc"] = aucs[-1]

    # F1 via 2TP/(2TP+FP+FN): same real quotient as the harmonic mean, so
    # micro-F1 equals accuracy exactly for single-label predictions
    present = sorted(set(y.tolist()) | set(pred.tolist()))
    f1s = []
    tp_total = fp_total = fn_total = 0.0
    for c in present:
        positive = y == c
        tp = float(((pred == c) & positive).sum())
        fp = float(((pred == c) & ~positive).sum())
        fn = float(((pred != c) & positive).sum())
        tp_total, fp_total, fn_total = tp_total + tp, fp_total + fp, fn_total + fn
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    micro_denom = 2 * tp_total + fp_total + fn_total
    micro_f1 = 2 * tp_total / micro_denom if micro_denom else 0.0

    return Metrics(
        auc=float(np.mean(aucs)) if aucs else None,
        macro_f1=float(np.mean(f1s)) if f1s else 0.0,
        micro_f1=micro_f1,
        accuracy=float((pred == y).mean()),
        per_class=per_class,
    )
