"""View merging and label-level aggregation.

Three interchangeable strategies exist at both aggregation points (merging
the two augmented views of a label, and fusing the per-label matrices):
tanh-scored / query-key attention (default), a small MLP, or a plain mean.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import NodeEmbeddings
from .errors import ConfigError
from .graph import EdgeLabel

_ROLES = ("user", "item")


class ProjectionHead:
    """Two affine d->d layers with tanh between."""

    def __init__(self, dim: int, rng: np.random.Generator, name: str = "proj"):
        self.w1 = ad.xavier_uniform(dim, dim, rng, name=f"{name}.w1")
        self.b1 = ad.parameter(np.zeros((1, dim)), name=f"{name}.b1")
        self.w2 = ad.xavier_uniform(dim, dim, rng, name=f"{name}.w2")
        self.b2 = ad.parameter(np.zeros((1, dim)), name=f"{name}.b2")

    def apply(self, h: Tensor) -> Tensor:
        return ad.affine(ad.tanh(ad.affine(h, self.w1, self.b1)), self.w2, self.b2)

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


def project(h: NodeEmbeddings, head: ProjectionHead) -> NodeEmbeddings:
    user = head.apply(h.user) if h.user.rows else h.user
    item = head.apply(h.item) if h.item.rows else h.item
    return NodeEmbeddings(user=user, item=item, tag=f"{h.tag}:proj")


class AugmentationMerger:
    """Blend the two views of a label with tanh-scored attention weights.

    Per role: s_v = mean_n a_v^T tanh(W h_n + b), beta = softmax(s_t, s_t2),
    output = beta_t H_t + beta_t2 H_t2. The betas of the last call are kept
    on `last_beta` for inspection.
    """

    def __init__(self, dim: int, rng: np.random.Generator, name: str = "merge",
                 roles: tuple[str, ...] = _ROLES):
        self.roles = roles
        self.params: dict[str, dict[str, Tensor]] = {}
        for role in roles:
            self.params[role] = {
                "w": ad.xavier_uniform(dim, dim, rng, name=f"{name}.{role}.w"),
                "b": ad.parameter(np.zeros((1, dim)), name=f"{name}.{role}.b"),
                "a_t": ad.xavier_uniform(dim, 1, rng, name=f"{name}.{role}.a_t"),
                "a_t2": ad.xavier_uniform(dim, 1, rng, name=f"{name}.{role}.a_t2"),
            }
        self.last_beta: dict[str, tuple[float, float]] = {}

    def parameters(self) -> list[Tensor]:
        return [t for group in self.params.values() for t in group.values()]

    def _merge_role(self, role: str, h_t: Tensor, h_t2: Tensor) -> Tensor:
        p = self.params[role]
        scores = []
        for h, a in ((h_t, p["a_t"]), (h_t2, p["a_t2"])):
            hidden = ad.tanh(ad.affine(h, ad.transpose(p["w"]), p["b"]))
            scores.append(ad.mean_rows(ad.matmul(hidden, a)))
        beta = ad.row_softmax(ad.concat_columns(scores[0], scores[1]))
        b_t, b_t2 = ad.column(beta, 0), ad.column(beta, 1)
        self.last_beta[role] = (b_t.item(), b_t2.item())
        return ad.add(ad.multiply(b_t, h_t), ad.multiply(b_t2, h_t2))

    def merge(self, h_t: NodeEmbeddings, h_t2: NodeEmbeddings) -> NodeEmbeddings:
        out = {}
        for role in _ROLES:
            a, b = getattr(h_t, role), getattr(h_t2, role)
            out[role] = self._merge_role(role, a, b) if a.rows else a
        return NodeEmbeddings(user=out["user"], item=out["item"], tag=h_t.tag.split(":")[0])


class MlpMerger:
    """Concatenate the two views and map 2d -> d -> d with tanh hidden.

    Initialized to mimic the plain average (stacked identity blocks around a
    near-linear tanh), so training starts from the mean baseline and can only
    move away from it when that pays off.
    """

    def __init__(self, dim: int, rng: np.random.Generator, name: str = "merge_mlp",
                 roles: tuple[str, ...] = _ROLES):
        self.roles = roles
        self.params = {}
        w1_init = np.vstack([np.eye(dim), np.eye(dim)]) / 2.0
        for role in roles:
            self.params[role] = {
                "w1": ad.parameter(w1_init, name=f"{name}.{role}.w1"),
                "b1": ad.parameter(np.zeros((1, dim)), name=f"{name}.{role}.b1"),
                "w2": ad.parameter(np.eye(dim), name=f"{name}.{role}.w2"),
                "b2": ad.parameter(np.zeros((1, dim)), name=f"{name}.{role}.b2"),
            }

    def parameters(self) -> list[Tensor]:
        return [t for group in self.params.values() for t in group.values()]

    def merge(self, h_t: NodeEmbeddings, h_t2: NodeEmbeddings) -> NodeEmbeddings:
        out = {}
        for role in _ROLES:
            a, b = getattr(h_t, role), getattr(h_t2, role)
            if a.rows:
                p = self.params[role]
                x = ad.concat_columns(a, b)
                out[role] = ad.affine(ad.tanh(ad.affine(x, p["w1"], p["b1"])), p["w2"], p["b2"])
            else:
                out[role] = a
        return NodeEmbeddings(user=out["user"], item=out["item"], tag=h_t.tag.split(":")[0])


class MeanMerger:
    """Plain average of the two views."""

    def parameters(self) -> list[Tensor]:
        return []

    def merge(self, h_t: NodeEmbeddings, h_t2: NodeEmbeddings) -> NodeEmbeddings:
        out = {}
        for role in _ROLES:
            a, b = getattr(h_t, role), getattr(h_t2, role)
            out[role] = ad.scale(ad.add(a, b), 0.5) if a.rows else a
        return NodeEmbeddings(user=out["user"], item=out["item"], tag=h_t.tag.split(":")[0])


def merge_augmentations(h_t: NodeEmbeddings, h_t2: NodeEmbeddings, merger) -> NodeEmbeddings:
    return merger.merge(h_t, h_t2)


class LabelAttention:
    """Per-node query/key scoring that blends the per-label matrices.

    score_l(n) = (H_l W_Q^l)_n . (H_l W_K^l)_n / sqrt(d); alpha = softmax over
    labels per node; output row = sum_l alpha_l(n) H_l(n). The sqrt(d) scaling
    keeps scores in a trainable range.
    """

    def __init__(self, dim: int, labels: tuple[EdgeLabel, ...], rng: np.random.Generator,
                 name: str = "labelattn", roles: tuple[str, ...] = _ROLES):
        self.dim = dim
        self.labels = tuple(sorted(labels))
        self.roles = roles
        self.params: dict[str, dict[EdgeLabel, dict[str, Tensor]]] = {}
        for role in roles:
            self.params[role] = {
                lab: {
                    "wq": ad.xavier_uniform(dim, dim, rng, name=f"{name}.{role}.{lab.name}.wq"),
                    "wk": ad.xavier_uniform(dim, dim, rng, name=f"{name}.{role}.{lab.name}.wk"),
                }
                for lab in self.labels
            }

    def parameters(self) -> list[Tensor]:
        return [
            t
            for role in self.params.values()
            for lab in role.values()
            for t in lab.values()
        ]

    def _aggregate_role(self, role: str, per_label: dict) -> Tensor:
        cols = None
        for lab in self.labels:
            h = getattr(per_label[lab], role)
            p = self.params[role][lab]
            score = ad.scale(
                ad.row_sums(ad.multiply(ad.matmul(h, p["wq"]), ad.matmul(h, p["wk"]))),
                1.0 / math.sqrt(self.dim),
            )
            cols = score if cols is None else ad.concat_columns(cols, score)
        alpha = ad.row_softmax(cols)
        out = None
        for j, lab in enumerate(self.labels):
            h = getattr(per_label[lab], role)
            term = ad.multiply(ad.column(alpha, j), h)
            out = term if out is None else ad.add(out, term)
        return out

    def aggregate(self, per_label: dict) -> NodeEmbeddings:
        first = per_label[self.labels[0]]
        out = {}
        for role in _ROLES:
            if getattr(first, role).rows:
                out[role] = self._aggregate_role(role, per_label)
            else:
                out[role] = getattr(first, role)
        return NodeEmbeddings(user=out["user"], item=out["item"], tag="aggregated")


class LabelMlpAggregator:
    """Concatenate the per-label matrices and map L*d -> d -> d.

    Initialized to mimic the unweighted average of the label matrices, like
    MlpMerger, so the learned mixing starts at the mean baseline.
    """

    def __init__(self, dim: int, labels: tuple[EdgeLabel, ...], rng: np.random.Generator,
                 name: str = "labelmlp", roles: tuple[str, ...] = _ROLES):
        self.labels = tuple(sorted(labels))
        self.roles = roles
        n = len(self.labels)
        self.params = {}
        w1_init = np.vstack([np.eye(dim)] * n) / n
        for role in roles:
            self.params[role] = {
                "w1": ad.parameter(w1_init, name=f"{name}.{role}.w1"),
                "b1": ad.parameter(np.zeros((1, dim)), name=f"{name}.{role}.b1"),
                "w2": ad.parameter(np.eye(dim), name=f"{name}.{role}.w2"),
                "b2": ad.parameter(np.zeros((1, dim)), name=f"{name}.{role}.b2"),
            }

    def parameters(self) -> list[Tensor]:
        return [t for group in self.params.values() for t in group.values()]

    def aggregate(self, per_label: dict) -> NodeEmbeddings:
        out = {}
        for role in _ROLES:
            mats = [getattr(per_label[lab], role) for lab in self.labels]
            if mats[0].rows:
                x = mats[0]
                for m in mats[1:]:
                    x = ad.concat_columns(x, m)
                p = self.params[role]
                out[role] = ad.affine(ad.tanh(ad.affine(x, p["w1"], p["b1"])), p["w2"], p["b2"])
            else:
                out[role] = mats[0]
        return NodeEmbeddings(user=out["user"], item=out["item"], tag="aggregated")


class LabelMeanAggregator:
    """Unweighted average of the per-label matrices."""

    def __init__(self, labels: tuple[EdgeLabel, ...]):
        self.labels = tuple(sorted(labels))

    def parameters(self) -> list[Tensor]:
        return []

    def aggregate(self, per_label: dict) -> NodeEmbeddings:
        out = {}
        for role in _ROLES:
            mats = [getattr(per_label[lab], role) for lab in self.labels]
            if mats[0].rows:
                total = mats[0]
                for m in mats[1:]:
                    total = ad.add(total, m)
                out[role] = ad.scale(total, 1.0 / len(mats))
            else:
                out[role] = mats[0]
        return NodeEmbeddings(user=out["user"], item=out["item"], tag="aggregated")


def attention_aggregate_labels(per_label: dict, attn) -> NodeEmbeddings:
    return attn.aggregate(per_label)


def make_merger(method: str, dim: int, rng: np.random.Generator,
                roles: tuple[str, ...] = _ROLES):
    if method == "attention":
        return AugmentationMerger(dim, rng, roles=roles)
    if method == "mlp":
        return MlpMerger(dim, rng, roles=roles)
    if method == "mean":
        return MeanMerger()
    raise ConfigError(f"unknown aggregation method {method!r}")


def make_label_aggregator(method: str, dim: int, labels: tuple[EdgeLabel, ...],
                          rng: np.random.Generator, roles: tuple[str, ...] = _ROLES):
    if method == "attention":
        return LabelAttention(dim, labels, rng, roles=roles)
    if method == "mlp":
        return LabelMlpAggregator(dim, labels, rng, roles=roles)
    if method == "mean":
        return LabelMeanAggregator(labels)
    raise ConfigError(f"unknown aggregation method {method!r}")
