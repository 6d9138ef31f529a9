"""Per-label GCN encoders over normalized adjacencies.

One encoder instance serves both augmented views of its label; layer k maps
H <- activation(A_hat @ H @ W_k) with row softmax as the default activation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, ShapeError
from .graph import BipartiteGraph, EdgeLabel, normalize_adjacency, single_label_check


@dataclass
class NodeEmbeddings:
    """User and item representation matrices plus a provenance tag."""

    user: Tensor
    item: Tensor
    tag: str = ""

    def __post_init__(self):
        if self.user.rows and self.item.rows and self.user.cols != self.item.cols:
            raise ShapeError(
                f"user/item widths differ: {self.user.shape} vs {self.item.shape}"
            )


class GcnEncoder:
    def __init__(
        self,
        dim: int,
        layer_count: int,
        label: EdgeLabel,
        rng: np.random.Generator,
        activation: str = "softmax",
    ):
        if not 0 <= layer_count <= 4:
            raise ConfigError(f"layer count {layer_count} outside 0..4")
        if activation not in ("softmax", "relu"):
            raise ConfigError(f"unknown activation {activation!r}")
        self.dim = dim
        self.label = label
        self.activation = activation
        self.weights = [
            ad.xavier_uniform(dim, dim, rng, name=f"gcn.{label.name}.W{k}")
            for k in range(layer_count)
        ]

    def parameters(self) -> list[Tensor]:
        return list(self.weights)


def _stack(h0: NodeEmbeddings) -> Tensor:
    if h0.user.rows == 0:
        return h0.item
    if h0.item.rows == 0:
        return h0.user
    return ad.concat_rows(h0.user, h0.item)


def _split(h: Tensor, user_count: int, item_count: int, tag: str) -> NodeEmbeddings:
    mask_u = np.zeros(user_count + item_count)
    mask_u[:user_count] = 1
    user = ad.row_select(h, mask_u) if item_count else h
    item = ad.row_select(h, 1 - mask_u) if user_count else h
    return NodeEmbeddings(user=user, item=item, tag=tag)


def gcn_forward(
    encoder: GcnEncoder,
    adjacency: Tensor,
    h0: NodeEmbeddings,
    tag: str = "",
) -> NodeEmbeddings:
    """Run K propagation layers over a stacked users-then-items matrix."""
    h = _stack(h0)
    if adjacency.shape != (h.rows, h.rows):
        raise ShapeError(f"adjacency {adjacency.shape} vs stacked embeddings {h.shape}")
    act = ad.row_softmax if encoder.activation == "softmax" else ad.relu
    for w in encoder.weights:
        h = act(ad.matmul(ad.matmul(adjacency, h), w))
    return _split(h, h0.user.rows, h0.item.rows, tag or h0.tag)


def encode_label_pair(
    encoder: GcnEncoder,
    g_t: BipartiteGraph,
    g_t2: BipartiteGraph,
    h0: NodeEmbeddings,
    adj_t: Tensor | None = None,
    adj_t2: Tensor | None = None,
) -> tuple[NodeEmbeddings, NodeEmbeddings]:
    """Encode both augmented views of one label through the same weights."""
    for g in (g_t, g_t2):
        single_label_check(g, encoder.label)
        if g.user_count != h0.user.rows or g.item_count != h0.item.rows:
            raise ContractError("graph node counts do not match initial embeddings")
    adj_t = adj_t if adj_t is not None else normalize_adjacency(g_t)
    adj_t2 = adj_t2 if adj_t2 is not None else normalize_adjacency(g_t2)
    h_t = gcn_forward(encoder, adj_t, h0, tag=f"{encoder.label.name}:t")
    h_t2 = gcn_forward(encoder, adj_t2, h0, tag=f"{encoder.label.name}:t2")
    return h_t, h_t2
