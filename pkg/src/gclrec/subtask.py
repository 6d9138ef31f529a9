"""Hard-sample mining and the homogeneous-graph refinement pass.

The hardest ceil(eps * N) training edges (by coordinate-wise binary
cross-entropy against the one-hot target) define user/item masks. Their
endpoint embeddings seed user-user and item-item similarity graphs that are
trained with the same encoder -> contrastive -> aggregation machinery as the
main task, but only over the compacted masked rows; unmasked rows stay zero
and receive no gradient.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import contrastive
from .aggregation import ProjectionHead, make_label_aggregator, make_merger, project
from .autodiff import Tensor
from .encoders import GcnEncoder, NodeEmbeddings, gcn_forward
from .errors import ConfigError, NumericError, ShapeError
from .graph import LABELS_BINARY, LABELS_MULTI, Edge, EdgeLabel
from .link_prediction import PredictionHead, cross_entropy_sum, one_hot, predict_edges
from .optim import AdamState, adam_step
from .rng import stream

PROB_FLOOR = 1e-30


def edge_entropy(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Binary-form cross-entropy summed over the label coordinates."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != targets.shape:
        raise ShapeError(f"edge_entropy: {probs.shape} vs {targets.shape}")
    # upper clamp at the largest float64 below 1 so log(1-p) stays finite
    p = np.clip(probs, PROB_FLOOR, np.nextafter(1.0, 0.0))
    return (-(targets * np.log(p)) - (1.0 - targets) * np.log1p(-p)).sum(axis=1)


@dataclass(frozen=True)
class HardSampleSet:
    edges: tuple[Edge, ...]
    entropies: tuple[float, ...]
    user_mask: np.ndarray  # 0/1 over users
    item_mask: np.ndarray  # 0/1 over items

    @property
    def masked_user_count(self) -> int:
        return int(self.user_mask.sum())

    @property
    def masked_item_count(self) -> int:
        return int(self.item_mask.sum())


def select_hard(
    entropies: np.ndarray,
    epsilon: float,
    edges,
    user_count: int,
    item_count: int,
) -> HardSampleSet:
    """Keep the ceil(eps*N) highest-entropy edges; ties go to lower edge index."""
    if not 0.0 < epsilon <= 1.0:
        raise ConfigError(f"hard-sample fraction {epsilon} outside (0, 1]")
    entropies = np.asarray(entropies, dtype=np.float64)
    if len(entropies) != len(edges):
        raise ShapeError("one entropy per edge required")
    n_keep = math.ceil(epsilon * len(edges))
    order = sorted(range(len(edges)), key=lambda n: (-entropies[n], n))
    chosen = sorted(order[:n_keep])
    user_mask = np.zeros(user_count, dtype=np.int64)
    item_mask = np.zeros(item_count, dtype=np.int64)
    for n in chosen:
        u, i, _ = edges[n]
        user_mask[u] = 1
        item_mask[i] = 1
    return HardSampleSet(
        edges=tuple(edges[n] for n in chosen),
        entropies=tuple(float(entropies[n]) for n in chosen),
        user_mask=user_mask,
        item_mask=item_mask,
    )


def write_hard_samples_tsv(hard: HardSampleSet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# user\titem\tlabel\tentropy\n")
        for (u, i, lab), h in zip(hard.edges, hard.entropies):
            fh.write(f"{u}\t{i}\t{lab.name}\t{h:.17g}\n")


def mask_extract(z: Tensor, mask: np.ndarray) -> Tensor:
    """Zero the rows whose mask entry is 0; shape is preserved."""
    mask = np.asarray(mask, dtype=np.float64).reshape(-1, 1)
    if mask.shape[0] != z.rows:
        raise ShapeError(f"mask length {mask.shape[0]} vs {z.rows} rows")
    return ad.multiply(z, ad.constant(mask))


WeightedEdge = tuple[int, int, float, EdgeLabel]


@dataclass(frozen=True)
class HomogeneousGraph:
    node_count: int
    edges: tuple[WeightedEdge, ...]  # directed (src, dst, score, label)
    side: str  # "user" | "item"
    label_mode: str = "multi"

    @property
    def labels(self) -> tuple[EdgeLabel, ...]:
        return LABELS_MULTI if self.label_mode == "multi" else LABELS_BINARY

    def replace_edges(self, edges: tuple[WeightedEdge, ...]) -> "HomogeneousGraph":
        return HomogeneousGraph(self.node_count, edges, self.side, self.label_mode)


def build_homogeneous_graph(
    h_s: Tensor,
    k_top: int,
    mlp: ProjectionHead,
    side: str,
    mask: np.ndarray | None = None,
    label_mode: str = "multi",
) -> HomogeneousGraph:
    """Similarity graph over the masked rows of h_s.

    Scores are row_softmax(MLP(H) MLP(H)^T) restricted to the masked rows;
    each row keeps its k_top best non-self scores. Kept edges are labeled by
    score tertiles (binary mode: median split). Node indices are compact
    positions within the masked row set.
    """
    if k_top < 1:
        raise ConfigError(f"k_top {k_top} must be >= 1")
    if mask is None:
        mask = (np.abs(h_s.data) > 0).any(axis=1).astype(np.int64)
    idx = np.flatnonzero(mask)
    k = len(idx)
    if k < 2:
        raise ShapeError("build_homogeneous_graph needs >= 2 masked rows")
    compact = ad.constant(h_s.data[idx])
    projected = mlp.apply(compact)
    scores = ad.row_softmax(ad.matmul(projected, ad.transpose(projected))).data

    kept: list[tuple[int, int, float]] = []
    n_out = min(k_top, k - 1)
    for r in range(k):
        row = scores[r].copy()
        row[r] = -np.inf  # no self-edges
        best = sorted(range(k), key=lambda c: (-row[c], c))[:n_out]
        kept.extend((r, c, float(scores[r, c])) for c in best)

    kept.sort(key=lambda e: (-e[2], e[0], e[1]))
    m = len(kept)
    edges: list[WeightedEdge] = []
    for pos, (r, c, s) in enumerate(kept):
        if label_mode == "multi":
            if pos * 3 < m:
                lab = EdgeLabel.HIGH
            elif pos * 3 < 2 * m:
                lab = EdgeLabel.MID
            else:
                lab = EdgeLabel.LOW
        else:
            lab = EdgeLabel.HIGH if pos * 2 < m else EdgeLabel.LOW
        edges.append((r, c, s, lab))
    return HomogeneousGraph(node_count=k, edges=tuple(edges), side=side, label_mode=label_mode)


def augment_homogeneous(g: HomogeneousGraph, kind: str, p: float, seed: int) -> HomogeneousGraph:
    """Edge removals / additions mirroring the bipartite augmentation."""
    if not 0.0 <= p <= 0.5:
        raise ConfigError(f"augmentation probability {p} outside [0, 0.5]")
    if kind not in ("remove", "add"):
        raise ConfigError(f"unknown augmentation kind {kind!r}")
    rng = stream(seed, "augment_homogeneous", g.side, kind)
    if kind == "remove":
        keep = rng.random(len(g.edges)) >= p
        return g.replace_edges(tuple(e for e, k in zip(g.edges, keep) if k))
    n_new = int(p * len(g.edges))
    if n_new == 0:
        return g.replace_edges(g.edges)
    existing = {(s, d) for s, d, _, _ in g.edges}
    counts: dict[EdgeLabel, int] = {lab: 0 for lab in g.labels}
    for _, _, _, lab in g.edges:
        counts[lab] += 1
    probs = [counts[lab] / len(g.edges) for lab in g.labels]
    mean_score = float(np.mean([s for _, _, s, _ in g.edges]))
    new: list[WeightedEdge] = []
    chosen: set[tuple[int, int]] = set()
    attempts = 0
    while len(new) < n_new and attempts < 100 * n_new + 100:
        attempts += 1
        s = int(rng.integers(g.node_count))
        d = int(rng.integers(g.node_count))
        if s == d or (s, d) in existing or (s, d) in chosen:
            continue
        lab = g.labels[rng.choice(len(g.labels), p=probs)]
        chosen.add((s, d))
        new.append((s, d, mean_score, lab))
    return g.replace_edges(g.edges + tuple(new))


def partition_homogeneous(g: HomogeneousGraph) -> dict[EdgeLabel, HomogeneousGraph]:
    parts = {}
    for lab in g.labels:
        sub = tuple(e for e in g.edges if e[3] == lab)
        parts[lab] = g.replace_edges(sub)
    return parts


def normalize_homogeneous_adjacency(g: HomogeneousGraph) -> Tensor:
    """Symmetrized binarized adjacency, then D^{-1/2}(A+I)D^{-1/2}."""
    a = np.eye(g.node_count)
    for s, d, _, _ in g.edges:
        a[s, d] = 1.0
        a[d, s] = 1.0
    d_inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return Tensor(a * d_inv_sqrt[:, None] * d_inv_sqrt[None, :], name=f"adj.{g.side}")


def subtask_loss(
    probs: Tensor,
    targets: Tensor,
    z_s_user: Tensor,
    z_s_item: Tensor,
    z_m_user: Tensor,
    z_m_item: Tensor,
    user_mask: np.ndarray,
    item_mask: np.ndarray,
) -> Tensor:
    """Hard-edge cross-entropy plus masked-discrepancy regularizers."""
    loss = cross_entropy_sum(probs, targets)
    reg_u = ad.squared_l2(ad.subtract(mask_extract(z_m_user, user_mask), z_s_user))
    reg_i = ad.squared_l2(ad.subtract(mask_extract(z_m_item, item_mask), z_s_item))
    return ad.add(loss, ad.add(reg_u, reg_i))


@dataclass
class SubtaskResult:
    z_user: np.ndarray  # full |U| x d, zero on unmasked rows
    z_item: np.ndarray
    losses: list[float]
    components: dict[str, float] | None = None
    skipped: bool = False


class _SidePipeline:
    """Encoders + mergers + aggregation for one homogeneous side."""

    def __init__(self, g, h0_values, config, rng_seed, side):
        self.side = side
        self.graph = g
        dim = config.dim
        rng_init = stream(rng_seed, "subtask_init", side)
        p = config.p_augment
        kinds = {"mixed": ("remove", "add"), "remove": ("remove", "remove"),
                 "add": ("add", "add")}[config.augment_mode]
        g_t = augment_homogeneous(g, kinds[0], p, rng_seed)
        g_t2 = augment_homogeneous(g, kinds[1], p, rng_seed + 1)
        self.parts_t = partition_homogeneous(g_t)
        self.parts_t2 = partition_homogeneous(g_t2)
        self.adj_t = {lab: normalize_homogeneous_adjacency(sub) for lab, sub in self.parts_t.items()}
        self.adj_t2 = {lab: normalize_homogeneous_adjacency(sub) for lab, sub in self.parts_t2.items()}
        labels = g.labels
        # the transferred prior stays fixed: refinement capacity lives in the
        # shared encoder/aggregation parameters, so the pass can only learn
        # structure shared across nodes, never memorize a single edge
        self.h0 = ad.constant(h0_values, name=f"sub.{side}.h0")
        self.encoders = {
            lab: GcnEncoder(dim, config.gcn_layers, lab, stream(rng_seed, "subtask_enc", side, lab.name),
                            activation=config.activation)
            for lab in labels
        }
        self.merger = make_merger(config.agg_method, dim, rng_init, roles=(side,))
        self.proj = ProjectionHead(dim, rng_init, name=f"sub.{side}.proj")
        self.label_agg = make_label_aggregator(config.agg_method, dim, labels, rng_init, roles=(side,))

    def parameters(self):
        params = []
        for enc in self.encoders.values():
            params.extend(enc.parameters())
        params.extend(self.merger.parameters())
        params.extend(self.proj.parameters())
        params.extend(self.label_agg.parameters())
        return params

    def forward(self, temperature, cross_sign, with_losses: bool = True):
        empty = ad.zeros(0, self.h0.cols)
        h0 = (
            NodeEmbeddings(user=self.h0, item=empty, tag=self.side)
            if self.side == "user"
            else NodeEmbeddings(user=empty, item=self.h0, tag=self.side)
        )
        same_losses = {}
        merged = {}
        projections = {}
        active = {lab for lab, sub in self.parts_t.items() if sub.edges}
        for lab, enc in self.encoders.items():
            h_t = gcn_forward(enc, self.adj_t[lab], h0, tag=f"{lab.name}:t")
            h_t2 = gcn_forward(enc, self.adj_t2[lab], h0, tag=f"{lab.name}:t2")
            if with_losses and lab in active:
                same_losses[lab] = contrastive.same_encoder_loss(h_t, h_t2, temperature)
            merged[lab] = self.merger.merge(h_t, h_t2)
            if with_losses and lab in active:
                projections[lab] = project(merged[lab], self.proj)
        l_sp = contrastive.sum_augmentation_losses(same_losses)
        if len(projections) >= 2:
            l_sc = contrastive.cross_encoder_loss(projections, temperature, cross_sign)
        else:
            l_sc = ad.scalar(0.0)
        z = self.label_agg.aggregate(merged)
        return l_sp, l_sc, (z.user if self.side == "user" else z.item)


def run_subtask(
    hard: HardSampleSet,
    z_main_user: np.ndarray,
    z_main_item: np.ndarray,
    config,
    seed: int,
    head_init: dict[str, np.ndarray] | None = None,
) -> SubtaskResult:
    """Train the user-user / item-item refinement pass and return Z^S.

    Returns full-shape matrices that are zero outside the masked rows. With
    zero epochs (or too few masked nodes to build a graph) Z^S is exactly the
    masked main-task embeddings. `head_init` installs a frozen copy of the
    main prediction head as the dedicated hard-edge classifier, so the
    refined representations must stay readable by the classifier that will
    consume the fused rows; without it a fresh trainable head is used.
    """
    user_idx = np.flatnonzero(hard.user_mask)
    item_idx = np.flatnonzero(hard.item_mask)
    masked_user = np.zeros_like(z_main_user)
    masked_item = np.zeros_like(z_main_item)
    masked_user[user_idx] = z_main_user[user_idx]
    masked_item[item_idx] = z_main_item[item_idx]

    if len(user_idx) < 2 or len(item_idx) < 2:
        warnings.warn("too few masked nodes; subtask skipped", stacklevel=2)
        return SubtaskResult(z_user=masked_user, z_item=masked_item, losses=[], skipped=True)
    if config.epochs_subtask == 0:
        return SubtaskResult(z_user=masked_user, z_item=masked_item, losses=[])

    rng_graph = stream(seed, "subtask_graph")
    mlp_u = ProjectionHead(config.dim, rng_graph, name="sub.graph.user")
    mlp_i = ProjectionHead(config.dim, rng_graph, name="sub.graph.item")
    g_user = build_homogeneous_graph(
        ad.constant(z_main_user), config.k_top, mlp_u, "user",
        mask=hard.user_mask, label_mode=config.label_mode,
    )
    g_item = build_homogeneous_graph(
        ad.constant(z_main_item), config.k_top, mlp_i, "item",
        mask=hard.item_mask, label_mode=config.label_mode,
    )

    side_u = _SidePipeline(g_user, z_main_user[user_idx], config, seed, "user")
    side_i = _SidePipeline(g_item, z_main_item[item_idx], config, seed, "item")

    # hard edges in compact coordinates; every endpoint is masked by construction
    u_pos = {int(u): k for k, u in enumerate(user_idx)}
    i_pos = {int(i): k for k, i in enumerate(item_idx)}
    hard_edges = tuple((u_pos[u], i_pos[i], lab) for u, i, lab in hard.edges)
    labels = LABELS_MULTI if config.label_mode == "multi" else LABELS_BINARY
    targets = ad.constant(one_hot(hard_edges, labels))
    if head_init is not None:
        # a frozen copy of the main head: the refined representations must
        # become readable by the classifier that will consume the fused rows
        head = PredictionHead.from_arrays(
            head_init["w1"], head_init["b1"], head_init["w2"], head_init["b2"],
            trainable=False,
        )
        head_params: list = []
    else:
        head = PredictionHead(config.dim, len(labels), stream(seed, "subtask_head"))
        head_params = head.parameters()
    zm_user_c = ad.constant(z_main_user[user_idx])
    zm_item_c = ad.constant(z_main_item[item_idx])
    ones_u = np.ones(len(user_idx), dtype=np.int64)
    ones_i = np.ones(len(item_idx), dtype=np.int64)

    params = side_u.parameters() + side_i.parameters() + head_params
    opt = AdamState(
        params,
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        epsilon=config.adam_epsilon,
    )

    losses: list[float] = []
    components = {"l_sp": 0.0, "l_sc": 0.0, "l_s": 0.0}
    for epoch in range(config.epochs_subtask):
        try:
            with ad.Tape() as tape:
                l_sp_u, l_sc_u, z_u = side_u.forward(config.temperature, config.cross_loss_sign)
                l_sp_i, l_sc_i, z_i = side_i.forward(config.temperature, config.cross_loss_sign)
                l_sp = ad.add(l_sp_u, l_sp_i)
                l_sc = ad.add(l_sc_u, l_sc_i)
                probs = predict_edges(z_u, z_i, hard_edges, head)
                l_s = subtask_loss(probs, targets, z_u, z_i, zm_user_c, zm_item_c, ones_u, ones_i)
                stage = ad.add(
                    ad.scale(ad.add(l_sp, l_sc), config.mu), ad.scale(l_s, config.gamma)
                )
                losses.append(stage.item())
                components = {"l_sp": l_sp.item(), "l_sc": l_sc.item(), "l_s": l_s.item()}
                ad.backward(tape, stage)
            adam_step(opt)
        except NumericError as err:
            raise NumericError(f"subtask diverged at epoch {epoch}: {err}") from err

    # final representations from the trained parameters
    _, _, z_u = side_u.forward(config.temperature, config.cross_loss_sign, with_losses=False)
    _, _, z_i = side_i.forward(config.temperature, config.cross_loss_sign, with_losses=False)
    z_user_full = np.zeros_like(z_main_user)
    z_item_full = np.zeros_like(z_main_item)
    z_user_full[user_idx] = z_u.data
    z_item_full[item_idx] = z_i.data
    return SubtaskResult(
        z_user=z_user_full, z_item=z_item_full, losses=losses, components=components
    )
