"""Three-stage training driver.

Stage 1 trains the holistic model on the train split (contrastive terms plus
the prediction loss, weighted by alpha/beta). Stage 2 mines hard edges by
prediction entropy and trains the homogeneous refinement pass (mu/gamma).
Stage 3 tunes only the fusion weights and the prediction head against the
validation cross-entropy; everything else stays frozen. The weighted sum of
all stage losses is reported as a diagnostic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import contrastive
from .aggregation import ProjectionHead, make_label_aggregator, make_merger, project
from .autodiff import Tensor
from .config import TrainConfig
from .encoders import GcnEncoder, NodeEmbeddings, gcn_forward
from .errors import NumericError
from .graph import BipartiteGraph, augment, normalize_adjacency, partition_by_label, split
from .link_prediction import Metrics, PredictionHead, cross_entropy_sum, evaluate, one_hot, predict_edges
from .optim import AdamState, adam_step
from .rng import stream
from .subtask import HardSampleSet, SubtaskResult, edge_entropy, run_subtask, select_hard


@dataclass
class StageLosses:
    l_mp: float = 0.0
    l_mc: float = 0.0
    l_m: float = 0.0
    l_sp: float = 0.0
    l_sc: float = 0.0
    l_s: float = 0.0
    l_v: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("l_mp", "l_mc", "l_m", "l_sp", "l_sc", "l_s", "l_v")}


def total_loss(components: StageLosses, config: TrainConfig) -> float:
    """Weighted sum of every stage loss (diagnostic; stages optimize their own terms)."""
    c = components
    return (
        config.alpha * (c.l_mp + c.l_mc)
        + config.beta * c.l_m
        + config.mu * (c.l_sp + c.l_sc)
        + config.gamma * c.l_s
        + c.l_v
    )


class FusionWeights:
    """Per-role softmax pair (W^S, W^M) blending subtask and main rows."""

    def __init__(self):
        self.params = {
            role: ad.parameter(np.zeros((1, 2)), name=f"fusion.{role}")
            for role in ("user", "item")
        }

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def pair(self, role: str) -> tuple[Tensor, Tensor]:
        w = ad.row_softmax(self.params[role])
        return ad.column(w, 0), ad.column(w, 1)


def fuse(z_m: Tensor, z_s: Tensor, mask: np.ndarray, weights: tuple[Tensor, Tensor]) -> Tensor:
    """Blend masked rows as W^S z_s + W^M z_m; unmasked rows pass z_m through exactly."""
    col = np.asarray(mask, dtype=np.float64).reshape(-1, 1)
    w_s, w_m = weights
    blended = ad.add(ad.multiply(w_s, z_s), ad.multiply(w_m, z_m))
    return ad.add(
        ad.multiply(ad.constant(col), blended),
        ad.multiply(ad.constant(1.0 - col), z_m),
    )


class MainTaskModel:
    """Parameters and forward pass of the holistic stage."""

    def __init__(self, g_train: BipartiteGraph, config: TrainConfig, seed: int):
        self.config = config
        self.graph = g_train
        dim = config.dim
        labels = g_train.labels
        n = g_train.node_count
        rng = stream(seed, "main_init")
        if config.per_label_h0:
            self.h0_tables = {
                lab: ad.xavier_uniform(n, dim, stream(seed, "main_h0", lab.name), name=f"h0.{lab.name}")
                for lab in labels
            }
        else:
            table = ad.xavier_uniform(n, dim, stream(seed, "main_h0"), name="h0")
            self.h0_tables = {lab: table for lab in labels}
        self.encoders = {
            lab: GcnEncoder(dim, config.gcn_layers, lab, stream(seed, "main_enc", lab.name),
                            activation=config.activation)
            for lab in labels
        }
        self.merger = make_merger(config.agg_method, dim, rng)
        self.proj = ProjectionHead(dim, rng)
        self.label_agg = make_label_aggregator(config.agg_method, dim, labels, rng)
        self.head = PredictionHead(dim, len(labels), stream(seed, "main_head"))

        kinds = {"mixed": ("remove", "add"), "remove": ("remove", "remove"),
                 "add": ("add", "add")}[config.augment_mode]
        g_t = augment(g_train, kinds[0], config.p_augment, seed)
        g_t2 = augment(g_train, kinds[1], config.p_augment, seed + 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # edgeless labels are expected on tiny graphs
            self.parts_t = partition_by_label(g_t)
            self.parts_t2 = partition_by_label(g_t2)
        self.adj_t = {lab: normalize_adjacency(g) for lab, g in self.parts_t.items()}
        self.adj_t2 = {lab: normalize_adjacency(g) for lab, g in self.parts_t2.items()}
        self.active = {lab for lab in labels if any(e[2] == lab for e in g_train.edges)}

        self._user_mask = np.zeros(n)
        self._user_mask[: g_train.user_count] = 1

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        seen: set[int] = set()
        for t in self.h0_tables.values():
            if id(t) not in seen:
                seen.add(id(t))
                params.append(t)
        for enc in self.encoders.values():
            params.extend(enc.parameters())
        params.extend(self.merger.parameters())
        params.extend(self.proj.parameters())
        params.extend(self.label_agg.parameters())
        params.extend(self.head.parameters())
        return params

    def _h0(self, lab) -> NodeEmbeddings:
        table = self.h0_tables[lab]
        user = ad.row_select(table, self._user_mask)
        item = ad.row_select(table, 1 - self._user_mask)
        return NodeEmbeddings(user=user, item=item, tag="h0")

    def forward(self, with_losses: bool = True):
        cfg = self.config
        same_losses = {}
        merged = {}
        projections = {}
        for lab, enc in self.encoders.items():
            h0 = self._h0(lab)
            h_t = gcn_forward(enc, self.adj_t[lab], h0, tag=f"{lab.name}:t")
            h_t2 = gcn_forward(enc, self.adj_t2[lab], h0, tag=f"{lab.name}:t2")
            if with_losses and lab in self.active:
                same_losses[lab] = contrastive.same_encoder_loss(h_t, h_t2, cfg.temperature)
            merged[lab] = self.merger.merge(h_t, h_t2)
            if with_losses and lab in self.active:
                projections[lab] = project(merged[lab], self.proj)
        l_mp = contrastive.sum_augmentation_losses(same_losses)
        if len(projections) >= 2:
            l_mc = contrastive.cross_encoder_loss(projections, cfg.temperature, cfg.cross_loss_sign)
        else:
            l_mc = ad.scalar(0.0)
        z = self.label_agg.aggregate(merged)
        return l_mp, l_mc, z


@dataclass
class MainTaskResult:
    z_user: np.ndarray
    z_item: np.ndarray
    probs: np.ndarray  # over the training edges, in edge order
    losses: list[float]
    components: dict[str, float]
    model: MainTaskModel


def run_main_task(g_train: BipartiteGraph, config: TrainConfig, seed: int) -> MainTaskResult:
    """Train the holistic stage for epochs_main epochs and return final state."""
    from .link_prediction import main_loss  # local import keeps module load light

    model = MainTaskModel(g_train, config, seed)
    targets = ad.constant(one_hot(g_train.edges, g_train.labels))
    gathers = _edge_gathers(g_train.edges, g_train.user_count, g_train.item_count)
    opt = AdamState(
        model.parameters(),
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        epsilon=config.adam_epsilon,
    )
    losses: list[float] = []
    components = {"l_mp": 0.0, "l_mc": 0.0, "l_m": 0.0}
    for epoch in range(config.epochs_main):
        try:
            with ad.Tape() as tape:
                l_mp, l_mc, z = model.forward()
                probs = predict_edges(z.user, z.item, g_train.edges, model.head, gathers=gathers)
                l_m = main_loss(probs, targets, z.user, z.item, config.eta)
                stage = ad.add(
                    ad.scale(ad.add(l_mp, l_mc), config.alpha), ad.scale(l_m, config.beta)
                )
                losses.append(stage.item())
                components = {"l_mp": l_mp.item(), "l_mc": l_mc.item(), "l_m": l_m.item()}
                ad.backward(tape, stage)
            adam_step(opt)
        except NumericError as err:
            raise NumericError(f"main task diverged at epoch {epoch}: {err}") from err

    _, _, z = model.forward(with_losses=False)
    probs = predict_edges(z.user, z.item, g_train.edges, model.head, gathers=gathers)
    return MainTaskResult(
        z_user=z.user.data.copy(),
        z_item=z.item.data.copy(),
        probs=probs.data.copy(),
        losses=losses,
        components=components,
        model=model,
    )


def _edge_gathers(edges, user_count: int, item_count: int):
    take_u = ad.gather_matrix([e[0] for e in edges], user_count, name="gather.users")
    take_i = ad.gather_matrix([e[1] for e in edges], item_count, name="gather.items")
    return take_u, take_i


@dataclass
class RunResult:
    seed: int
    config: TrainConfig
    metrics: Metrics | None
    stage_losses: StageLosses
    total: float
    main_losses: list[float] = field(default_factory=list)
    subtask_losses: list[float] = field(default_factory=list)
    validation_losses: list[float] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    per_epoch_counters: dict[str, int] = field(default_factory=dict)
    hard_edge_count: int = 0
    masked_users: int = 0
    masked_items: int = 0
    z_user: np.ndarray | None = None
    z_item: np.ndarray | None = None
    checkpoint_tensors: dict[str, np.ndarray] = field(default_factory=dict)
    hard: HardSampleSet | None = None


def run_framework(graph: BipartiteGraph, config: TrainConfig, seed: int) -> RunResult:
    """Full pipeline for one seed: split, main task, hard mining, subtask,
    validation-stage tuning, test evaluation."""
    contrastive.reset_counters()
    splits = split(graph, seed)
    g_train = splits.train
    labels = graph.labels

    contrastive.set_counter_stage("main")
    if config.ablation == "no_main":
        # untrained stand-in: random representations and a fresh head
        model = MainTaskModel(g_train, config.replace(epochs_main=0), seed)
        rng = stream(seed, "no_main")
        z_user = ad.xavier_uniform(g_train.user_count, config.dim, rng).data.copy()
        z_item = ad.xavier_uniform(g_train.item_count, config.dim, rng).data.copy()
        probs = predict_edges(
            ad.constant(z_user), ad.constant(z_item), g_train.edges, model.head
        ).data.copy()
        main = MainTaskResult(
            z_user=z_user, z_item=z_item, probs=probs, losses=[],
            components={"l_mp": 0.0, "l_mc": 0.0, "l_m": 0.0}, model=model,
        )
    else:
        main = run_main_task(g_train, config, seed)

    entropies = edge_entropy(main.probs, one_hot(g_train.edges, labels))
    hard = select_hard(
        entropies, config.epsilon_hard, g_train.edges, g_train.user_count, g_train.item_count
    )

    contrastive.set_counter_stage("subtask")
    if config.ablation == "no_subtask":
        sub = SubtaskResult(
            z_user=np.zeros_like(main.z_user),
            z_item=np.zeros_like(main.z_item),
            losses=[],
            skipped=True,
        )
        fusion_user_mask = np.zeros(g_train.user_count, dtype=np.int64)
        fusion_item_mask = np.zeros(g_train.item_count, dtype=np.int64)
    else:
        head = main.model.head
        head_init = {
            "w1": head.w1.data.copy(),
            "b1": head.b1.data.copy(),
            "w2": head.w2.data.copy(),
            "b2": head.b2.data.copy(),
        }
        sub = run_subtask(hard, main.z_user, main.z_item, config, seed, head_init=head_init)
        fusion_user_mask = hard.user_mask
        fusion_item_mask = hard.item_mask

    fusion = FusionWeights()
    zm_user_c = ad.constant(main.z_user, name="zm.user")
    zm_item_c = ad.constant(main.z_item, name="zm.item")
    zs_user_c = ad.constant(sub.z_user, name="zs.user")
    zs_item_c = ad.constant(sub.z_item, name="zs.item")

    def fused_pair() -> tuple[Tensor, Tensor]:
        f_user = fuse(zm_user_c, zs_user_c, fusion_user_mask, fusion.pair("user"))
        f_item = fuse(zm_item_c, zs_item_c, fusion_item_mask, fusion.pair("item"))
        return f_user, f_item

    contrastive.set_counter_stage("validation")
    validation_losses: list[float] = []
    l_v = 0.0
    val_edges = splits.validation.edges
    # the combination stage only exists when there are two views to combine;
    # no_validation keeps the stage but pins the combination at the uniform
    # average (no learned attention weights)
    combine = config.ablation != "no_subtask"
    if combine and config.epochs_validation > 0 and val_edges:
        val_targets = ad.constant(one_hot(val_edges, labels))
        val_gathers = _edge_gathers(val_edges, g_train.user_count, g_train.item_count)
        head = main.model.head
        stage_params = head.parameters()
        if config.ablation != "no_validation":
            stage_params = fusion.parameters() + stage_params
        opt = AdamState(
            stage_params,
            learning_rate=config.learning_rate,
            weight_decay=config.weight_decay,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            epsilon=config.adam_epsilon,
        )
        for epoch in range(config.epochs_validation):
            try:
                with ad.Tape() as tape:
                    f_user, f_item = fused_pair()
                    probs = predict_edges(f_user, f_item, val_edges, head, gathers=val_gathers)
                    loss = cross_entropy_sum(probs, val_targets)
                    validation_losses.append(loss.item())
                    ad.backward(tape, loss)
                adam_step(opt)
            except NumericError as err:
                raise NumericError(f"validation stage diverged at epoch {epoch}: {err}") from err
    elif combine and not val_edges:
        warnings.warn("empty validation split; fusion weights left at initialization", stacklevel=2)

    f_user, f_item = fused_pair()
    if val_edges:
        val_probs = predict_edges(f_user, f_item, val_edges, main.model.head)
        l_v = cross_entropy_sum(val_probs, ad.constant(one_hot(val_edges, labels))).item()

    metrics = None
    test_edges = splits.test.edges
    if test_edges:
        test_probs = predict_edges(f_user, f_item, test_edges, main.model.head).data
        metrics = evaluate(test_probs, [labels.index(e[2]) for e in test_edges], len(labels))
    else:
        warnings.warn("empty test split; no metrics computed", stacklevel=2)

    sub_components = sub.components or {"l_sp": 0.0, "l_sc": 0.0, "l_s": 0.0}
    stage_losses = StageLosses(
        l_mp=main.components["l_mp"],
        l_mc=main.components["l_mc"],
        l_m=main.components["l_m"],
        l_sp=sub_components["l_sp"],
        l_sc=sub_components["l_sc"],
        l_s=sub_components["l_s"],
        l_v=l_v,
    )
    counters = contrastive.counters()
    per_epoch = {}
    if config.epochs_main and counters.get("main"):
        per_epoch["main"] = counters["main"] // config.epochs_main
    if config.epochs_subtask and counters.get("subtask"):
        per_epoch["subtask"] = counters["subtask"] // config.epochs_subtask

    head = main.model.head
    ckpt = {
        "z_user": f_user.data.copy(),
        "z_item": f_item.data.copy(),
        "head.w1": head.w1.data.copy(),
        "head.b1": head.b1.data.copy(),
        "head.w2": head.w2.data.copy(),
        "head.b2": head.b2.data.copy(),
        "meta.seed": np.array([[float(seed)]]),
        "meta.label_mode": np.array([[0.0 if config.label_mode == "multi" else 1.0]]),
        "meta.dim": np.array([[float(config.dim)]]),
    }

    return RunResult(
        seed=seed,
        config=config,
        metrics=metrics,
        stage_losses=stage_losses,
        total=total_loss(stage_losses, config),
        main_losses=main.losses,
        subtask_losses=sub.losses,
        validation_losses=validation_losses,
        counters=counters,
        per_epoch_counters=per_epoch,
        hard_edge_count=len(hard.edges),
        masked_users=hard.masked_user_count,
        masked_items=hard.masked_item_count,
        z_user=f_user.data.copy(),
        z_item=f_item.data.copy(),
        checkpoint_tensors=ckpt,
        hard=hard,
    )
