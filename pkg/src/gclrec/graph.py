"""Bipartite user-item graphs: ingestion, splitting, augmentation, synthesis.

Edge lists are TSV (`user_id<TAB>item_id<TAB>rating`, ratings 1-5, `#`
comments ignored). Ratings bucket to Low (1-2) / Mid (3) / High (4-5); in
binary mode rating-3 edges are dropped. Nodes with degree < 3 are removed
iteratively until a fixpoint. All graph values are immutable; every stochastic
operation takes an explicit seed.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, ContractError, DataError
from .rng import stream

MIN_DEGREE = 3


class EdgeLabel(enum.IntEnum):
    LOW = 0
    MID = 1
    HIGH = 2


LABELS_MULTI = (EdgeLabel.LOW, EdgeLabel.MID, EdgeLabel.HIGH)
LABELS_BINARY = (EdgeLabel.LOW, EdgeLabel.HIGH)

_LABEL_TO_RATING = {EdgeLabel.LOW: 1, EdgeLabel.MID: 3, EdgeLabel.HIGH: 5}


def bucket_rating(rating: int, label_mode: str) -> EdgeLabel | None:
    """Map a 1-5 rating to its label; None means dropped (3 in binary mode)."""
    if rating <= 2:
        return EdgeLabel.LOW
    if rating == 3:
        return EdgeLabel.MID if label_mode == "multi" else None
    return EdgeLabel.HIGH


Edge = tuple[int, int, EdgeLabel]


@dataclass(frozen=True)
class BipartiteGraph:
    user_count: int
    item_count: int
    edges: tuple[Edge, ...]
    user_ids: tuple[str, ...] = ()
    item_ids: tuple[str, ...] = ()
    label_mode: str = "multi"

    def __post_init__(self):
        if self.label_mode not in ("multi", "binary"):
            raise ConfigError(f"unknown label mode {self.label_mode!r}")
        seen = set()
        allowed = set(self.labels)
        for u, i, lab in self.edges:
            if not (0 <= u < self.user_count and 0 <= i < self.item_count):
                raise DataError(f"edge ({u}, {i}) out of node range")
            if lab not in allowed:
                raise DataError(f"label {lab!r} not allowed in {self.label_mode} mode")
            if (u, i) in seen:
                raise DataError(f"duplicate edge ({u}, {i})")
            seen.add((u, i))

    @property
    def labels(self) -> tuple[EdgeLabel, ...]:
        return LABELS_MULTI if self.label_mode == "multi" else LABELS_BINARY

    @property
    def node_count(self) -> int:
        return self.user_count + self.item_count

    def degrees(self) -> tuple[np.ndarray, np.ndarray]:
        du = np.zeros(self.user_count, dtype=np.int64)
        di = np.zeros(self.item_count, dtype=np.int64)
        for u, i, _ in self.edges:
            du[u] += 1
            di[i] += 1
        return du, di

    def label_counts(self) -> dict[EdgeLabel, int]:
        counts = {lab: 0 for lab in self.labels}
        for _, _, lab in self.edges:
            counts[lab] += 1
        return counts

    def replace_edges(self, edges: tuple[Edge, ...]) -> "BipartiteGraph":
        return BipartiteGraph(
            self.user_count, self.item_count, edges, self.user_ids, self.item_ids, self.label_mode
        )


@dataclass(frozen=True)
class SplitGraphs:
    train: BipartiteGraph
    validation: BipartiteGraph
    test: BipartiteGraph


def ingest_edge_list(path: str, mode: str = "multi") -> BipartiteGraph:
    """Read, bucket and degree-filter a TSV edge list."""
    if mode not in ("multi", "binary"):
        raise ConfigError(f"unknown label mode {mode!r}")
    raw: dict[tuple[str, str], EdgeLabel] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            uid, iid, rating_text = parts
            try:
                rating = int(rating_text)
            except ValueError:
                raise DataError(f"{path}:{lineno}: rating {rating_text!r} is not an integer")
            if not 1 <= rating <= 5:
                raise DataError(f"{path}:{lineno}: rating {rating} outside 1..5")
            label = bucket_rating(rating, mode)
            if label is None:
                raw.pop((uid, iid), None)
                continue
            # last occurrence wins; first-seen position is kept
            raw[(uid, iid)] = label

    edges = list(raw.items())
    # degree-3 filter to fixpoint so the per-user split precondition holds
    while True:
        du: dict[str, int] = {}
        di: dict[str, int] = {}
        for (uid, iid), _ in edges:
            du[uid] = du.get(uid, 0) + 1
            di[iid] = di.get(iid, 0) + 1
        bad_u = {u for u, d in du.items() if d < MIN_DEGREE}
        bad_i = {i for i, d in di.items() if d < MIN_DEGREE}
        if not bad_u and not bad_i:
            break
        edges = [e for e in edges if e[0][0] not in bad_u and e[0][1] not in bad_i]
    if not edges:
        raise DataError(f"{path}: graph is empty after degree-{MIN_DEGREE} filtering")

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    indexed: list[Edge] = []
    for (uid, iid), label in edges:
        u = user_index.setdefault(uid, len(user_index))
        i = item_index.setdefault(iid, len(item_index))
        indexed.append((u, i, label))
    return BipartiteGraph(
        user_count=len(user_index),
        item_count=len(item_index),
        edges=tuple(indexed),
        user_ids=tuple(user_index),
        item_ids=tuple(item_index),
        label_mode=mode,
    )


def write_edge_list(graph: BipartiteGraph, path: str) -> None:
    """Serialize back to TSV with representative ratings 1/3/5."""
    uid = graph.user_ids or tuple(f"u{k}" for k in range(graph.user_count))
    iid = graph.item_ids or tuple(f"i{k}" for k in range(graph.item_count))
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, label in graph.edges:
            fh.write(f"{uid[u]}\t{iid[i]}\t{_LABEL_TO_RATING[label]}\n")


def split(graph: BipartiteGraph, seed: int) -> SplitGraphs:
    """Per-user 80/10/10 edge partition; every user keeps at least one train edge."""
    rng = stream(seed, "split")
    per_user: list[list[int]] = [[] for _ in range(graph.user_count)]
    for idx, (u, _, _) in enumerate(graph.edges):
        per_user[u].append(idx)
    buckets: list[str] = [""] * len(graph.edges)
    for u in range(graph.user_count):
        idxs = per_user[u]
        if not idxs:
            continue
        order = rng.permutation(len(idxs))
        e = len(idxs)
        n_train = max(1, min(e, round(0.8 * e)))
        rem = e - n_train
        n_val = math.ceil(rem / 2)
        for pos, k in enumerate(order):
            if pos < n_train:
                buckets[idxs[k]] = "train"
            elif pos < n_train + n_val:
                buckets[idxs[k]] = "validation"
            else:
                buckets[idxs[k]] = "test"
    parts = {
        name: tuple(e for e, b in zip(graph.edges, buckets) if b == name)
        for name in ("train", "validation", "test")
    }
    return SplitGraphs(
        train=graph.replace_edges(parts["train"]),
        validation=graph.replace_edges(parts["validation"]),
        test=graph.replace_edges(parts["test"]),
    )


def augment(graph: BipartiteGraph, kind: str, p: float, seed: int) -> BipartiteGraph:
    """Perturb a graph: independent edge removals, or floor(p*|E|) additions.

    Added edges are sampled uniformly from non-edges and labeled from the
    empirical label distribution of the source graph.
    """
    if not 0.0 <= p <= 0.5:
        raise ConfigError(f"augmentation probability {p} outside [0, 0.5]")
    if kind not in ("remove", "add"):
        raise ConfigError(f"unknown augmentation kind {kind!r}")
    rng = stream(seed, "augment", kind)
    if kind == "remove":
        keep = rng.random(len(graph.edges)) >= p
        return graph.replace_edges(tuple(e for e, k in zip(graph.edges, keep) if k))

    n_new = int(p * len(graph.edges))
    if n_new == 0:
        return graph.replace_edges(graph.edges)
    existing = {(u, i) for u, i, _ in graph.edges}
    if len(existing) + n_new > graph.user_count * graph.item_count:
        raise ConfigError("not enough non-edges to add")
    counts = graph.label_counts()
    total = len(graph.edges)
    probs = [counts[lab] / total for lab in graph.labels]
    new_edges: list[Edge] = []
    chosen: set[tuple[int, int]] = set()
    while len(new_edges) < n_new:
        u = int(rng.integers(graph.user_count))
        i = int(rng.integers(graph.item_count))
        if (u, i) in existing or (u, i) in chosen:
            continue
        lab = graph.labels[rng.choice(len(graph.labels), p=probs)]
        chosen.add((u, i))
        new_edges.append((u, i, lab))
    return graph.replace_edges(graph.edges + tuple(new_edges))


def partition_by_label(graph: BipartiteGraph) -> dict[EdgeLabel, BipartiteGraph]:
    """Split edges by label, keeping the full node index space in each part."""
    parts: dict[EdgeLabel, BipartiteGraph] = {}
    for lab in graph.labels:
        sub = tuple(e for e in graph.edges if e[2] == lab)
        if not sub:
            warnings.warn(f"label {lab.name} has no edges", stacklevel=2)
        parts[lab] = graph.replace_edges(sub)
    return parts


def normalize_adjacency(graph: BipartiteGraph) -> Tensor:
    """D^{-1/2} (A + I) D^{-1/2} over the users-then-items block adjacency."""
    n = graph.node_count
    a = np.eye(n)
    for u, i, _ in graph.edges:
        a[u, graph.user_count + i] = 1.0
        a[graph.user_count + i, u] = 1.0
    d_inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    normalized = a * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    return Tensor(normalized, name="adjacency")


def single_label_check(graph: BipartiteGraph, label: EdgeLabel) -> None:
    for _, _, lab in graph.edges:
        if lab != label:
            raise ContractError(f"graph carries label {lab.name}, expected {label.name}")


def synth_generate(
    users: int,
    items: int,
    clusters: int,
    noise: float,
    seed: int,
    label_mode: str = "multi",
) -> BipartiteGraph:
    """Generate a planted clustered graph with an ambiguous minority.

    Users and items are assigned to clusters; every within-cluster edge is
    High and every cross-cluster edge Low, except that cross edges into a
    random mid-tier item subset carry Mid (roughly a tenth of all edges), so
    all labels are structural. Most users are regular (8 within-cluster
    edges); a mixed minority also rates contested items of other clusters,
    which is what makes their predictions genuinely harder. Labels are then
    resampled uniformly with probability `noise`, and every node ends with
    degree >= 3.
    """
    if clusters < 2:
        raise ConfigError("synth_generate needs at least 2 clusters")
    if users < clusters * 4 or items < clusters * 4:
        raise ConfigError("synth_generate needs users, items >= clusters * 4")
    if not 0.0 <= noise <= 1.0:
        raise ConfigError(f"noise {noise} outside [0, 1]")
    if label_mode not in ("multi", "binary"):
        raise ConfigError(f"unknown label mode {label_mode!r}")
    labels = LABELS_MULTI if label_mode == "multi" else LABELS_BINARY
    rng = stream(seed, "synth")

    user_cluster = rng.permutation(np.arange(users) % clusters)
    item_cluster = rng.permutation(np.arange(items) % clusters)
    contested_of: list[np.ndarray] = []
    regular_of: list[np.ndarray] = []
    mid_items: set[int] = set()
    for c in range(clusters):
        pool = rng.permutation(np.flatnonzero(item_cluster == c))
        n_contested = max(1, int(round(0.3 * len(pool))))
        contested = pool[:n_contested]
        contested_of.append(contested)
        regular_of.append(pool[n_contested:] if len(pool) > n_contested else pool)
        if label_mode == "multi":
            n_mid = max(1, int(round(0.5 * len(contested))))
            mid_items.update(int(i) for i in contested[:n_mid])

    mixed = rng.random(users) < 0.3
    edges: dict[tuple[int, int], EdgeLabel] = {}

    def add_edges(u: int, pool: np.ndarray, count: int, label_for) -> None:
        if not len(pool):
            return
        picks = rng.choice(pool, size=min(count, len(pool)), replace=False)
        for i in picks:
            edges.setdefault((u, int(i)), label_for(int(i)))

    for u in range(users):
        c = int(user_cluster[u])
        if mixed[u]:
            add_edges(u, contested_of[c], 4, lambda i: EdgeLabel.HIGH)
            other_contested = np.concatenate(
                [contested_of[k] for k in range(clusters) if k != c]
            )
            add_edges(
                u, other_contested, 6,
                lambda i: EdgeLabel.MID if i in mid_items else EdgeLabel.LOW,
            )
        else:
            add_edges(u, regular_of[c], 8, lambda i: EdgeLabel.HIGH)

    # degree repair: every node needs >= MIN_DEGREE edges
    user_degree = np.zeros(users, dtype=np.int64)
    item_degree = np.zeros(items, dtype=np.int64)
    for (u, i) in edges:
        user_degree[u] += 1
        item_degree[i] += 1
    for u in range(users):
        c = int(user_cluster[u])
        own = np.flatnonzero(item_cluster == c)
        candidates = rng.permutation(own)
        k = 0
        while user_degree[u] < MIN_DEGREE and k < len(candidates):
            i = int(candidates[k])
            k += 1
            if (u, i) not in edges:
                edges[(u, i)] = EdgeLabel.HIGH
                user_degree[u] += 1
                item_degree[i] += 1
        if user_degree[u] < MIN_DEGREE:
            raise ConfigError(f"cannot reach degree {MIN_DEGREE} for user {u}")
    for i in range(items):
        c = int(item_cluster[i])
        candidates = rng.permutation(np.flatnonzero(user_cluster == c))
        k = 0
        while item_degree[i] < MIN_DEGREE and k < len(candidates):
            u = int(candidates[k])
            k += 1
            if (u, i) not in edges:
                edges[(u, i)] = EdgeLabel.HIGH
                item_degree[i] += 1
        if item_degree[i] < MIN_DEGREE:
            raise ConfigError(f"cannot reach degree {MIN_DEGREE} for item {i}")

    final: list[Edge] = []
    for (u, i), lab in edges.items():
        if noise > 0 and rng.random() < noise:
            lab = labels[rng.integers(len(labels))]
        final.append((u, i, lab))
    return BipartiteGraph(
        user_count=users,
        item_count=items,
        edges=tuple(final),
        user_ids=tuple(f"u{k}" for k in range(users)),
        item_ids=tuple(f"i{k}" for k in range(items)),
        label_mode=label_mode,
    )
