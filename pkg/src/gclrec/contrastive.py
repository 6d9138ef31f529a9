"""Same-encoder and cross-encoder contrastive losses.

Both losses are the InfoNCE form over cosine similarities: positives pair the
same node across the two inputs, negatives are the remaining nodes of the
same role. Every pairwise-similarity evaluation is counted per stage so the
main-task/subtask cost ratio can be audited.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import NodeEmbeddings
from .errors import ShapeError

_counters: dict[str, int] = {}
_stage = "default"


def set_counter_stage(stage: str) -> None:
    global _stage
    _stage = stage


def reset_counters() -> None:
    _counters.clear()


def counters() -> dict[str, int]:
    return dict(_counters)


def _count(n_pairs: int) -> None:
    _counters[_stage] = _counters.get(_stage, 0) + n_pairs


def info_nce(anchor: Tensor, counterpart: Tensor, temperature: float = 1.0) -> Tensor:
    """Mean over anchors of -log[ exp(s_ii) / sum_{j != i} exp(s_ij) ]."""
    if anchor.shape != counterpart.shape:
        raise ShapeError(f"info_nce: {anchor.shape} vs {counterpart.shape}")
    m = anchor.rows
    if m < 2:
        raise ShapeError("info_nce needs at least 2 rows")
    _count(m * m)
    sims = ad.matmul(ad.normalize_rows(anchor), ad.transpose(ad.normalize_rows(counterpart)))
    if temperature != 1.0:
        sims = ad.scale(sims, 1.0 / temperature)
    diag = ad.constant(np.eye(m))
    off = ad.constant(1.0 - np.eye(m))
    denom = ad.log(ad.row_sums(ad.multiply(ad.exp(sims), off)))
    pos = ad.row_sums(ad.multiply(sims, diag))
    return ad.mean_rows(ad.subtract(denom, pos))


def _role_terms(pair_a: NodeEmbeddings, pair_b: NodeEmbeddings, temperature: float) -> list[Tensor]:
    terms = []
    for role in ("item", "user"):
        a, b = getattr(pair_a, role), getattr(pair_b, role)
        if a.rows != b.rows:
            raise ShapeError(f"{role} rows differ: {a.rows} vs {b.rows}")
        if a.rows >= 2:
            terms.append(info_nce(a, b, temperature))
        elif a.rows == 1:
            warnings.warn(f"single-node {role} role skipped in contrastive loss", stacklevel=3)
    return terms


def _sum(terms: list[Tensor]) -> Tensor:
    if not terms:
        return ad.scalar(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


def same_encoder_loss(
    pair_t: NodeEmbeddings, pair_t2: NodeEmbeddings, temperature: float = 1.0
) -> Tensor:
    """Augmentation-level loss: item term plus user term for one label."""
    return _sum(_role_terms(pair_t, pair_t2, temperature))


def sum_augmentation_losses(per_label: dict) -> Tensor:
    """Total over labels; missing (edgeless) labels simply contribute nothing."""
    return _sum([per_label[k] for k in sorted(per_label)])


def cross_encoder_loss(
    projections: dict, temperature: float = 1.0, sign: str = "attract"
) -> Tensor:
    """Label-level loss summed over all ordered label pairs.

    `attract` keeps the displayed formula (cross-label same-node positives);
    `repel` negates it for ablation.
    """
    labels = sorted(projections)
    if len(labels) < 2:
        warnings.warn("cross_encoder_loss needs >= 2 labels; returning 0", stacklevel=2)
        return ad.scalar(0.0)
    terms: list[Tensor] = []
    for a in labels:
        for b in labels:
            if a != b:
                terms.extend(_role_terms(projections[a], projections[b], temperature))
    total = _sum(terms)
    return ad.scale(total, -1.0) if sign == "repel" else total


def info_nce_from_sims(sims: np.ndarray) -> float:
    """Reference value of the loss for a given similarity matrix (probe hook)."""
    m = sims.shape[0]
    off = np.exp(sims) * (1.0 - np.eye(m))
    return float(np.mean(np.log(off.sum(axis=1)) - np.diag(sims)))
