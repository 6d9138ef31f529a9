import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import assert_grad_close
from gclrec import autodiff as ad
from gclrec import contrastive
from gclrec.contrastive import (
    cross_encoder_loss,
    info_nce,
    info_nce_from_sims,
    same_encoder_loss,
    sum_augmentation_losses,
)
from gclrec.encoders import NodeEmbeddings
from gclrec.graph import EdgeLabel


def emb(user, item, tag=""):
    return NodeEmbeddings(user=ad.constant(user), item=ad.constant(item), tag=tag)


def test_orthogonal_two_rows_is_exactly_minus_one():
    a = ad.constant([[1.0, 0.0], [0.0, 1.0]])
    assert info_nce(a, a).item() == pytest.approx(-1.0, abs=1e-12)


def test_same_encoder_loss_orthogonal_case():
    users = np.eye(2)
    items = np.eye(2)
    loss = same_encoder_loss(emb(users, items), emb(users, items))
    assert loss.item() == pytest.approx(-2.0, abs=1e-12)  # item term + user term


def test_uniform_similarity_degeneracy_gives_log_n_minus_1():
    n = 5
    mat = np.tile([[0.3, 0.4]], (n, 1))
    a = ad.constant(mat)
    assert info_nce(a, a).item() == pytest.approx(math.log(n - 1), abs=1e-12)


def test_row_rescaling_invariance(rng):
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(4, 3))
    base = info_nce(ad.constant(a), ad.constant(b)).item()
    scales_a = rng.uniform(0.1, 5.0, size=(4, 1))
    scales_b = rng.uniform(0.1, 5.0, size=(4, 1))
    scaled = info_nce(ad.constant(a * scales_a), ad.constant(b * scales_b)).item()
    assert scaled == pytest.approx(base, rel=1e-9)


def test_sum_augmentation_losses_adds_scalars():
    per_label = {
        EdgeLabel.HIGH: ad.scalar(1.0),
        EdgeLabel.MID: ad.scalar(2.0),
        EdgeLabel.LOW: ad.scalar(3.0),
    }
    assert sum_augmentation_losses(per_label).item() == pytest.approx(6.0)


def test_sum_augmentation_losses_with_missing_labels():
    assert sum_augmentation_losses({EdgeLabel.HIGH: ad.scalar(1.5)}).item() == pytest.approx(1.5)
    assert sum_augmentation_losses({}).item() == 0.0


def test_cross_encoder_loss_counts_ordered_pairs(rng):
    z = {lab: emb(rng.normal(size=(3, 2)), rng.normal(size=(4, 2))) for lab in EdgeLabel}
    total = cross_encoder_loss(z).item()
    by_hand = 0.0
    for a in EdgeLabel:
        for b in EdgeLabel:
            if a != b:
                by_hand += info_nce(z[a].item, z[b].item).item()
                by_hand += info_nce(z[a].user, z[b].user).item()
    assert total == pytest.approx(by_hand, rel=1e-12)


def test_cross_encoder_two_labels_two_pairs(rng):
    z = {
        EdgeLabel.LOW: emb(rng.normal(size=(3, 2)), rng.normal(size=(3, 2))),
        EdgeLabel.HIGH: emb(rng.normal(size=(3, 2)), rng.normal(size=(3, 2))),
    }
    total = cross_encoder_loss(z).item()
    pair = (
        info_nce(z[EdgeLabel.LOW].item, z[EdgeLabel.HIGH].item).item()
        + info_nce(z[EdgeLabel.LOW].user, z[EdgeLabel.HIGH].user).item()
        + info_nce(z[EdgeLabel.HIGH].item, z[EdgeLabel.LOW].item).item()
        + info_nce(z[EdgeLabel.HIGH].user, z[EdgeLabel.LOW].user).item()
    )
    assert total == pytest.approx(pair, rel=1e-12)


def test_cross_encoder_identical_projections_degenerate_value(rng):
    users = np.tile(rng.normal(size=(1, 3)), (5, 1))
    items = np.tile(rng.normal(size=(1, 3)), (6, 1))
    z = {lab: emb(users, items) for lab in EdgeLabel}
    total = cross_encoder_loss(z).item()
    # every ordered pair reduces to the uniform-similarity case per role
    want = 6 * (math.log(6 - 1) + math.log(5 - 1))
    assert total == pytest.approx(want, abs=1e-9)


def test_cross_encoder_single_label_warns_and_returns_zero(rng):
    z = {EdgeLabel.HIGH: emb(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))}
    with pytest.warns(UserWarning, match="2 labels"):
        assert cross_encoder_loss(z).item() == 0.0


def test_single_node_role_skipped_with_warning(rng):
    pair = emb(rng.normal(size=(4, 3)), rng.normal(size=(1, 3)))
    with pytest.warns(UserWarning, match="single-node"):
        loss = same_encoder_loss(pair, pair)
    users_only = info_nce(pair.user, pair.user).item()
    assert loss.item() == pytest.approx(users_only, rel=1e-12)


def test_empty_role_skipped_silently(rng):
    pair = emb(rng.normal(size=(4, 3)), np.zeros((0, 3)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        loss = same_encoder_loss(pair, pair)
    assert np.isfinite(loss.item())


def test_repel_sign_negates(rng):
    z = {
        EdgeLabel.LOW: emb(rng.normal(size=(3, 2)), rng.normal(size=(3, 2))),
        EdgeLabel.HIGH: emb(rng.normal(size=(3, 2)), rng.normal(size=(3, 2))),
    }
    attract = cross_encoder_loss(z, sign="attract").item()
    repel = cross_encoder_loss(z, sign="repel").item()
    assert repel == pytest.approx(-attract, rel=1e-12)


def test_temperature_scales_similarities(rng):
    a = ad.constant(rng.normal(size=(4, 3)))
    b = ad.constant(rng.normal(size=(4, 3)))
    hot = info_nce(a, b, temperature=0.5).item()
    base = info_nce(a, b, temperature=1.0).item()
    assert hot != pytest.approx(base)


@given(st.integers(0, 500))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(5, 3))
    b = rng.normal(size=(5, 3))
    base = info_nce(ad.constant(a), ad.constant(b)).item()
    perm = rng.permutation(5)
    permuted = info_nce(ad.constant(a[perm]), ad.constant(b[perm])).item()
    assert permuted == pytest.approx(base, rel=1e-9)


@given(st.integers(0, 500))
def test_loss_finite_for_finite_inputs(seed):
    rng = np.random.default_rng(seed)
    pair_a = emb(rng.uniform(-5, 5, (3, 4)), rng.uniform(-5, 5, (2, 4)))
    pair_b = emb(rng.uniform(-5, 5, (3, 4)), rng.uniform(-5, 5, (2, 4)))
    assert np.isfinite(same_encoder_loss(pair_a, pair_b).item())


def test_gradients_match_finite_differences(rng):
    anchor = ad.parameter(rng.uniform(-2, 2, (4, 3)))
    counter = ad.constant(rng.uniform(-2, 2, (4, 3)))
    assert_grad_close(anchor, lambda: info_nce(anchor, counter))


def test_counterpart_gradients_match_finite_differences(rng):
    anchor = ad.constant(rng.uniform(-2, 2, (4, 3)))
    counter = ad.parameter(rng.uniform(-2, 2, (4, 3)))
    assert_grad_close(counter, lambda: info_nce(anchor, counter))


@given(st.integers(0, 200), st.floats(0.01, 2.0))
def test_raising_positive_similarity_never_increases_loss(seed, bump):
    rng = np.random.default_rng(seed)
    sims = rng.uniform(-1, 1, (4, 4))
    bumped = sims.copy()
    i = rng.integers(4)
    bumped[i, i] = min(1.0, bumped[i, i] + bump)
    assert info_nce_from_sims(bumped) <= info_nce_from_sims(sims) + 1e-12


def test_sim_counter_counts_m_squared(rng):
    contrastive.reset_counters()
    contrastive.set_counter_stage("probe")
    a = ad.constant(rng.normal(size=(7, 3)))
    info_nce(a, a)
    assert contrastive.counters()["probe"] == 49
    pair = emb(rng.normal(size=(5, 3)), rng.normal(size=(4, 3)))
    same_encoder_loss(pair, pair)
    assert contrastive.counters()["probe"] == 49 + 25 + 16
    contrastive.reset_counters()
    contrastive.set_counter_stage("default")
