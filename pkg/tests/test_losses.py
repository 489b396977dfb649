import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference, rel_error
from robult.losses import (BatchSizeError, ConfigError, PairContext, PositiveSets, build_positive_sets,
                           discretize_labels, labelsets_to_ids, loss_lb, loss_pu, loss_rec, loss_sup,
                           loss_ulb, multilabel_positive, pair_weight, pair_weights, proximity,
                           proximity_matrix, reference_proximities, reference_proximity, v_matrix)
from robult.tensor import DegenerateRowError, Tensor

E = math.e


def unit_rows(rng, B, d):
    x = rng.standard_normal((B, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# -- brute-force oracle -------------------------------------------------------
def oracle_pu(S, Zs, lab, unl, weights, tau):
    """Loop-by-loop soft-PU terms, straight from the set definitions."""
    B = S.shape[0]
    lb = ulb = 0.0
    for i, Z in enumerate(Zs):
        for j in range(B):
            denom = sum(math.exp(S[j] @ Z[h] / tau) for h in range(B))
            logv = [math.log(math.exp(S[j] @ Z[k] / tau) / denom) for k in range(B)]
            pos = [k for k in range(B) if lab[j, k]]
            lb -= sum(logv[k] for k in pos) / len(pos)
            cand = [k for k in range(B) if unl[j, k]]
            if cand:
                ulb -= sum(weights[i][j, k] * logv[k] for k in cand) / len(cand)
    M = len(Zs)
    return lb / (M * B), ulb / (M * B)


# -- proximity / v ------------------------------------------------------------
def test_proximity_examples():
    assert proximity([1, 0], [1, 0], 1.0) == pytest.approx(E, rel=1e-12)
    assert proximity([1, 0], [0, 1], 1.0) == 1.0
    assert proximity([1, 0], [-1, 0], 0.5) == pytest.approx(0.1353352832366127, rel=1e-12)


def test_proximity_rejects_bad_tau():
    with pytest.raises(ConfigError):
        proximity([1, 0], [1, 0], 0.0)


def test_v_matrix_identical_rows_uniform():
    S = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
    Z = np.tile([[0.6, 0.8]], (3, 1))
    np.testing.assert_allclose(v_matrix(S, Z, 0.5), np.full((3, 3), 1 / 3), atol=1e-15)


def test_v_matrix_two_term_softmax():
    v = v_matrix(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]), 1.0)
    assert v[0, 0] == pytest.approx(E / (E + 1), rel=1e-12)
    assert v[0, 0] == pytest.approx(0.7310585786300049, rel=1e-12)


def test_v_matrix_rows_sum_to_one(rng):
    v = v_matrix(unit_rows(rng, 7, 5), unit_rows(rng, 7, 5), 0.1)
    np.testing.assert_allclose(v.sum(axis=1), 1.0, atol=1e-12)


def test_v_matrix_needs_two_rows():
    with pytest.raises(BatchSizeError):
        v_matrix(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), 1.0)


def test_v_matrix_stable_at_small_tau(rng):
    v = v_matrix(unit_rows(rng, 5, 3), unit_rows(rng, 5, 3), 1e-3)
    assert np.all(np.isfinite(v))


# -- positive sets --------------------------------------------------------------
def test_positive_sets_single_class_all_labeled():
    sets = build_positive_sets([0, 0, 0, 0], [1, 1, 1, 1])
    for j in range(4):
        assert sets.labeled_of(j) == {0, 1, 2, 3}
        assert sets.unlabeled_of(j) == set()


def test_positive_sets_no_labels_self_only():
    sets = build_positive_sets(None, [0, 0, 0, 0], pseudo_labels=[1, 1, 0, 1])
    for j in range(4):
        assert sets.labeled_of(j) == {j}
    assert sets.unlabeled_of(0) == {1, 3}
    assert sets.unlabeled_of(2) == set()


def test_positive_sets_hand_case():
    # labels {A, A, B}, labeled {1, 1, 0}, pseudo {-, -, A}
    A, Bc = 0, 1
    sets = build_positive_sets([A, A, Bc], [1, 1, 0], pseudo_labels=[-1, -1, A])
    assert sets.labeled_of(0) == {0, 1}
    assert sets.unlabeled_of(0) == {2}
    assert not (sets.labeled & sets.unlabeled).any()


def test_positive_sets_without_pseudo_labels_have_no_unlabeled_positives():
    sets = build_positive_sets([0, 0, 1, 1], [1, 0, 1, 0])
    assert not sets.unlabeled.any()
    assert sets.labeled_of(1) == {1}


def test_multilabel_positive():
    assert multilabel_positive({1, 3}, {1, 3})
    assert not multilabel_positive({1, 3}, {1})
    assert multilabel_positive(set(), set())
    ids = labelsets_to_ids([{1, 3}, {3, 1}, {1}, set()])
    assert ids[0] == ids[1] and len(set(ids.tolist())) == 3


# -- reference proximity and weights ------------------------------------------
def test_reference_proximity_examples():
    S = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    Z = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    single = PositiveSets(labeled=np.eye(3, dtype=bool), unlabeled=np.zeros((3, 3), bool))
    assert reference_proximity(0, S, Z, single, 1.0) == pytest.approx(E)
    two = single.labeled.copy()
    two[0, 1] = True  # partners at proximity e and 1
    sets = PositiveSets(two, single.unlabeled)
    assert reference_proximity(0, S, Z, sets, 1.0) == pytest.approx((E + 1) / 2)
    assert (E + 1) / 2 == pytest.approx(1.8591409142295225)
    three = single.labeled.copy()
    three[0, 2] = True
    assert reference_proximity(0, S, Z, PositiveSets(three, single.unlabeled), 1.0) == pytest.approx(E)
    phi = proximity_matrix(S, Z, 1.0)
    assert reference_proximities(phi, sets)[0] == pytest.approx((E + 1) / 2)


def test_pair_weight_examples():
    assert pair_weight(2.0, 2.0, "rbf", gamma=3.0) == 1.0
    assert pair_weight(2.0, 3.0, "rbf", gamma=1.0) == pytest.approx(0.36787944117144233)
    assert pair_weight(2.0, 5.0, "l1", max_dist=3.0) == 0.0
    assert pair_weight(2.0, 2.0, "l2", max_dist=3.0) == 1.0


def test_pair_weight_rejects_bad_gamma():
    with pytest.raises(ConfigError):
        pair_weight(1.0, 1.0, "rbf", gamma=0.0)


@settings(max_examples=50)
@given(ref=st.floats(0.1, 10), d1=st.floats(0, 5), d2=st.floats(0, 5), gamma=st.floats(0.01, 5))
def test_rbf_weight_monotone_and_bounded(ref, d1, d2, gamma):
    w1 = pair_weight(ref, ref + d1, "rbf", gamma)
    w2 = pair_weight(ref, ref - d2, "rbf", gamma)
    assert 0 < w1 <= 1 and 0 < w2 <= 1
    if gamma * d1 * d1 < 700 and gamma * d2 * d2 < 700 and abs(d1 - d2) > 1e-6:
        assert (w1 > w2) == (d1 < d2)


def test_percentile_filter_drops_low_weights(rng):
    S, Z = unit_rows(rng, 8, 4), unit_rows(rng, 8, 4)
    sets = build_positive_sets([0] * 8, [1, 1, 0, 0, 0, 0, 0, 0], pseudo_labels=[0] * 8)
    phi = proximity_matrix(S, Z, 0.5)
    w = pair_weights(phi, sets, gamma=1.0)
    wf = pair_weights(phi, sets, gamma=1.0, percentile_filter=25)
    cut = np.percentile(w[sets.unlabeled], 25)
    assert np.all(wf[sets.unlabeled & (w < cut)] == 0)
    np.testing.assert_array_equal(wf[w >= cut], w[w >= cut])


# -- contrastive terms ------------------------------------------------------------
def test_loss_lb_identical_reps():
    S = Tensor(np.tile([[1.0, 0.0]], (2, 1)))
    ctx = PairContext.build(S, [S], [0, 0], [1, 1], tau=1.0)
    assert loss_lb(ctx).item() == pytest.approx(math.log(2), rel=1e-12)


def test_loss_lb_aligned_positive_orthogonal_negative():
    eye = Tensor(np.eye(2))
    ctx = PairContext.build(eye, [eye], [0, 1], [1, 1], tau=1.0)
    assert loss_lb(ctx).item() == pytest.approx(-math.log(E / (E + 1)), rel=1e-12)
    assert loss_lb(ctx).item() == pytest.approx(0.31326168751822286, rel=1e-12)


def test_loss_lb_decreases_with_alignment():
    S = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))

    def value(angle):
        Z = Tensor(np.array([[math.cos(angle), math.sin(angle)], [0.0, 1.0]]))
        return loss_lb(PairContext.build(S, [Z], [0, 1], [1, 1], tau=0.5)).item()

    assert value(0.1) < value(0.5) < value(1.0)


def test_loss_ulb_zero_without_unlabeled():
    eye = Tensor(np.eye(3))
    ctx = PairContext.build(eye, [eye], [0, 1, 0], [1, 1, 1], pseudo_labels=[0, 1, 0], tau=1.0)
    assert loss_ulb(ctx).item() == 0.0


def test_loss_ulb_uniform_weights_equal_lb_on_pseudo_sets(rng):
    S, Z = Tensor(unit_rows(rng, 6, 3)), Tensor(unit_rows(rng, 6, 3))
    pseudo = [0, 1, 0, 1, 0, 0]
    ctx = PairContext.build(S, [Z], None, [0] * 6, pseudo_labels=pseudo, tau=0.5, uniform_weights=True)
    swapped = PairContext(S, [Z], PositiveSets(ctx.sets.unlabeled, ctx.sets.unlabeled), ctx.weights, 0.5)
    # rows with an empty pseudo set contribute nothing either way
    assert ctx.sets.unlabeled.any(axis=1).all()
    assert loss_ulb(ctx).item() == pytest.approx(loss_lb(swapped).item(), rel=1e-12)


def test_loss_ulb_weight_scales_contribution():
    S = Tensor(np.array([[1.0, 0.0], [0.6, 0.8]]))
    Z = Tensor(np.array([[0.8, 0.6], [0.0, 1.0]]))
    sets = PositiveSets(labeled=np.eye(2, dtype=bool), unlabeled=np.array([[False, True], [False, False]]))
    w = np.zeros((2, 2))
    w[0, 1] = math.exp(-1)
    ctx = PairContext(S, [Z], sets, [w], 1.0)
    v01 = v_matrix(S.data, Z.data, 1.0)[0, 1]
    # one anchor with one candidate, averaged over B = 2 anchors
    assert loss_ulb(ctx).item() == pytest.approx(math.exp(-1) * -math.log(v01) / 2, rel=1e-12)


def test_loss_pu_sum_and_switches(rng):
    S, Z = Tensor(unit_rows(rng, 6, 4)), Tensor(unit_rows(rng, 6, 4))
    ctx = PairContext.build(S, [Z], [0, 1, 0, 1, 0, 1], [1, 1, 0, 0, 0, 0],
                            pseudo_labels=[0, 1, 1, 0, 0, 1], tau=0.2)
    lb, ulb = loss_lb(ctx).item(), loss_ulb(ctx).item()
    assert loss_pu(ctx).item() == pytest.approx(lb + ulb, rel=1e-12)
    assert loss_pu(ctx, use_lb=False).item() == pytest.approx(ulb, rel=1e-12)
    assert loss_pu(ctx, use_ulb=False).item() == pytest.approx(lb, rel=1e-12)
    assert np.isfinite(lb) and np.isfinite(ulb)


def test_loss_pu_matches_bruteforce_oracle(rng):
    B, d = 6, 5
    S = unit_rows(rng, B, d)
    Zs = [unit_rows(rng, B, d) for _ in range(3)]
    ctx = PairContext.build(Tensor(S), [Tensor(z) for z in Zs], [0, 1, 2, 0, 1, 2], [1, 1, 1, 0, 0, 0],
                            pseudo_labels=[0, 1, 2, 2, 0, 0], tau=0.3)
    lb, ulb = oracle_pu(S, Zs, ctx.sets.labeled, ctx.sets.unlabeled, ctx.weights, 0.3)
    assert loss_lb(ctx).item() == pytest.approx(lb, rel=1e-12)
    assert loss_ulb(ctx).item() == pytest.approx(ulb, rel=1e-12)


def test_loss_lb_permutation_equivariant(rng):
    B = 6
    S, Z = unit_rows(rng, B, 4), unit_rows(rng, B, 4)
    labels = np.array([0, 1, 0, 2, 1, 0])
    mask = np.array([1, 1, 0, 1, 0, 1], bool)
    pseudo = np.array([0, 1, 1, 2, 1, 0])
    base = loss_lb(PairContext.build(Tensor(S), [Tensor(Z)], labels, mask, pseudo, tau=0.1)).item()
    perm = rng.permutation(B)
    moved = loss_lb(PairContext.build(Tensor(S[perm]), [Tensor(Z[perm])], labels[perm], mask[perm],
                                      pseudo[perm], tau=0.1)).item()
    assert moved == pytest.approx(base, abs=1e-12)


def test_duplicate_negative_increases_loss_lb():
    S = np.array([[1.0, 0.0], [0.0, 1.0]])
    Z = np.array([[0.8, 0.6], [0.0, 1.0]])
    before = loss_lb(PairContext.build(Tensor(S), [Tensor(Z)], [0, 1], [1, 1], tau=0.5)).item()
    S2, Z2 = np.vstack([S, S[1:]]), np.vstack([Z, Z[1:]])
    v = v_matrix(S2, Z2, 0.5)
    np.testing.assert_allclose(v.sum(axis=1), 1.0, atol=1e-12)
    # the duplicate shares class 1, so anchor 0 sees one more negative
    after = loss_lb(PairContext.build(Tensor(S2), [Tensor(Z2)], [0, 1, 1], [1, 1, 1], tau=0.5))
    anchor0_before = -math.log(v_matrix(S, Z, 0.5)[0, 0])
    anchor0_after = -math.log(v[0, 0])
    assert anchor0_after > anchor0_before
    assert after.item() > 0 and before > 0


# -- reconstruction --------------------------------------------------------------
def test_loss_rec_cases(rng):
    h = rng.standard_normal((5, 4))
    assert loss_rec([Tensor(h)], [Tensor(h.copy())]).item() == pytest.approx(0.0, abs=1e-15)
    assert loss_rec([Tensor(h)], [Tensor(-h)]).item() == pytest.approx(0.0, abs=1e-15)
    orth = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert loss_rec([Tensor(orth)], [Tensor(orth[:, ::-1].copy())]).item() == pytest.approx(1.0)


def test_loss_rec_degenerate_row():
    with pytest.raises(DegenerateRowError):
        loss_rec([Tensor(np.ones((2, 2)))], [Tensor(np.array([[1.0, 0.0], [0.0, 0.0]]))])


def test_loss_rec_sign_flip_invariance_and_range(rng):
    h = [Tensor(rng.standard_normal((6, 3))) for _ in range(2)]
    ht = [rng.standard_normal((6, 3)) for _ in range(2)]
    base = loss_rec(h, [Tensor(x) for x in ht]).item()
    flipped = [x.copy() for x in ht]
    flipped[1][2] *= -1
    assert loss_rec(h, [Tensor(x) for x in flipped]).item() == pytest.approx(base, abs=1e-15)
    assert 0.0 <= base <= 1.0


# -- supervision -------------------------------------------------------------------
def test_loss_sup_uniform_logits():
    out, ok = loss_sup(Tensor(np.zeros((4, 5))), [0, 1, 2, 3], "classification")
    assert ok and out.item() == pytest.approx(math.log(5))


def test_loss_sup_regression_exact_fit():
    out, _ = loss_sup(Tensor(np.array([[0.5], [-1.0]])), [0.5, -1.0], "regression")
    assert out.item() == 0.0


def test_loss_sup_hand_softmax():
    out, _ = loss_sup(Tensor(np.array([[math.log(3), 0.0]])), [0], "classification")
    assert out.item() == pytest.approx(-math.log(0.75), rel=1e-12)
    assert out.item() == pytest.approx(0.2876820724517809)


def test_loss_sup_masks_and_averages_heads():
    a = Tensor(np.array([[math.log(3), 0.0], [9.0, -9.0]]))
    b = Tensor(np.zeros((2, 2)))
    out, ok = loss_sup([a, b], [0, 1], "classification", labeled_mask=[1, 0])
    assert ok
    assert out.item() == pytest.approx((-math.log(0.75) + math.log(2)) / 2)


def test_loss_sup_no_labels_flagged():
    out, ok = loss_sup(Tensor(np.zeros((3, 2))), [0, 1, 0], "classification", labeled_mask=[0, 0, 0])
    assert not ok and out.item() == 0.0


# -- label plumbing -----------------------------------------------------------------
def test_discretize_labels():
    np.testing.assert_array_equal(discretize_labels([0.0, 2.4, -2.5, 2.5, 3.2, -0.49]), [0, 2, -3, 3, 3, 0])


# -- gradients ------------------------------------------------------------------------
def test_loss_pu_gradient_matches_finite_differences(rng):
    B, d = 5, 4
    S = Tensor(unit_rows(rng, B, d), requires_grad=True)
    Z = [Tensor(unit_rows(rng, B, d), requires_grad=True) for _ in range(2)]
    ctx = PairContext.build(S, Z, [0, 1, 0, 1, 0], [1, 1, 0, 0, 0], pseudo_labels=[0, 1, 0, 0, 1], tau=0.5)
    loss_pu(ctx).backward()

    def f():
        lb, ulb = oracle_pu(S.data, [z.data for z in Z], ctx.sets.labeled, ctx.sets.unlabeled,
                            ctx.weights, 0.5)
        return lb + ulb

    assert rel_error(S.grad, central_difference(f, S.data)) < 1e-4
    for z in Z:
        assert rel_error(z.grad, central_difference(f, z.data)) < 1e-4
