"""Soft positive-unlabeled contrastive loss, latent reconstruction loss, supervision.

All losses are negated log-likelihood style quantities to be minimized. Pair
weights, positive sets and pseudo-labels are plain arrays: they steer the
contrastive terms but are not differentiated through.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import (Tensor, l2_normalize_rows, log_softmax_rows, matmul, mul, square, tabs,
                     take_rows, transpose, tsum)


class ConfigError(ValueError):
    pass


class BatchSizeError(ValueError):
    pass


KERNELS = ("rbf", "l1", "l2")


# -- proximities ---------------------------------------------------------------
def proximity(s, z, tau: float) -> float:
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    return float(np.exp(np.dot(s, z) / tau))


def proximity_matrix(S: np.ndarray, Z: np.ndarray, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    return np.exp(S @ Z.T / tau)


def log_v(S: Tensor, Z: Tensor, tau: float) -> Tensor:
    """Row-wise log-softmax of S Z^T / tau; entry (j, k) is log v(s_j, z_k)."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if S.shape[0] < 2:
        raise BatchSizeError(f"contrastive terms need a batch of at least 2, got {S.shape[0]}")
    return log_softmax_rows(mul(matmul(S, transpose(Z)), 1.0 / tau))


def v_matrix(S, Z, tau: float) -> np.ndarray:
    S = S if isinstance(S, Tensor) else Tensor(S)
    Z = Z if isinstance(Z, Tensor) else Tensor(Z)
    return np.exp(log_v(S, Z, tau).data)


# -- positive sets -------------------------------------------------------------
@dataclass
class PositiveSets:
    """Boolean B x B masks; row j lists the partners of anchor j.

    ``labeled[j]`` is B^j_{1,1}, always containing j itself; ``unlabeled[j]``
    is B^j_{1,0}, unlabeled rows whose pseudo-class equals the anchor's class.
    """
    labeled: np.ndarray
    unlabeled: np.ndarray

    def labeled_of(self, j: int) -> set[int]:
        return set(np.flatnonzero(self.labeled[j]).tolist())

    def unlabeled_of(self, j: int) -> set[int]:
        return set(np.flatnonzero(self.unlabeled[j]).tolist())


def build_positive_sets(labels, labeled_mask, pseudo_labels=None) -> PositiveSets:
    """Per-anchor labeled and unlabeled positive index sets.

    Anchors that are labeled use their label as class; unlabeled anchors use
    their pseudo-label. Without pseudo-labels, unlabeled anchors have only the
    self pair and no unlabeled row is ever positive.
    """
    labeled_mask = np.asarray(labeled_mask, dtype=bool)
    B = labeled_mask.shape[0]
    if labels is None:
        labels = np.zeros(B, dtype=np.int64)
    labels = np.asarray(labels).astype(np.int64)

    anchor_cls = labels.copy()
    has_cls = labeled_mask.copy()
    if pseudo_labels is not None:
        pseudo = np.asarray(pseudo_labels).astype(np.int64)
        anchor_cls = np.where(labeled_mask, labels, pseudo)
        has_cls[:] = True
    eye = np.eye(B, dtype=bool)

    same_label = (anchor_cls[:, None] == labels[None, :]) & labeled_mask[None, :] & has_cls[:, None]
    lab = same_label | eye
    if pseudo_labels is None:
        unl = np.zeros((B, B), dtype=bool)
    else:
        unl = (anchor_cls[:, None] == pseudo[None, :]) & ~labeled_mask[None, :] & ~eye
    return PositiveSets(labeled=lab, unlabeled=unl)


def multilabel_positive(a, b) -> bool:
    return set(a) == set(b)


def labelsets_to_ids(label_sets: Sequence) -> np.ndarray:
    """Map each label set to an id so equal sets (and only those) share an id."""
    ids: dict[frozenset, int] = {}
    return np.array([ids.setdefault(frozenset(s), len(ids)) for s in label_sets], dtype=np.int64)


def discretize_labels(y) -> np.ndarray:
    """Clamp to [-3, 3] and round half away from zero to the nearest integer class."""
    y = np.clip(np.asarray(y, dtype=np.float64), -3.0, 3.0)
    return (np.sign(y) * np.floor(np.abs(y) + 0.5)).astype(np.int64)


# -- adaptive weights ----------------------------------------------------------
def reference_proximity(j: int, S: np.ndarray, Z: np.ndarray, sets: PositiveSets, tau: float) -> float:
    partners = np.flatnonzero(sets.labeled[j])
    return float(np.mean([proximity(S[j], Z[k], tau) for k in partners]))


def reference_proximities(phi: np.ndarray, sets: PositiveSets) -> np.ndarray:
    return (phi * sets.labeled).sum(axis=1) / sets.labeled.sum(axis=1)


def pair_weight(phi_ref, phi_cand, kernel: str = "rbf", gamma: float = 1.0, max_dist=None):
    """Weight of a candidate pair given the anchor's reference proximity.

    ``rbf`` is exp(-gamma * delta^2). ``l1``/``l2`` are 1 minus the distance
    (absolute or squared difference) normalized by ``max_dist``, the largest
    such distance for the anchor.
    """
    delta = np.asarray(phi_cand, dtype=np.float64) - np.asarray(phi_ref, dtype=np.float64)
    if kernel == "rbf":
        if gamma <= 0:
            raise ConfigError(f"RBF bandwidth must be positive, got {gamma}")
        return np.exp(-gamma * delta ** 2)
    if kernel not in ("l1", "l2"):
        raise ConfigError(f"unknown kernel {kernel!r}")
    dist = np.abs(delta) if kernel == "l1" else delta ** 2
    if max_dist is None:
        raise ConfigError(f"{kernel} weighting needs the batch max distance")
    max_dist = np.asarray(max_dist, dtype=np.float64)
    safe = np.where(max_dist > 0, max_dist, 1.0)
    return np.where(max_dist > 0, 1.0 - dist / safe, 1.0)


def default_gamma(phi: np.ndarray, sets: PositiveSets) -> float:
    return 1.0 / (2.0 * float(np.var(phi[sets.labeled])) + 1e-8)


def pair_weights(phi: np.ndarray, sets: PositiveSets, kernel: str = "rbf", gamma: float | None = None,
                 uniform: bool = False, percentile_filter: float | None = None) -> np.ndarray:
    """B x B weights, nonzero only on unlabeled-positive entries."""
    if uniform:
        w = np.ones_like(phi)
    else:
        ref = reference_proximities(phi, sets)[:, None]
        if kernel == "rbf":
            g = default_gamma(phi, sets) if gamma is None else gamma
            w = pair_weight(ref, phi, "rbf", gamma=g)
        else:
            d = np.abs(phi - ref) if kernel == "l1" else (phi - ref) ** 2
            w = pair_weight(ref, phi, kernel, max_dist=d.max(axis=1, keepdims=True))
    w = np.where(sets.unlabeled, w, 0.0)
    if percentile_filter is not None and sets.unlabeled.any():
        cut = np.percentile(w[sets.unlabeled], percentile_filter)
        w = np.where(w < cut, 0.0, w)
    return w


# -- contrastive terms ---------------------------------------------------------
@dataclass
class PairContext:
    S: Tensor
    Z: list[Tensor]
    sets: PositiveSets
    weights: list[np.ndarray]
    tau: float

    @classmethod
    def build(cls, S: Tensor, Z: Sequence[Tensor], labels, labeled_mask, pseudo_labels=None,
              tau: float = 0.1, kernel: str = "rbf", gamma: float | None = None,
              uniform_weights: bool = False, percentile_filter: float | None = None) -> "PairContext":
        if tau <= 0:
            raise ConfigError(f"temperature must be positive, got {tau}")
        sets = build_positive_sets(labels, labeled_mask, pseudo_labels)
        weights = [pair_weights(proximity_matrix(S.data, z.data, tau), sets, kernel, gamma,
                                uniform_weights, percentile_filter) for z in Z]
        return cls(S=S, Z=list(Z), sets=sets, weights=weights, tau=tau)


def _weighted_nll(logv: Tensor, coef: np.ndarray) -> Tensor:
    return mul(tsum(mul(logv, coef)), -1.0 / logv.shape[0])


def loss_lb(ctx: PairContext) -> Tensor:
    """Labeled term: -mean_i mean_j (1/|B11_j|) sum_{k in B11_j} log v(s_j, z^i_k)."""
    coef = ctx.sets.labeled / ctx.sets.labeled.sum(axis=1, keepdims=True)
    terms = [_weighted_nll(log_v(ctx.S, z, ctx.tau), coef) for z in ctx.Z]
    return _mean(terms)


def loss_ulb(ctx: PairContext) -> Tensor:
    """Unlabeled term: like the labeled one over B10_j, each pair scaled by its weight."""
    counts = ctx.sets.unlabeled.sum(axis=1, keepdims=True)
    if not counts.any():
        return Tensor(0.0)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)
    terms = [_weighted_nll(log_v(ctx.S, z, ctx.tau), w * inv) for z, w in zip(ctx.Z, ctx.weights)]
    return _mean(terms)


def loss_pu(ctx: PairContext, use_lb: bool = True, use_ulb: bool = True) -> Tensor:
    total = Tensor(0.0)
    if use_ulb:
        total = total + loss_ulb(ctx)
    if use_lb:
        total = total + loss_lb(ctx)
    return total


def _mean(terms: Sequence[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return mul(total, 1.0 / len(terms))


# -- reconstruction ------------------------------------------------------------
def loss_rec(H: Sequence[Tensor], H_tilde: Sequence[Tensor]) -> Tensor:
    """(1/MB) sum_i sum_j 1 - <h~, h>^2 with both rows normalized first."""
    terms = []
    for h, ht in zip(H, H_tilde):
        if h.shape != ht.shape:
            raise ValueError(f"reconstruction shape {ht.shape} does not match target {h.shape}")
        cos = tsum(mul(l2_normalize_rows(h), l2_normalize_rows(ht)), axis=1)
        terms.append(1.0 - tsum(square(cos)) * (1.0 / h.shape[0]))
    return _mean(terms)


# -- supervision ---------------------------------------------------------------
def loss_sup(outputs, targets, task: str = "classification", labeled_mask=None) -> tuple[Tensor, bool]:
    """Mean supervised loss over labeled rows and over every prediction head.

    Returns ``(loss, supervised)``; ``supervised`` is False when no row is
    labeled, in which case the loss is a constant 0.
    """
    heads = [outputs] if isinstance(outputs, Tensor) else list(outputs)
    targets = np.asarray(targets)
    B = heads[0].shape[0]
    mask = np.ones(B, dtype=bool) if labeled_mask is None else np.asarray(labeled_mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return Tensor(0.0), False
    if task == "classification":
        onehot = np.zeros((idx.size, heads[0].shape[1]))
        onehot[np.arange(idx.size), targets[idx].astype(np.int64)] = 1.0
        terms = [mul(tsum(mul(log_softmax_rows(take_rows(o, idx)), onehot)), -1.0 / idx.size)
                 for o in heads]
    elif task == "regression":
        y = targets[idx].astype(np.float64).reshape(-1, 1)
        terms = [mul(tsum(tabs(take_rows(o, idx) - y)), 1.0 / idx.size) for o in heads]
    else:
        raise ConfigError(f"unknown task {task!r}")
    return _mean(terms), True


def pseudo_labels_from_logits(logits: np.ndarray, task: str) -> np.ndarray:
    """Hard pseudo-classes from the fused-path classifier output."""
    if task == "regression":
        return discretize_labels(logits[:, 0])
    return np.argmax(logits, axis=1)
