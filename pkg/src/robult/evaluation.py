"""Task metrics and representation diagnostics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import rankdata

from .synthdata import Batch, all_combinations, mask_modalities

METRIC_COLUMNS = ("tag", "mae", "pearson_corr", "binary_acc", "f1_binary", "accuracy", "f1_macro", "auroc")


class UndefinedMetricError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


@dataclass
class MetricRow:
    tag: str
    mae: float | None = None
    pearson_corr: float | None = None
    binary_acc: float | None = None
    f1_binary: float | None = None
    accuracy: float | None = None
    f1_macro: float | None = None
    auroc: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


# -- scalar metrics --------------------------------------------------------------
def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with midranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def confusion_matrix(y_true, y_pred, n_classes: int | None = None) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    k = n_classes or int(max(y_true.max(), y_pred.max())) + 1
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def f1_per_class(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(np.float64)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    denom = pred + true
    return np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)


def f1_macro(y_true, y_pred, n_classes: int | None = None) -> float:
    return float(f1_per_class(confusion_matrix(y_true, y_pred, n_classes)).mean())


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    denom = math.sqrt(float((a * a).sum() * (b * b).sum()))
    if denom == 0:
        return 0.0
    return float(np.clip((a * b).sum() / denom, -1.0, 1.0))


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def task_metrics(predictions, targets, task: str, tag: str = "", n_classes: int | None = None) -> MetricRow:
    """Metrics for one prediction set.

    For classification ``predictions`` may be logits (n x C), used for AUROC,
    or class ids. Regression predictions are scalars; the binary metrics
    compare signs and skip rows whose target is exactly 0.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets)
    row = MetricRow(tag=tag)
    if task == "regression":
        y = targets.astype(np.float64)
        p = predictions.reshape(-1)
        row.mae = float(np.mean(np.abs(p - y)))
        row.pearson_corr = pearson(p, y) if y.size >= 2 else None
        keep = y != 0
        yb, pb = (y[keep] > 0).astype(np.int64), (p[keep] > 0).astype(np.int64)
        if yb.size:
            row.binary_acc = float(np.mean(yb == pb))
            row.f1_binary = float(f1_per_class(confusion_matrix(yb, pb, 2))[1])
        return row

    y = targets.astype(np.int64)
    if predictions.ndim == 2:
        k = predictions.shape[1]
        cls = np.argmax(predictions, axis=1)
        probs = _softmax(predictions)
        present = np.unique(y)
        try:
            if k == 2:
                row.auroc = auroc(probs[:, 1], y == 1)
            elif present.size == k:
                row.auroc = float(np.mean([auroc(probs[:, c], y == c) for c in range(k)]))
        except UndefinedMetricError:
            row.auroc = None
    else:
        cls = predictions.astype(np.int64)
        k = n_classes
    row.accuracy = float(np.mean(cls == y))
    row.f1_macro = f1_macro(y, cls, k)
    if k == 2:
        row.binary_acc = row.accuracy
        row.f1_binary = float(f1_per_class(confusion_matrix(y, cls, 2))[1])
    return row


# -- masked evaluation -----------------------------------------------------------
def predict_masked(model, batch: Batch) -> np.ndarray:
    """Raw outputs where every row uses exactly its available modalities."""
    out = np.empty((batch.size, model.n_out))
    patterns = {tuple(r) for r in batch.available.tolist()}
    for pat in sorted(patterns):
        rows = np.flatnonzero((batch.available == np.array(pat)).all(axis=1))
        avail = [i for i, a in enumerate(pat) if a]
        sub = [x[rows] for x in batch.modalities]
        out[rows] = model.infer_raw(sub, avail)
    return out


def combination_tag(combo: Sequence[int], M: int) -> str:
    return "full" if len(combo) == M else "+".join(f"m{i}" for i in combo)


def evaluate_combinations(model, data, combos=None, task: str = "classification") -> list[MetricRow]:
    combos = all_combinations(data.M) if combos is None else combos
    rows = []
    for combo in combos:
        view = mask_modalities(data, "subset(" + ",".join(map(str, combo)) + ")")
        out = predict_masked(model, view)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"non-finite outputs for modalities {combo}")
        preds = out[:, 0] if task == "regression" else out
        rows.append(task_metrics(preds, data.labels, task, tag=combination_tag(combo, data.M),
                                 n_classes=model.n_out))
    return rows


def representations(model, modalities) -> tuple[list[np.ndarray], np.ndarray]:
    """Shared-space representations Z^i of every modality and the fused S."""
    Z = [model.shared_head(model.project(x, i)).data for i, x in enumerate(modalities)]
    S = model.shared_head(model.fuse(modalities)).data
    return Z, S


# -- mutual information ------------------------------------------------------------
def leading_projection(a: np.ndarray, iters: int = 500, tol: float = 1e-12) -> np.ndarray:
    """Scores on the leading principal axis, found by power iteration."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    a = a - a.mean(axis=0)
    if a.shape[1] == 1:
        proj = a[:, 0]
    else:
        cov = a.T @ a / a.shape[0]
        v = np.random.default_rng(0).standard_normal(a.shape[1])
        v /= np.linalg.norm(v)
        for _ in range(iters):
            w = cov @ v
            norm = np.linalg.norm(w)
            if norm == 0:
                break
            w /= norm
            if np.linalg.norm(w - v) < tol:
                v = w
                break
            v = w
        proj = a @ v
    if proj.var() < 1e-12:
        raise DegenerateInputError("projection has (near) zero variance")
    return proj


def histogram_mi(a, b, bins: int = 16) -> float:
    """Plug-in MI (nats) of the leading principal projections of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[0]
    if b.shape[0] != n:
        raise ValueError("a and b need the same number of rows")
    if n < 10 * bins:
        raise ValueError(f"need at least {10 * bins} samples for {bins} bins, got {n}")
    pa, pb = leading_projection(a), leading_projection(b)
    joint, _, _ = np.histogram2d(pa, pb, bins=bins)
    pxy = joint / n
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    mi = float((pxy[nz] * np.log(pxy[nz] / (px @ py)[nz])).sum())
    return max(mi, 0.0)


# -- alignment / uniformity ----------------------------------------------------
def alignment_uniformity(x_pos, y_pos, reps_all, bins: int = 20) -> dict:
    """Alignment of matched positive pairs, uniformity of all reps, pair-distance histogram.

    ``x_pos[k]`` and ``y_pos[k]`` form the k-th positive pair. The histogram is
    a list of ``(left_bin_edge, count)`` rows over the pair distances.
    """
    x_pos = np.asarray(x_pos, dtype=np.float64)
    y_pos = np.asarray(y_pos, dtype=np.float64)
    dist = np.linalg.norm(x_pos - y_pos, axis=1)
    alignment = float(np.mean(dist ** 2))
    sq = pdist(np.asarray(reps_all, dtype=np.float64), "sqeuclidean")
    uniformity = float(np.log(np.mean(np.exp(-2.0 * sq))))
    counts, edges = np.histogram(dist, bins=bins)
    return {"alignment": alignment, "uniformity": uniformity,
            "distance_histogram": [(float(e), int(c)) for e, c in zip(edges[:-1], counts)]}


def positive_pairs(labels) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays (i, j), i < j, of all same-label pairs."""
    labels = np.asarray(labels)
    i, j = np.triu_indices(labels.shape[0], k=1)
    keep = labels[i] == labels[j]
    return i[keep], j[keep]


# -- batch composition bound -------------------------------------------------------
def _compositions(total: int, parts: int):
    for cut in combinations_with_replacement(range(parts), total):
        counts = [0] * parts
        for c in cut:
            counts[c] += 1
        yield counts


def positive_majority_probability(B: int, c: int, model: str = "couplet", trials: int = 1_000_000,
                                  seed: int = 0) -> float:
    """Probability that same-class couplets outnumber different-class ones in a batch.

    ``model="couplet"`` treats each of the C(B, 2) couplets as independently
    positive with probability 1/c**2 and sums the binomial tail exactly.
    ``model="labeling"`` draws the B labels uniformly from c classes; it is
    enumerated exactly (grouped by class counts) up to B = 12 and estimated by
    Monte Carlo beyond.
    """
    if B < 2 or c < 2:
        raise ValueError("need B >= 2 and c >= 2")
    pairs = math.comb(B, 2)
    if model == "couplet":
        p = Fraction(1, c * c)
        tail = sum(math.comb(pairs, k) * p ** k * (1 - p) ** (pairs - k)
                   for k in range(pairs // 2 + 1, pairs + 1))
        return float(tail)
    if model != "labeling":
        raise ValueError(f"unknown model {model!r}")
    if B <= 12:
        hits = 0
        for counts in _compositions(B, c):
            same = sum(math.comb(k, 2) for k in counts)
            if 2 * same > pairs:
                ways = math.factorial(B)
                for k in counts:
                    ways //= math.factorial(k)
                hits += ways
        return float(Fraction(hits, c ** B))
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = 100_000
    for start in range(0, trials, chunk):
        m = min(chunk, trials - start)
        lab = rng.integers(0, c, size=(m, B))
        counts = np.stack([(lab == k).sum(axis=1) for k in range(c)], axis=1)
        same = (counts * (counts - 1) // 2).sum(axis=1)
        hits += int((2 * same > pairs).sum())
    return hits / trials


# -- pseudo-label diagnostics ------------------------------------------------------
def pseudo_label_confusion(true_labels, pseudo_labels, weights=None, percentile: float | None = 25.0,
                           n_classes: int | None = None) -> np.ndarray:
    """Confusion matrix of pseudo vs true labels, optionally dropping low-weight rows.

    With ``weights`` given, rows whose weight falls below the ``percentile``-th
    percentile of the weights are removed before counting.
    """
    true_labels = np.asarray(true_labels, dtype=np.int64)
    pseudo_labels = np.asarray(pseudo_labels, dtype=np.int64)
    if weights is not None and percentile is not None:
        weights = np.asarray(weights, dtype=np.float64)
        keep = weights >= np.percentile(weights, percentile)
        true_labels, pseudo_labels = true_labels[keep], pseudo_labels[keep]
    return confusion_matrix(true_labels, pseudo_labels, n_classes)
