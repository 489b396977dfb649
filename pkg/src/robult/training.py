"""Selective-gradient training: one forward pass, three losses, routed backward passes."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator

import numpy as np
from scipy.optimize import minimize

from .losses import (KERNELS, PairContext, discretize_labels, loss_lb, loss_rec, loss_sup, loss_ulb,
                     pseudo_labels_from_logits)
from .model import ContractError, RobultModel
from .synthdata import Batch, Dataset, SynthSpec
from .tensor import Tensor, set_requires_grad


class NumericError(FloatingPointError):
    pass


@dataclass
class RunConfig:
    # optimisation
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    # contrastive terms
    tau: float = 0.1
    kernel: str = "rbf"
    gamma: float | None = None
    percentile_filter: float | None = None
    label_ratio: float = 0.05
    # model
    d: int = 60
    task: str = "classification"
    # loss multipliers
    w_sup: float = 1.0
    w_rec: float = 1.0
    w_pu: float = 1.0
    # ablations
    drop_sup: bool = False
    drop_rec: bool = False
    drop_lb: bool = False
    drop_ulb: bool = False
    uniform_weights: bool = False
    drop_pseudo: bool = False
    drop_unique_branches: bool = False
    algorithm1_toggle_reading: bool = False
    # synthetic data
    n: int = 2000
    n_test: int = 500
    M: int = 3
    raw_dim: int = 16
    n_classes: int = 4
    alpha: float = 1.0
    beta: list[float] | float = 0.5
    sigma: float = 0.1
    synergy: bool = False
    data_seed: int | None = None
    data_path: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate: must be positive")
        if not 0.0 <= self.label_ratio <= 1.0:
            raise ValueError("label_ratio: must lie in [0, 1]")
        if not self.tau > 0:
            raise ValueError("tau: must be positive")
        if self.kernel not in KERNELS:
            raise ValueError(f"kernel: must be one of {KERNELS}")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma: must be positive")
        if self.task not in ("classification", "regression"):
            raise ValueError("task: must be classification or regression")
        if self.batch_size < 2:
            raise ValueError("batch_size: must be at least 2")
        if self.epochs < 0 or self.d < 1 or self.M < 1:
            raise ValueError("epochs, d, M: out of range")

    def synth_spec(self) -> SynthSpec:
        beta = self.beta if isinstance(self.beta, (list, tuple)) else [float(self.beta)] * self.M
        return SynthSpec(n=self.n + self.n_test, M=self.M, raw_dims=[self.raw_dim] * self.M,
                         n_classes=self.n_classes, regression=self.task == "regression",
                         alpha=self.alpha, beta=beta, sigma=self.sigma, synergy=self.synergy,
                         seed=self.seed if self.data_seed is None else self.data_seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class LossReport:
    l_sup: float = 0.0
    l_rec: float = 0.0
    l_lb: float = 0.0
    l_ulb: float = 0.0
    supervised: bool = True

    @property
    def total(self) -> float:
        return self.l_sup + self.l_rec + self.l_lb + self.l_ulb


# -- optimiser -----------------------------------------------------------------
@dataclass
class Adam:
    params: dict[str, Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for n, p in self.params.items():
            self.m[n] = np.zeros_like(p.data)
            self.v[n] = np.zeros_like(p.data)

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for n, p in self.params.items():
            g = p.grad
            m, v = self.m[n], self.v[n]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def adam_step(opt: Adam, lr: float | None = None) -> None:
    if lr is not None:
        opt.lr = lr
    opt.step()


# -- gradient routing ----------------------------------------------------------
def parameters_toggle(model: RobultModel, f: int, algorithm1_reading: bool = False) -> None:
    """0: everything trainable; 1: unique heads + reconstructors; 2: projectors + shared head."""
    if f not in (0, 1, 2):
        raise ContractError(f"toggle flag must be 0, 1 or 2, got {f}")
    if f == 0:
        set_requires_grad(model.parameters(), True)
        return
    groups = model.parameter_groups(algorithm1_reading)
    on = set(groups["unique_heads_and_reconstructors" if f == 1 else "projectors_and_shared_head"])
    for name, p in model.params.items():
        p.requires_grad = name in on


def _backward_logged(loss: Tensor, model: RobultModel, log: dict | None, key: str) -> None:
    if log is None:
        loss.backward()
        return
    before = {n: p.grad.copy() for n, p in model.params.items()}
    loss.backward()
    log[key] = {n: p.grad - before[n] for n, p in model.params.items()}


def class_ids(labels: np.ndarray, task: str) -> np.ndarray:
    return discretize_labels(labels) if task == "regression" else np.asarray(labels, dtype=np.int64)


def train_step(model: RobultModel, batch: Batch, cfg: RunConfig, opt: Adam,
               grad_log: dict | None = None) -> LossReport:
    """One Robult update.

    ``grad_log``, when given, receives the gradient each backward pass
    contributed to each parameter, keyed by ``rec``/``pu``/``sup``.
    """
    out = model.forward_all(batch)
    labels, mask = batch.labels, batch.labeled_mask

    pseudo = None if cfg.drop_pseudo else pseudo_labels_from_logits(out.logits_fused.data, cfg.task)
    ctx = PairContext.build(out.S, out.Z, class_ids(labels, cfg.task), mask, pseudo, tau=cfg.tau,
                            kernel=cfg.kernel, gamma=cfg.gamma, uniform_weights=cfg.uniform_weights,
                            percentile_filter=cfg.percentile_filter)

    l_lb = None if cfg.drop_lb else loss_lb(ctx)
    l_ulb = None if cfg.drop_ulb else loss_ulb(ctx)
    l_rec = None if cfg.drop_rec or not model.unique_branches else loss_rec(out.H, out.H_tilde)
    l_sup, supervised = (None, False) if cfg.drop_sup else loss_sup(
        [out.logits_fused] + out.logits_per_branch, labels, cfg.task, mask)

    report = LossReport(
        l_sup=l_sup.item() if l_sup is not None else 0.0,
        l_rec=l_rec.item() if l_rec is not None else 0.0,
        l_lb=l_lb.item() if l_lb is not None else 0.0,
        l_ulb=l_ulb.item() if l_ulb is not None else 0.0,
        supervised=supervised,
    )
    for name in ("l_sup", "l_rec", "l_lb", "l_ulb"):
        if not math.isfinite(getattr(report, name)):
            raise NumericError(f"{name} is not finite ({getattr(report, name)})")

    if l_rec is not None:
        parameters_toggle(model, 1, cfg.algorithm1_toggle_reading)
        _backward_logged(l_rec * cfg.w_rec, model, grad_log, "rec")
    pu_terms = [t for t in (l_lb, l_ulb) if t is not None]
    if pu_terms:
        parameters_toggle(model, 2, cfg.algorithm1_toggle_reading)
        pu = pu_terms[0] if len(pu_terms) == 1 else pu_terms[0] + pu_terms[1]
        _backward_logged(pu * cfg.w_pu, model, grad_log, "pu")
    parameters_toggle(model, 0)
    if l_sup is not None and supervised:
        _backward_logged(l_sup * cfg.w_sup, model, grad_log, "sup")

    opt.step()
    opt.zero_grad()
    return report


# -- data plumbing ---------------------------------------------------------------
def make_semisupervised_split(labels, ratio: float, seed: int = 0) -> np.ndarray:
    """Stratified labeled mask: ceil(ratio * count) rows of every class."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {ratio}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    mask = np.zeros(labels.shape[0], dtype=bool)
    for cls in np.unique(labels):
        rows = np.flatnonzero(labels == cls)
        k = math.ceil(round(ratio * rows.size, 9))
        mask[rng.permutation(rows)[:k]] = True
    return mask


def iterate_batches(data: Batch, batch_size: int, rng: np.random.Generator) -> Iterator[Batch]:
    order = rng.permutation(data.size)
    for start in range(0, data.size, batch_size):
        idx = order[start:start + batch_size]
        if idx.size < 2:
            continue
        yield data.subset(idx)


def build_model(cfg: RunConfig, data: Dataset) -> RobultModel:
    n_out = 1 if cfg.task == "regression" else data.n_classes
    return RobultModel(data.raw_dims, d=cfg.d, n_out=n_out, seed=cfg.seed,
                       unique_branches=not cfg.drop_unique_branches)


def prepare_training_data(cfg: RunConfig, data: Dataset) -> Dataset:
    train = data.subset(np.arange(data.size))
    train.labeled_mask = make_semisupervised_split(class_ids(train.labels, cfg.task), cfg.label_ratio, cfg.seed)
    return train


def fit(model: RobultModel, train: Dataset, cfg: RunConfig, on_epoch=None) -> list[LossReport]:
    """Run ``cfg.epochs`` epochs; returns the per-epoch mean LossReport."""
    opt = Adam(model.params, lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    for epoch in range(cfg.epochs):
        reports = [train_step(model, b, cfg, opt) for b in iterate_batches(train, cfg.batch_size, rng)]
        mean = LossReport(*(float(np.mean([getattr(r, k) for r in reports]))
                            for k in ("l_sup", "l_rec", "l_lb", "l_ulb")),
                          supervised=any(r.supervised for r in reports))
        history.append(mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    return history


# -- probe for the no-supervision ablation -------------------------------------
def fit_linear_probe(model: RobultModel, train: Dataset, task: str, l2: float = 1e-3) -> None:
    """Fit the classifier layer alone on frozen representations of the labeled rows.

    Multinomial logistic regression (or least squares for regression) on the
    fused representation and on every branch representation; the result is
    written into the classifier parameters so inference is unchanged.
    """
    idx = np.flatnonzero(train.labeled_mask)
    if idx.size == 0:
        return
    sub = train.subset(idx)
    out = model.forward_all(Batch(sub.modalities))
    reps = [out.S.data] + [
        (out.Z[i].data + out.U[i].data) if out.U is not None else out.Z[i].data for i in range(model.M)]
    X = np.vstack(reps)
    X1 = np.hstack([X, np.ones((X.shape[0], 1))])
    y = np.tile(np.asarray(sub.labels), len(reps))
    d, k = model.d, model.n_out

    if task == "regression":
        A = X1.T @ X1 + l2 * np.eye(d + 1)
        sol = np.linalg.solve(A, X1.T @ y.astype(np.float64))
        model.params["classifier.W"].data[:, 0] = sol[:d]
        model.params["classifier.b"].data[0] = sol[d]
        return

    onehot = np.eye(k)[y.astype(np.int64)]

    def objective(theta):
        Wb = theta.reshape(d + 1, k)
        logits = X1 @ Wb
        logits -= logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        n = X1.shape[0]
        loss = -(onehot * logp).sum() / n + 0.5 * l2 * (Wb[:d] ** 2).sum()
        grad = X1.T @ (np.exp(logp) - onehot) / n
        grad[:d] += l2 * Wb[:d]
        return loss, grad.ravel()

    res = minimize(objective, np.zeros((d + 1) * k), jac=True, method="L-BFGS-B")
    Wb = res.x.reshape(d + 1, k)
    model.params["classifier.W"].data[...] = Wb[:d]
    model.params["classifier.b"].data[...] = Wb[d]
