"""Synthetic multimodal data with controllable redundant, unique and synergistic parts.

Each sample draws a shared factor ``c`` and one private factor ``u_i`` per
modality. Modality ``i`` observes

    x_i = alpha * E_i c + beta_i * F_i u_i + sigma * noise

where ``[E_i F_i]`` has orthonormal columns. The label is read out from
``c`` plus ``beta_i``-weighted contributions of every ``u_i``, so a private
factor only matters for the label to the extent its modality exposes it.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class MaskPolicyError(ValueError):
    pass


@dataclass
class SynthSpec:
    n: int = 2000
    M: int = 3
    raw_dims: Sequence[int] = (16, 16, 16)
    n_classes: int = 4
    regression: bool = False
    alpha: float = 1.0
    beta: Sequence[float] | float = 0.5
    synergy: bool = False
    sigma: float = 0.1
    shared_dim: int = 4
    unique_dim: int = 4
    seed: int = 0

    def __post_init__(self):
        if np.isscalar(self.beta):
            self.beta = [float(self.beta)] * self.M
        self.beta = [float(b) for b in self.beta]
        self.raw_dims = [int(r) for r in self.raw_dims]
        if len(self.raw_dims) != self.M or len(self.beta) != self.M:
            raise ValueError("raw_dims and beta need one entry per modality")
        if self.alpha < 0 or self.sigma < 0 or min(self.beta) < 0:
            raise ValueError("alpha, beta and sigma must be nonnegative")
        if not self.regression and self.n_classes < 2:
            raise ValueError("classification needs at least 2 classes")
        if min(self.raw_dims) < self.shared_dim + self.unique_dim:
            raise ValueError("each raw dim must hold the shared and unique factors")


@dataclass
class Batch:
    modalities: list[np.ndarray]
    labels: np.ndarray | None = None
    labeled_mask: np.ndarray | None = None
    available: np.ndarray | None = None

    def __post_init__(self):
        B = self.modalities[0].shape[0]
        if any(x.shape[0] != B for x in self.modalities):
            raise ValueError("all modalities must share the batch size")
        if self.labeled_mask is None:
            self.labeled_mask = np.zeros(B, dtype=bool) if self.labels is None else np.ones(B, dtype=bool)
        if self.available is None:
            self.available = np.ones((B, len(self.modalities)), dtype=bool)

    @property
    def size(self) -> int:
        return self.modalities[0].shape[0]

    @property
    def M(self) -> int:
        return len(self.modalities)

    def subset(self, idx) -> "Batch":
        return Batch([x[idx] for x in self.modalities],
                     None if self.labels is None else self.labels[idx],
                     self.labeled_mask[idx], self.available[idx])


@dataclass
class Dataset(Batch):
    task: str = "classification"
    n_classes: int = 2
    meta: dict = field(default_factory=dict)

    @property
    def raw_dims(self) -> list[int]:
        return [x.shape[1] for x in self.modalities]

    def subset(self, idx) -> "Dataset":
        return Dataset([x[idx] for x in self.modalities], self.labels[idx], self.labeled_mask[idx],
                       self.available[idx], self.task, self.n_classes, dict(self.meta))


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q[:, :cols]


def generate(spec: SynthSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    n, kc, ku = spec.n, spec.shared_dim, spec.unique_dim
    c = rng.standard_normal((n, kc))
    u = [rng.standard_normal((n, ku)) for _ in range(spec.M)]
    embeds = [_orthonormal(rng, r, kc + ku) for r in spec.raw_dims]

    xs = []
    for i in range(spec.M):
        E, F = embeds[i][:, :kc], embeds[i][:, kc:]
        x = spec.alpha * c @ E.T + spec.beta[i] * u[i] @ F.T
        x = x + spec.sigma * rng.standard_normal(x.shape)
        xs.append(x)

    n_out = 1 if spec.regression else spec.n_classes
    read_c = rng.standard_normal((kc, n_out))
    read_u = [rng.standard_normal((ku, n_out)) for _ in range(spec.M)]
    score = c @ read_c + sum(b * ui @ r for b, ui, r in zip(spec.beta, u, read_u))
    xor = (np.sign(c[:, 0]) != np.sign(c[:, 1])).astype(np.int64)

    if spec.regression:
        s = score[:, 0] / score[:, 0].std()
        if spec.synergy:
            s = s + np.where(xor == 1, 1.0, -1.0)
        y = 3.0 * np.tanh(s)
        task, n_classes = "regression", 7
    else:
        y = np.argmax(score, axis=1)
        if spec.synergy:
            y = (y + xor) % spec.n_classes
        task, n_classes = "classification", spec.n_classes

    meta = {"alpha": spec.alpha, "beta": list(spec.beta), "sigma": spec.sigma, "synergy": spec.synergy,
            "seed": spec.seed, "shared_dim": kc, "unique_dim": ku}
    return Dataset(xs, y, np.ones(n, dtype=bool), np.ones((n, spec.M), dtype=bool),
                   task=task, n_classes=n_classes, meta=meta)


# -- missing-modality views ---------------------------------------------------
def parse_policy(policy: str) -> tuple[str, tuple]:
    """``single(i)``, ``pair(i,j)``, ``subset(i,j,...)``, ``full``, ``random(p)``."""
    policy = policy.strip()
    if policy == "full":
        return "full", ()
    if "(" not in policy or not policy.endswith(")"):
        raise MaskPolicyError(f"cannot parse mask policy {policy!r}")
    kind, args = policy[:-1].split("(", 1)
    vals = [a.strip() for a in args.split(",") if a.strip()]
    if kind == "random":
        return kind, (float(vals[0]),)
    if kind in ("single", "pair", "subset"):
        return kind, tuple(int(v) for v in vals)
    raise MaskPolicyError(f"unknown mask policy {kind!r}")


def mask_modalities(data: Batch, policy: str, seed: int = 0) -> Batch:
    """Evaluation view with some modalities hidden and their values poisoned with NaN."""
    kind, args = parse_policy(policy)
    B, M = data.size, data.M
    if kind == "full":
        avail = np.ones((B, M), dtype=bool)
    elif kind == "random":
        p = args[0]
        if not 0.0 <= p < 1.0:
            raise MaskPolicyError(f"drop probability must be in [0, 1), got {p}")
        rng = np.random.default_rng(seed)
        avail = rng.random((B, M)) >= p
        # keep one modality for rows that lost all of them
        empty = np.flatnonzero(~avail.any(axis=1))
        avail[empty, rng.integers(0, M, size=empty.size)] = True
    else:
        if kind == "single" and len(args) != 1 or kind == "pair" and len(args) != 2:
            raise MaskPolicyError(f"{kind} policy takes {1 if kind == 'single' else 2} indices, got {args}")
        if any(a < 0 or a >= M for a in args):
            raise MaskPolicyError(f"modality indices {args} out of range for M={M}")
        avail = np.zeros((B, M), dtype=bool)
        avail[:, list(args)] = True
    if not avail.any(axis=1).all():
        raise MaskPolicyError("a sample would have every modality masked")

    xs = []
    for i, x in enumerate(data.modalities):
        x = x.copy()
        x[~avail[:, i]] = np.nan
        xs.append(x)
    out = data.subset(np.arange(B))
    out.modalities = xs
    out.available = avail
    return out


def all_combinations(M: int) -> list[tuple[int, ...]]:
    return [c for k in range(1, M + 1) for c in itertools.combinations(range(M), k)]


# -- persistence ---------------------------------------------------------------
def save_dataset(data: Dataset, path: str | Path) -> None:
    """Save as ``.npz`` (binary) or ``.csv`` (delimited text with a header row)."""
    path = Path(path)
    header = {"task": data.task, "n_classes": data.n_classes, "dims": data.raw_dims, "meta": data.meta}
    if path.suffix == ".npz":
        arrays = {f"x{i}": x for i, x in enumerate(data.modalities)}
        np.savez(path, header=np.array(json.dumps(header)), labels=data.labels,
                 labeled_mask=data.labeled_mask, available=data.available, **arrays)
        return
    cols = [f"m{i}_{k}" for i, x in enumerate(data.modalities) for k in range(x.shape[1])]
    cols += ["label", "labeled"]
    body = np.column_stack(data.modalities + [data.labels.astype(np.float64), data.labeled_mask.astype(np.float64)])
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header) + "\n")
        fh.write(",".join(cols) + "\n")
        np.savetxt(fh, body, delimiter=",", fmt="%.17g")


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            header = json.loads(str(z["header"]))
            xs = [z[f"x{i}"] for i in range(len(header["dims"]))]
            labels, mask, avail = z["labels"], z["labeled_mask"].astype(bool), z["available"].astype(bool)
    else:
        with open(path) as fh:
            header = json.loads(fh.readline()[2:])
            fh.readline()
            body = np.loadtxt(fh, delimiter=",", ndmin=2)
        offs = np.cumsum([0] + header["dims"])
        xs = [body[:, offs[i]:offs[i + 1]] for i in range(len(header["dims"]))]
        labels = body[:, offs[-1]]
        if header["task"] == "classification":
            labels = labels.astype(np.int64)
        mask = body[:, offs[-1] + 1].astype(bool)
        avail = np.ones((body.shape[0], len(xs)), dtype=bool)
    return Dataset(xs, labels, mask, avail, task=header["task"], n_classes=header["n_classes"],
                   meta=header.get("meta", {}))
