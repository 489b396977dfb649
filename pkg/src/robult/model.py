"""Robult network: projectors, shared/unique heads, reconstructors, classifier.

Modalities are indexed from 0. Parameter names follow the module they belong to:

    proj.{i}.*      per-modality projector, raw_i -> d
    fusion.*        fusion projector on the concatenated raw inputs -> d
    shared.{0,1}.*  shared head (two layers, ReLU between, rows normalized)
    unique.{i}.*    unique head of modality i (one layer, rows normalized)
    recon.{i}.{0,1}.*  reconstructor of modality i, 2d -> d -> d
    classifier.*    d -> n_out
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tensor import (ShapeError, Tensor, concat_cols, l2_normalize_rows, matmul, relu)

CHECKPOINT_MAGIC = b"RBLT"
CHECKPOINT_VERSION = 1

GROUPS = ("all", "unique_heads_and_reconstructors", "projectors_and_shared_head", "classifier")


class ContractError(RuntimeError):
    pass


class CheckpointVersionError(RuntimeError):
    pass


@dataclass
class ForwardOutputs:
    H: list[Tensor]
    Z: list[Tensor]
    U: list[Tensor] | None
    S: Tensor
    H_tilde: list[Tensor] | None
    logits_per_branch: list[Tensor]
    logits_fused: Tensor


def _affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return matmul(x, W) + b


class RobultModel:
    """Parameter container plus the forward computations of the Robult network.

    ``n_out`` is the class count for classification or 1 for regression.
    With ``unique_branches=False`` the unique heads and reconstructors are not
    built at all and every branch classifies its shared representation alone.
    """

    def __init__(self, raw_dims: Sequence[int], d: int = 60, n_out: int = 2, seed: int = 0,
                 unique_branches: bool = True):
        self.raw_dims = [int(r) for r in raw_dims]
        self.M = len(self.raw_dims)
        if self.M < 1:
            raise ValueError("need at least one modality")
        self.d = int(d)
        self.n_out = int(n_out)
        self.unique_branches = bool(unique_branches)
        self.params: dict[str, Tensor] = {}

        rng = np.random.default_rng(seed)
        d = self.d
        for i, r in enumerate(self.raw_dims):
            self._linear(rng, f"proj.{i}", r, d)
        self._linear(rng, "fusion", sum(self.raw_dims), d)
        self._linear(rng, "shared.0", d, d)
        self._linear(rng, "shared.1", d, d)
        if self.unique_branches:
            for i in range(self.M):
                self._linear(rng, f"unique.{i}", d, d)
            for i in range(self.M):
                self._linear(rng, f"recon.{i}.0", 2 * d, d)
                self._linear(rng, f"recon.{i}.1", d, d)
        self._linear(rng, "classifier", d, self.n_out)

    def _linear(self, rng: np.random.Generator, prefix: str, fan_in: int, fan_out: int) -> None:
        bound = 1.0 / np.sqrt(fan_in)
        self.params[f"{prefix}.W"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)),
                                            requires_grad=True, name=f"{prefix}.W")
        self.params[f"{prefix}.b"] = Tensor(rng.uniform(-bound, bound, fan_out),
                                            requires_grad=True, name=f"{prefix}.b")

    def layer(self, prefix: str, x: Tensor) -> Tensor:
        return _affine(x, self.params[f"{prefix}.W"], self.params[f"{prefix}.b"])

    # -- building blocks -------------------------------------------------------
    def project(self, x: np.ndarray | Tensor, i: int) -> Tensor:
        return self.layer(f"proj.{i}", _as_input(x))

    def fuse(self, xs: Sequence[np.ndarray]) -> Tensor:
        return self.layer("fusion", Tensor(np.concatenate([np.asarray(x, dtype=np.float64) for x in xs], axis=1)))

    def shared_head(self, h: Tensor) -> Tensor:
        return l2_normalize_rows(self.layer("shared.1", relu(self.layer("shared.0", h))))

    def unique_head(self, h: Tensor, i: int) -> Tensor:
        return l2_normalize_rows(self.layer(f"unique.{i}", h))

    def reconstruct(self, U: Tensor, Z: Tensor, i: int) -> Tensor:
        if U.shape != Z.shape or U.shape[1] != self.d:
            raise ShapeError(f"reconstruct: expected two B x {self.d} inputs, got {U.shape} and {Z.shape}")
        hidden = relu(self.layer(f"recon.{i}.0", concat_cols([U, Z])))
        return self.layer(f"recon.{i}.1", hidden)

    def classify(self, rep: Tensor) -> Tensor:
        return self.layer("classifier", rep)

    def branch_logits(self, z: Tensor, u: Tensor | None) -> Tensor:
        # z and u are combined by element-wise sum so c() keeps input width d
        return self.classify(z if u is None else z + u)

    # -- full passes -------------------------------------------------------------
    def forward_all(self, batch) -> ForwardOutputs:
        xs = batch.modalities
        if len(xs) != self.M:
            raise ContractError(f"expected {self.M} modalities, batch has {len(xs)}")
        if batch.available is not None and not np.all(batch.available):
            raise ContractError("training forward requires every modality to be present")
        H = [self.project(x, i) for i, x in enumerate(xs)]
        S = self.shared_head(self.fuse(xs))
        Z = [self.shared_head(h) for h in H]
        if self.unique_branches:
            U = [self.unique_head(h, i) for i, h in enumerate(H)]
            H_tilde = [self.reconstruct(U[i], Z[i], i) for i in range(self.M)]
        else:
            U, H_tilde = None, None
        logits = [self.branch_logits(Z[i], U[i] if U is not None else None) for i in range(self.M)]
        return ForwardOutputs(H=H, Z=Z, U=U, S=S, H_tilde=H_tilde,
                              logits_per_branch=logits, logits_fused=self.classify(S))

    def branch_output(self, x: np.ndarray, i: int) -> np.ndarray:
        h = self.project(x, i)
        z = self.shared_head(h)
        u = self.unique_head(h, i) if self.unique_branches else None
        return self.branch_logits(z, u).data

    def fused_output(self, xs: Sequence[np.ndarray]) -> np.ndarray:
        return self.classify(self.shared_head(self.fuse(xs))).data

    def infer_raw(self, modalities: Sequence[np.ndarray], available: Iterable[int]) -> np.ndarray:
        """Averaged model outputs (logits, or the scalar prediction) for one availability set.

        Inputs of modalities outside ``available`` are never read.
        """
        avail = sorted(set(int(a) for a in available))
        if not avail:
            raise ContractError("at least one modality must be available")
        if avail[0] < 0 or avail[-1] >= self.M:
            raise ContractError(f"modality indices {avail} out of range for M={self.M}")
        if len(avail) == self.M:
            return self.fused_output(modalities)
        outs = [self.branch_output(modalities[i], i) for i in avail]
        return np.mean(outs, axis=0)

    def infer(self, modalities: Sequence[np.ndarray], available: Iterable[int]) -> np.ndarray:
        """Predictions under missing modalities: class ids, or scalars for regression."""
        out = self.infer_raw(modalities, available)
        if self.n_out == 1:
            return out[:, 0]
        return np.argmax(out, axis=1)

    # -- parameter bookkeeping ------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_groups(self, algorithm1_reading: bool = False) -> dict[str, list[str]]:
        """Names per routing group.

        The PU group holds the projectors and the shared head; with
        ``algorithm1_reading`` it also holds the unique heads, as a literal
        reading of the toggle in the training pseudo-code would have it.
        """
        names = list(self.params)
        unique = [n for n in names if n.startswith(("unique.", "recon."))]
        pu = [n for n in names if n.startswith(("proj.", "fusion.", "shared."))]
        if algorithm1_reading:
            pu += [n for n in names if n.startswith("unique.")]
        cls = [n for n in names if n.startswith("classifier.")]
        return {"all": names, "unique_heads_and_reconstructors": unique,
                "projectors_and_shared_head": pu, "classifier": cls}

    def count_parameters(self, prefixes: Sequence[str] | None = None) -> int:
        return sum(p.size for n, p in self.params.items()
                   if prefixes is None or n.startswith(tuple(prefixes)))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ValueError("state keys do not match the model's parameters")
        for n, arr in state.items():
            if arr.shape != self.params[n].shape:
                raise ShapeError(f"{n}: expected {self.params[n].shape}, got {arr.shape}")
            self.params[n].data[...] = arr

    # -- checkpoints -----------------------------------------------------------
    def save(self, path: str | Path, meta: dict | None = None) -> None:
        """Write a versioned checkpoint.

        Layout: magic, u32 version, u32 M, u32 d, u32 n_out, u32 raw dims,
        u8 unique flag, u32 extra-metadata length + JSON, u32 layer count; per
        layer u32 name length, name, u32 ndim, u32 dims; then every array as
        little-endian float64 in declaration order.
        """
        meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
        out = bytearray(CHECKPOINT_MAGIC)
        out += struct.pack("<IIII", CHECKPOINT_VERSION, self.M, self.d, self.n_out)
        out += struct.pack(f"<{self.M}I", *self.raw_dims)
        out += struct.pack("<B", int(self.unique_branches))
        out += struct.pack("<I", len(meta_bytes)) + meta_bytes
        out += struct.pack("<I", len(self.params))
        for name, p in self.params.items():
            nb = name.encode()
            out += struct.pack("<I", len(nb)) + nb
            out += struct.pack("<I", p.data.ndim) + struct.pack(f"<{p.data.ndim}I", *p.shape)
        for p in self.params.values():
            out += p.data.astype("<f8").tobytes()
        Path(path).write_bytes(bytes(out))

    @classmethod
    def load(cls, path: str | Path) -> tuple["RobultModel", dict]:
        buf = Path(path).read_bytes()
        if buf[:4] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a Robult checkpoint")
        pos = 4
        version, M, d, n_out = struct.unpack_from("<IIII", buf, pos)
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint version {version} does not match supported version {CHECKPOINT_VERSION}")
        pos += 16
        raw_dims = list(struct.unpack_from(f"<{M}I", buf, pos))
        pos += 4 * M
        (unique,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        (mlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        meta = json.loads(buf[pos:pos + mlen].decode())
        pos += mlen
        (n_layers,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shapes = []
        for _ in range(n_layers):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            shapes.append((name, shape))
        model = cls(raw_dims, d=d, n_out=n_out, unique_branches=bool(unique))
        state = {}
        for name, shape in shapes:
            n = int(np.prod(shape))
            state[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * n
        model.load_state_dict(state)
        return model, meta


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def forward_all(model: RobultModel, batch) -> ForwardOutputs:
    return model.forward_all(batch)


def infer(model: RobultModel, batch, available: Iterable[int]) -> np.ndarray:
    return model.infer(batch.modalities, available)
