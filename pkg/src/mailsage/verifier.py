"""Co-attention verification head over (history summary, current message).

Two token-level embedding sequences are fused through an affinity matrix
into attention distributions over each side; the attended summary vectors
feed a bottleneck MLP that outputs a manipulation probability. The encoder
stays behind the provider boundary; only the head trains here, by plain
full-batch gradient descent on class-weighted binary cross-entropy.

Everything is numpy with explicit backward passes so the analytic gradients
can be checked against central finite differences.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .providers import EmbeddingSequence

ATTENTION_DIM = 256
MLP_DIMS = (1536, 512, 256, 128, 1)
DROPOUT_RATE = 0.3
NO_HISTORY_SENTINEL = "no prior contact"

_HEAD_MAGIC = b"MSVH"
_HEAD_VERSION = 1

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715
_LN_EPS = 1e-5
_P_CLAMP = 1e-7


@dataclass
class CoAttentionParams:
    w_l: np.ndarray  # (d, d)
    w_s: np.ndarray  # (k, d)
    w_c: np.ndarray  # (k, d)
    w_as: np.ndarray  # (k,)
    w_ac: np.ndarray  # (k,)

    @property
    def d(self) -> int:
        return self.w_l.shape[0]

    @property
    def k(self) -> int:
        return self.w_s.shape[0]

    def items(self):
        yield "w_l", self.w_l
        yield "w_s", self.w_s
        yield "w_c", self.w_c
        yield "w_as", self.w_as
        yield "w_ac", self.w_ac


@dataclass
class MlpParams:
    """Bottleneck classifier: affine -> GELU -> layernorm -> dropout, x3, then sigmoid."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    gammas: list[np.ndarray]
    betas: list[np.ndarray]
    dropout: float = DROPOUT_RATE

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1], *[w.shape[0] for w in self.weights])

    def items(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"mlp_w{i}", w
            yield f"mlp_b{i}", b
        for i, (g, bt) in enumerate(zip(self.gammas, self.betas)):
            yield f"mlp_g{i}", g
            yield f"mlp_beta{i}", bt


def init_head(
    d: int = 768,
    k: int = ATTENTION_DIM,
    hidden: tuple[int, ...] = MLP_DIMS[1:-1],
    dropout: float = DROPOUT_RATE,
    seed: int = 0,
) -> tuple[CoAttentionParams, MlpParams]:
    rng = np.random.default_rng(seed)

    def xavier(shape):
        fan = sum(shape) if len(shape) > 1 else shape[0] + 1
        return rng.uniform(-1, 1, size=shape) * np.sqrt(6.0 / fan)

    co = CoAttentionParams(
        w_l=xavier((d, d)),
        w_s=xavier((k, d)),
        w_c=xavier((k, d)),
        w_as=xavier((k,)),
        w_ac=xavier((k,)),
    )
    dims = (2 * d, *hidden, 1)
    weights, biases, gammas, betas = [], [], [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weights.append(xavier((d_out, d_in)))
        biases.append(np.zeros(d_out))
    for h in hidden:
        gammas.append(np.ones(h))
        betas.append(np.zeros(h))
    return co, MlpParams(weights=weights, biases=biases, gammas=gammas, betas=betas, dropout=dropout)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)


def _coattention_with_cache(h1: np.ndarray, h2: np.ndarray, co: CoAttentionParams):
    d = co.d
    if h1.ndim != 2 or h2.ndim != 2 or h1.shape[1] != d or h2.shape[1] != d:
        raise DataError(
            f"co-attention expects (N,{d}) and (T,{d}); got {h1.shape} and {h2.shape}"
        )
    a1 = co.w_c @ h1.T  # (k, N)
    a2 = co.w_s @ h2.T  # (k, T)
    f_pre = h1 @ co.w_l @ h2.T  # (N, T)
    f = np.tanh(f_pre)
    hs = np.tanh(a2 + a1 @ f)  # (k, T)
    hc = np.tanh(a1 + a2 @ f.T)  # (k, N)
    a_s = _softmax(co.w_as @ hs)  # (T,)
    a_c = _softmax(co.w_ac @ hc)  # (N,)
    s_hat = h2.T @ a_s
    c_hat = h1.T @ a_c
    z = np.concatenate([s_hat, c_hat])
    cache = (h1, h2, f, hs, hc, a_s, a_c)
    return z, cache


def coattention_forward(
    h1: np.ndarray, h2: np.ndarray, co: CoAttentionParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fused representation z (length 2d) plus the two attention distributions."""
    z, cache = _coattention_with_cache(h1, h2, co)
    _, _, _, _, _, a_s, a_c = cache
    return z, a_s, a_c


def _coattention_backward(dz: np.ndarray, cache, co: CoAttentionParams) -> dict[str, np.ndarray]:
    h1, h2, f, hs, hc, a_s, a_c = cache
    d = co.d
    ds_hat, dc_hat = dz[:d], dz[d:]

    da_s = h2 @ ds_hat
    ds_logits = a_s * (da_s - float(a_s @ da_s))
    dw_as = hs @ ds_logits
    dhs_pre = np.outer(co.w_as, ds_logits) * (1.0 - hs * hs)

    da_c = h1 @ dc_hat
    dc_logits = a_c * (da_c - float(a_c @ da_c))
    dw_ac = hc @ dc_logits
    dhc_pre = np.outer(co.w_ac, dc_logits) * (1.0 - hc * hc)

    a1 = co.w_c @ h1.T
    a2 = co.w_s @ h2.T
    da1 = dhs_pre @ f.T + dhc_pre
    da2 = dhs_pre + dhc_pre @ f
    df = a1.T @ dhs_pre + dhc_pre.T @ a2
    df_pre = df * (1.0 - f * f)

    return {
        "w_l": h1.T @ df_pre @ h2,
        "w_s": da2 @ h2,
        "w_c": da1 @ h1,
        "w_as": dw_as,
        "w_ac": dw_ac,
    }


def _mlp_with_cache(
    z: np.ndarray,
    mlp: MlpParams,
    train: bool,
    rng: np.random.Generator | None,
):
    if z.shape != (mlp.dims[0],):
        raise DataError(f"mlp expects input of length {mlp.dims[0]}, got {z.shape}")
    h = z
    caches = []
    n_hidden = len(mlp.gammas)
    for i in range(n_hidden):
        u = mlp.weights[i] @ h + mlp.biases[i]
        if not np.isfinite(u).all():
            raise NumericError(f"non-finite activations in mlp layer {i}")
        g = _gelu(u)
        mu = g.mean()
        var = g.var()
        inv = 1.0 / np.sqrt(var + _LN_EPS)
        m = (g - mu) * inv
        y = mlp.gammas[i] * m + mlp.betas[i]
        if train and mlp.dropout > 0.0:
            keep = 1.0 - mlp.dropout
            mask = (rng.random(y.shape) < keep) / keep
        else:
            mask = np.ones_like(y)
        caches.append((h, u, g, m, inv, mask))
        h = y * mask
    logit = float(mlp.weights[-1] @ h + mlp.biases[-1])
    if not np.isfinite(logit):
        raise NumericError(f"non-finite activations in mlp layer {n_hidden}")
    p = 1.0 / (1.0 + np.exp(-logit))
    caches.append((h, logit))
    return p, caches


def mlp_forward(
    z: np.ndarray,
    mlp: MlpParams,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> float:
    """Probability from the bottleneck stack; eval mode disables dropout."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mlp mode must be train or eval, got {mode!r}")
    train = mode == "train"
    if train and mlp.dropout > 0.0 and rng is None:
        raise ConfigError("train-mode dropout needs an rng")
    p, _ = _mlp_with_cache(z, mlp, train, rng)
    return float(p)


def _mlp_backward(dlogit: float, caches, mlp: MlpParams):
    grads: dict[str, np.ndarray] = {}
    n_hidden = len(mlp.gammas)
    h_last, _ = caches[-1]
    grads[f"mlp_w{n_hidden}"] = dlogit * h_last[None, :]
    grads[f"mlp_b{n_hidden}"] = np.array([dlogit])
    dh = mlp.weights[-1][0] * dlogit
    for i in range(n_hidden - 1, -1, -1):
        h_in, u, g, m, inv, mask = caches[i]
        dy = dh * mask
        grads[f"mlp_g{i}"] = dy * m
        grads[f"mlp_beta{i}"] = dy.copy()
        dm = dy * mlp.gammas[i]
        dg = inv * (dm - dm.mean() - m * (dm * m).mean())
        du = dg * _gelu_grad(u)
        grads[f"mlp_w{i}"] = np.outer(du, h_in)
        grads[f"mlp_b{i}"] = du.copy()
        dh = mlp.weights[i].T @ du
    return grads, dh


def bce_loss(
    p: float | np.ndarray,
    label: float | np.ndarray,
    class_weights: tuple[float, float] = (1.0, 1.0),
) -> float:
    """Class-weighted binary cross-entropy; batched inputs return the mean."""
    w_pos, w_neg = class_weights
    p_arr = np.clip(np.asarray(p, dtype=np.float64), _P_CLAMP, 1.0 - _P_CLAMP)
    y = np.asarray(label, dtype=np.float64)
    loss = -(w_pos * y * np.log(p_arr) + w_neg * (1.0 - y) * np.log(1.0 - p_arr))
    return float(loss.mean())


def _head_loss_and_grads(
    batch: Sequence[tuple[np.ndarray, np.ndarray, int]],
    co: CoAttentionParams,
    mlp: MlpParams,
    class_weights: tuple[float, float],
    train: bool,
    rng: np.random.Generator | None,
):
    """Mean loss over the batch plus mean gradients for every parameter."""
    w_pos, w_neg = class_weights
    total_loss = 0.0
    grads: dict[str, np.ndarray] = {
        name: np.zeros_like(t) for name, t in (*co.items(), *mlp.items())
    }
    n = len(batch)
    for h1, h2, y in batch:
        z, co_cache = _coattention_with_cache(h1, h2, co)
        p, mlp_caches = _mlp_with_cache(z, mlp, train, rng)
        p_c = min(max(p, _P_CLAMP), 1.0 - _P_CLAMP)
        total_loss += -(w_pos * y * np.log(p_c) + w_neg * (1 - y) * np.log(1.0 - p_c))
        # d(loss)/d(logit) through the sigmoid
        dlogit = (-w_pos * y * (1.0 - p_c) + w_neg * (1 - y) * p_c) / n
        mlp_grads, dz = _mlp_backward(dlogit, mlp_caches, mlp)
        co_grads = _coattention_backward(dz, co_cache, co)
        for name, g in (*mlp_grads.items(), *co_grads.items()):
            grads[name] += g
    return total_loss / n, grads


def _apply_grads(co: CoAttentionParams, mlp: MlpParams, grads, lr: float) -> None:
    for name, tensor in (*co.items(), *mlp.items()):
        tensor -= lr * grads[name]


@dataclass
class TrainResult:
    co: CoAttentionParams
    mlp: MlpParams
    loss_history: list[float] = field(default_factory=list)
    class_weights: tuple[float, float] = (1.0, 1.0)
    train_index: tuple[int, ...] = ()
    test_index: tuple[int, ...] = ()


def train_head(
    dataset: Sequence[tuple[np.ndarray, np.ndarray, int]],
    *,
    epochs: int = 50,
    lr: float = 0.1,
    seed: int = 0,
    stage: int = 1,
    d: int = 768,
    k: int = ATTENTION_DIM,
    hidden: tuple[int, ...] = MLP_DIMS[1:-1],
    dropout: float = DROPOUT_RATE,
    batch_size: int = 32,
    class_weights: tuple[float, float] | None = None,
) -> TrainResult:
    """Stage-1 training: encoder frozen, head trained by plain mini-batch
    descent at a fixed learning rate.

    Splits 70/30 (seeded shuffle), weights classes by inverse frequency on
    the train split unless given explicitly, and is deterministic for a
    fixed seed. Stage 2 (encoder fine-tuning) belongs to the embedding
    provider, not this head.
    """
    if stage != 1:
        raise ConfigError("only stage 1 (frozen encoder) trains here")
    if not dataset:
        raise DataError("empty training dataset")
    labels = {y for _, _, y in dataset}
    if labels != {0, 1}:
        raise DataError(f"need both classes in the dataset, got labels {sorted(labels)}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    n_train = max(1, int(round(len(dataset) * 0.7)))
    train_idx, test_idx = order[:n_train], order[n_train:]
    train_set = [dataset[i] for i in train_idx]

    if class_weights is None:
        n_pos = sum(y for _, _, y in train_set)
        n_neg = len(train_set) - n_pos
        if n_pos == 0 or n_neg == 0:
            raise DataError("train split collapsed to a single class; reshuffle or add data")
        class_weights = (len(train_set) / (2.0 * n_pos), len(train_set) / (2.0 * n_neg))

    co, mlp = init_head(d=d, k=k, hidden=hidden, dropout=dropout, seed=seed)
    drop_rng = np.random.default_rng(seed + 1)
    result = TrainResult(
        co=co,
        mlp=mlp,
        class_weights=class_weights,
        train_index=tuple(int(i) for i in train_idx),
        test_index=tuple(int(i) for i in test_idx),
    )
    batch_size = max(1, min(batch_size, len(train_set)))
    for _ in range(epochs):
        perm = rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(train_set), batch_size):
            batch = [train_set[i] for i in perm[start : start + batch_size]]
            loss, grads = _head_loss_and_grads(batch, co, mlp, class_weights, True, drop_rng)
            _apply_grads(co, mlp, grads, lr)
            epoch_loss += loss * len(batch)
        result.loss_history.append(float(epoch_loss / len(train_set)))
    return result


def predict(h1: np.ndarray, h2: np.ndarray, co: CoAttentionParams, mlp: MlpParams) -> float:
    z, _ = _coattention_with_cache(h1, h2, co)
    p, _ = _mlp_with_cache(z, mlp, False, None)
    return float(p)


def accuracy(
    data: Sequence[tuple[np.ndarray, np.ndarray, int]], co: CoAttentionParams, mlp: MlpParams
) -> float:
    if not data:
        return 0.0
    hits = sum(1 for h1, h2, y in data if (predict(h1, h2, co, mlp) >= 0.5) == bool(y))
    return hits / len(data)


@dataclass(frozen=True)
class VerifierVerdict:
    probability: float
    flag: bool

    @property
    def i_man(self) -> float:
        return self.probability


def summarize_history(messages: Sequence[str], budget: int = 64) -> str:
    """Newest-first concatenation truncated to ``budget`` tokens.

    Stub summarizer: pluggable so an offline abstractive model can replace
    it; empty history maps to a fixed sentinel phrase.
    """
    if not messages:
        return NO_HISTORY_SENTINEL
    tokens: list[str] = []
    for msg in reversed(list(messages)):
        tokens.extend(msg.split())
        if len(tokens) >= budget:
            break
    return " ".join(tokens[:budget])


def verify_pair(
    history_summary: str,
    current: str,
    provider,
    co: CoAttentionParams,
    mlp: MlpParams,
) -> VerifierVerdict:
    """Resolve both texts through the provider and classify the pair."""
    summary_seq = provider.embed_text(history_summary)
    current_seq = provider.embed_text(current)
    for seq in (summary_seq, current_seq):
        if not isinstance(seq, EmbeddingSequence):
            raise DataError("provider returned unresolved content")
    p = predict(summary_seq.rows, current_seq.rows, co, mlp)
    return VerifierVerdict(probability=p, flag=p >= 0.5)


# ---------------------------------------------------------------------------
# Head checkpoint: shape table + little-endian float32 tensors.


def save_head(co: CoAttentionParams, mlp: MlpParams, path) -> None:
    buf = io.BytesIO()
    buf.write(_HEAD_MAGIC)
    buf.write(struct.pack("<I", _HEAD_VERSION))
    tensors = list((*co.items(), *mlp.items()))
    buf.write(struct.pack("<If", len(tensors), mlp.dropout))
    for name, tensor in tensors:
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        buf.write(struct.pack("<I", arr.ndim))
        for s in arr.shape:
            buf.write(struct.pack("<I", s))
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_head(path) -> tuple[CoAttentionParams, MlpParams]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read head checkpoint {path}: {exc}") from exc
    buf = io.BytesIO(blob)
    if buf.read(4) != _HEAD_MAGIC:
        raise DataError("bad head checkpoint magic")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != _HEAD_VERSION:
        raise DataError(f"unsupported head checkpoint version {version}")
    n_tensors, dropout = struct.unpack("<If", buf.read(8))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", buf.read(2))
        name = buf.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", buf.read(4))
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        n = int(np.prod(shape))
        raw = buf.read(4 * n)
        if len(raw) != 4 * n:
            raise DataError(f"truncated head checkpoint tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    co = CoAttentionParams(
        w_l=tensors["w_l"],
        w_s=tensors["w_s"],
        w_c=tensors["w_c"],
        w_as=tensors["w_as"],
        w_ac=tensors["w_ac"],
    )
    n_affine = sum(1 for name in tensors if name.startswith("mlp_w"))
    n_hidden = n_affine - 1
    mlp = MlpParams(
        weights=[tensors[f"mlp_w{i}"] for i in range(n_affine)],
        biases=[tensors[f"mlp_b{i}"] for i in range(n_affine)],
        gammas=[tensors[f"mlp_g{i}"] for i in range(n_hidden)],
        betas=[tensors[f"mlp_beta{i}"] for i in range(n_hidden)],
        dropout=float(dropout),
    )
    return co, mlp
