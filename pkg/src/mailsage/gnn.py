"""Inductive 3-layer mean-aggregation GNN over node activity features.

The network is trained once on the clean graph with an unsupervised
neighborhood objective; embeddings for nodes injected later are computed
inductively from their local neighborhoods without retraining.

Inference is written so each node's embedding depends only on values in its
own 3-hop neighborhood, bitwise: per-row matvecs and per-segment neighbor
means, never whole-matrix kernels whose rounding could shift when unrelated
nodes are added.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .ingest import ActivityGraph

_CKPT_MAGIC = b"MSGN"
_CKPT_VERSION = 1

HIDDEN_DIM = 256
OUT_DIM = 128

_PROJ_MODES = ("weekly-bin", "weekly-stats", "truncate", "identity")


@dataclass(frozen=True)
class FeatureProjection:
    """Maps a length-T daily series onto the model's fixed input width.

    ``weekly-bin`` sums days into calendar weeks and zero-pads or truncates
    to ``input_dim``. ``weekly-stats`` appends five activity summaries
    (log1p total, log1p max, log1p active-day count, mean inter-send gap and
    last active day, both scaled by T) after the weekly bins; it is the
    pipeline default because it fills the standard 212-wide input exactly
    (207 weeks + 5 summaries for T = 1448).
    """

    mode: str = "weekly-stats"
    input_dim: int = 212

    def __post_init__(self):
        if self.mode not in _PROJ_MODES:
            raise ConfigError(f"unknown projection mode {self.mode!r}")
        if self.input_dim <= 0:
            raise ConfigError(f"input_dim must be positive, got {self.input_dim}")


def project_features(series: np.ndarray, proj: FeatureProjection) -> np.ndarray:
    """Project one daily-count series to a ``proj.input_dim`` float vector."""
    t_days = series.shape[0]
    x = np.asarray(series, dtype=np.float64)
    if proj.mode == "identity":
        if proj.input_dim != t_days:
            raise ConfigError(f"identity projection needs input_dim == {t_days}")
        return x.copy()
    if proj.mode == "truncate":
        out = np.zeros(proj.input_dim)
        n = min(proj.input_dim, t_days)
        out[:n] = x[:n]
        return out

    n_weeks = -(-t_days // 7)
    padded = np.zeros(n_weeks * 7)
    padded[:t_days] = x
    bins = padded.reshape(n_weeks, 7).sum(axis=1)

    if proj.mode == "weekly-bin":
        out = np.zeros(proj.input_dim)
        n = min(proj.input_dim, n_weeks)
        out[:n] = bins[:n]
        return out

    # weekly-stats
    if proj.input_dim != n_weeks + 5:
        raise ConfigError(
            f"weekly-stats projection needs input_dim == {n_weeks + 5} for T={t_days}"
        )
    active = np.flatnonzero(x)
    if active.size >= 2:
        mean_gap = float(np.diff(active).mean())
    else:
        mean_gap = 0.0
    last_active = float(active[-1] + 1) if active.size else 0.0
    stats = np.array(
        [
            np.log1p(x.sum()),
            np.log1p(x.max() if x.size else 0.0),
            np.log1p(active.size),
            mean_gap / t_days,
            last_active / t_days,
        ]
    )
    return np.concatenate([bins, stats])


@dataclass
class SageModel:
    """3-layer mean-aggregation model: input_dim -> 256 -> 256 -> 128, L2 out."""

    projection: FeatureProjection
    w_self: list[np.ndarray]
    w_neigh: list[np.ndarray]
    bias: list[np.ndarray]
    feature_scale: np.ndarray
    train_nodes: tuple[int, ...] = ()
    loss_history: list[float] = field(default_factory=list)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.projection.input_dim, *[w.shape[1] for w in self.w_self])

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for block in (*self.w_self, *self.w_neigh, *self.bias, self.feature_scale):
            digest.update(np.ascontiguousarray(block).tobytes())
        return digest.hexdigest()


def _init_params(input_dim: int, rng: np.random.Generator):
    dims = (input_dim, HIDDEN_DIM, HIDDEN_DIM, OUT_DIM)
    w_self, w_neigh, bias = [], [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (d_in + d_out))
        w_self.append(rng.uniform(-limit, limit, size=(d_in, d_out)))
        w_neigh.append(rng.uniform(-limit, limit, size=(d_in, d_out)))
        bias.append(np.zeros(d_out))
    return w_self, w_neigh, bias


def _feature_matrix(graph: ActivityGraph, proj: FeatureProjection, nodes: Sequence[int]) -> np.ndarray:
    return np.stack([project_features(graph.series[n], proj) for n in nodes])


def _neighbor_arrays(graph: ActivityGraph, nodes: Sequence[int]):
    """Concatenated sorted neighbor positions plus reduceat offsets and degrees."""
    pos = {n: i for i, n in enumerate(nodes)}
    nbrs = graph.undirected_neighbors()
    concat: list[int] = []
    offsets = np.zeros(len(nodes), dtype=np.int64)
    degrees = np.zeros(len(nodes), dtype=np.int64)
    for i, n in enumerate(nodes):
        offsets[i] = len(concat)
        lst = nbrs.get(n, [])
        concat.extend(pos[v] for v in lst)
        degrees[i] = len(lst)
    return np.asarray(concat, dtype=np.int64), offsets, degrees


def _aggregate(h: np.ndarray, concat: np.ndarray, offsets: np.ndarray, degrees: np.ndarray) -> np.ndarray:
    """Row v = mean of h over v's neighbors; zero row for isolated nodes.

    reduceat sums each node's segment independently, so a node's aggregate
    never depends on rows outside its neighbor list.
    """
    out = np.zeros((offsets.shape[0], h.shape[1]))
    if concat.size == 0:
        return out
    gathered = h[concat]
    # clamp trailing empty-segment offsets; those rows get masked out below
    offs = np.minimum(offsets, concat.size - 1)
    sums = np.add.reduceat(gathered, offs, axis=0)
    nonzero = degrees > 0
    out[nonzero] = sums[nonzero] / degrees[nonzero, None]
    return out


def _rows_matmul(h: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row-by-row matvec; each output row depends only on its input row."""
    out = np.empty((h.shape[0], w.shape[1]))
    for i in range(h.shape[0]):
        out[i] = h[i] @ w
    return out


def _forward(model: SageModel, x: np.ndarray, agg_arrays, *, row_stable: bool):
    matmul = _rows_matmul if row_stable else np.matmul
    concat, offsets, degrees = agg_arrays
    h = x
    caches = []
    for layer in range(3):
        neigh = _aggregate(h, concat, offsets, degrees)
        pre = matmul(h, model.w_self[layer]) + matmul(neigh, model.w_neigh[layer]) + model.bias[layer]
        act = np.maximum(pre, 0.0) if layer < 2 else pre
        caches.append((h, neigh, pre))
        h = act
    norms = np.sqrt((h * h).sum(axis=1))
    safe = np.where(norms > 1e-12, norms, 1.0)
    z = h / safe[:, None]
    return z, norms, caches


def _scatter_neighbor_grad(dagg: np.ndarray, concat, offsets, degrees) -> np.ndarray:
    """Transpose of _aggregate: spread each row's gradient to its neighbors."""
    dh = np.zeros_like(dagg)
    if concat.size == 0:
        return dh
    nonzero = degrees > 0
    scaled = np.zeros_like(dagg)
    scaled[nonzero] = dagg[nonzero] / degrees[nonzero, None]
    contributions = np.repeat(scaled, degrees, axis=0)
    np.add.at(dh, concat, contributions)
    return dh


def train_sage(
    graph: ActivityGraph,
    proj: FeatureProjection | None = None,
    *,
    epochs: int = 60,
    lr: float = 0.5,
    negatives: int = 5,
    seed: int = 0,
) -> SageModel:
    """Train on the clean graph with the graph-context logistic objective.

    Positives are undirected-skeleton edges; each endpoint also draws
    ``negatives`` nodes from a degree^0.75 distribution. Deterministic for a
    fixed seed. Refuses edgeless graphs (no positive pairs).
    """
    proj = proj or FeatureProjection()
    nodes = graph.nodes
    if not nodes:
        raise DataError("cannot train on an empty graph")
    pairs = sorted({(min(u, v), max(u, v)) for (u, v) in graph.edges if u != v})
    if not pairs:
        raise DataError("cannot train without edges: no positive pairs")

    pos = {n: i for i, n in enumerate(nodes)}
    edges_idx = np.asarray([(pos[u], pos[v]) for u, v in pairs], dtype=np.int64)

    rng = np.random.default_rng(seed)
    w_self, w_neigh, bias = _init_params(proj.input_dim, rng)

    x_raw = _feature_matrix(graph, proj, nodes)
    scale = np.maximum(x_raw.std(axis=0), 1.0)
    x = x_raw / scale

    model = SageModel(
        projection=proj,
        w_self=w_self,
        w_neigh=w_neigh,
        bias=bias,
        feature_scale=scale,
        train_nodes=tuple(nodes),
    )
    agg_arrays = _neighbor_arrays(graph, nodes)

    degrees = np.zeros(len(nodes))
    for u, v in edges_idx:
        degrees[u] += 1
        degrees[v] += 1
    neg_p = degrees**0.75
    neg_p /= neg_p.sum()

    n_edges = edges_idx.shape[0]
    for _ in range(epochs):
        z, norms, caches = _forward(model, x, agg_arrays, row_stable=False)
        neg_samples = rng.choice(len(nodes), size=(n_edges, 2, negatives), p=neg_p)

        dz = np.zeros_like(z)
        total = 0.0
        n_terms = n_edges * (1 + 2 * negatives)

        s_pos = (z[edges_idx[:, 0]] * z[edges_idx[:, 1]]).sum(axis=1)
        sig_pos = 1.0 / (1.0 + np.exp(-s_pos))
        total += -np.log(np.maximum(sig_pos, 1e-12)).sum()
        coef = (sig_pos - 1.0) / n_terms
        np.add.at(dz, edges_idx[:, 0], coef[:, None] * z[edges_idx[:, 1]])
        np.add.at(dz, edges_idx[:, 1], coef[:, None] * z[edges_idx[:, 0]])

        for side in (0, 1):
            anchors = edges_idx[:, side]
            partners = edges_idx[:, 1 - side]
            for j in range(negatives):
                negs = neg_samples[:, side, j]
                # a draw that lands on the anchor or its positive partner is no
                # contrast signal; mask it (matters on tiny graphs)
                valid = (negs != anchors) & (negs != partners)
                s_neg = (z[anchors] * z[negs]).sum(axis=1)
                sig_neg = 1.0 / (1.0 + np.exp(-s_neg))
                total += -(valid * np.log(np.maximum(1.0 - sig_neg, 1e-12))).sum()
                coef = valid * sig_neg / n_terms
                np.add.at(dz, anchors, coef[:, None] * z[negs])
                np.add.at(dz, negs, coef[:, None] * z[anchors])

        model.loss_history.append(total / n_terms)

        # back through L2 row normalization
        safe = np.where(norms > 1e-12, norms, 1.0)
        dh = (dz - (dz * z).sum(axis=1, keepdims=True) * z) / safe[:, None]

        concat, offsets, degs = agg_arrays
        for layer in (2, 1, 0):
            h_in, neigh, pre = caches[layer]
            dpre = dh if layer == 2 else dh * (pre > 0)
            dw_self = h_in.T @ dpre
            dw_neigh = neigh.T @ dpre
            db = dpre.sum(axis=0)
            dh = dpre @ model.w_self[layer].T + _scatter_neighbor_grad(
                dpre @ model.w_neigh[layer].T, concat, offsets, degs
            )
            model.w_self[layer] -= lr * dw_self
            model.w_neigh[layer] -= lr * dw_neigh
            model.bias[layer] -= lr * db

    return model


def embed_nodes(
    model: SageModel, graph: ActivityGraph, nodes: Sequence[int] | None = None
) -> dict[int, np.ndarray]:
    """Inductive unit-norm embeddings for ``nodes`` (default: whole graph)."""
    all_nodes = graph.nodes
    wanted = list(all_nodes) if nodes is None else list(nodes)
    known = set(all_nodes)
    for n in wanted:
        if n not in known:
            raise DataError(f"unknown node id {n}")
    x = _feature_matrix(graph, model.projection, all_nodes) / model.feature_scale
    agg_arrays = _neighbor_arrays(graph, all_nodes)
    z, _, _ = _forward(model, x, agg_arrays, row_stable=True)
    pos = {n: i for i, n in enumerate(all_nodes)}
    return {n: z[pos[n]].copy() for n in wanted}


def cosine_sim01(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity clamped to [0, 1]; errors on zero vectors."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        raise NumericError("cosine similarity of a zero vector is undefined")
    return max(0.0, float(np.dot(a, b)) / (na * nb))


# ---------------------------------------------------------------------------
# Checkpoint format: dims header + row-major little-endian float32 blocks.

_PROJ_CODE = {m: i for i, m in enumerate(_PROJ_MODES)}


def _write_f32(buf: io.BytesIO, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f4")
    buf.write(struct.pack("<I", data.ndim))
    for s in data.shape:
        buf.write(struct.pack("<I", s))
    buf.write(data.tobytes())


def _read_f32(buf: io.BytesIO) -> np.ndarray:
    (ndim,) = struct.unpack("<I", buf.read(4))
    shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
    n = int(np.prod(shape))
    raw = buf.read(4 * n)
    if len(raw) != 4 * n:
        raise DataError("truncated checkpoint tensor")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def save_model(model: SageModel, path) -> None:
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(struct.pack("<I", _CKPT_VERSION))
    dims = model.dims
    buf.write(struct.pack("<4I", *dims))
    buf.write(struct.pack("<II", _PROJ_CODE[model.projection.mode], model.projection.input_dim))
    buf.write(struct.pack("<I", len(model.train_nodes)))
    for n in model.train_nodes:
        buf.write(struct.pack("<I", n))
    _write_f32(buf, model.feature_scale)
    for layer in range(3):
        _write_f32(buf, model.w_self[layer])
        _write_f32(buf, model.w_neigh[layer])
        _write_f32(buf, model.bias[layer])
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path) -> SageModel:
    try:
        with open(path, "rb") as fh:
            buf = io.BytesIO(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read model checkpoint {path}: {exc}") from exc
    if buf.read(4) != _CKPT_MAGIC:
        raise DataError("bad model checkpoint magic")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != _CKPT_VERSION:
        raise DataError(f"unsupported model checkpoint version {version}")
    struct.unpack("<4I", buf.read(16))  # dims, re-derived from tensors
    mode_code, input_dim = struct.unpack("<II", buf.read(8))
    (n_train,) = struct.unpack("<I", buf.read(4))
    train_nodes = struct.unpack(f"<{n_train}I", buf.read(4 * n_train)) if n_train else ()
    feature_scale = _read_f32(buf)
    w_self, w_neigh, bias = [], [], []
    for _ in range(3):
        w_self.append(_read_f32(buf))
        w_neigh.append(_read_f32(buf))
        bias.append(_read_f32(buf))
    return SageModel(
        projection=FeatureProjection(mode=_PROJ_MODES[mode_code], input_dim=input_dim),
        w_self=w_self,
        w_neigh=w_neigh,
        bias=bias,
        feature_scale=feature_scale,
        train_nodes=tuple(train_nodes),
    )
