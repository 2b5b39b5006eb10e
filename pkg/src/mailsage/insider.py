"""Ego-centric risk branch for established internal sender-recipient pairs.

Compromised accounts look structurally normal, so this branch compares an
interaction against the user's own history instead of the global baseline:
pairwise volume deviation, linguistic drift of the current message against a
rolling centroid of recent sent messages, the verifier's manipulation
probability, and the pair's structural similarity, combined as

    s_insider = 0.3*d_rec + 0.4*d_ling + 0.2*i_man + 0.1*s_struct
"""

from __future__ import annotations

import io
import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .gnn import cosine_sim01
from .ingest import ActivityGraph
from .providers import EMBED_DIM, EmbeddingSequence
from .scoring import erf_positive

N_EST_DEFAULT = 30
INSIDER_THRESHOLD_DEFAULT = 0.60
WINDOW_SIZE = 50

W_REC, W_LING, W_MAN, W_STRUCT = 0.3, 0.4, 0.2, 0.1

_PROFILE_MAGIC = b"MSIP"
_PROFILE_VERSION = 1


def is_established_internal_pair(
    graph: ActivityGraph,
    v: int,
    u: int,
    day: int,
    train_nodes: frozenset[int] | set[int],
    n_est: int = N_EST_DEFAULT,
) -> bool:
    """Both endpoints were in the training graph and have a real send history.

    "Real" means at least ``n_est`` distinct active send-days before ``day``;
    injected attackers (absent from training) and young accounts fail this.
    """
    if v not in train_nodes or u not in train_nodes:
        return False
    for node in (v, u):
        if node not in graph.series:
            return False
        active = int(np.count_nonzero(graph.series[node][: day - 1]))
        if active < n_est:
            return False
    return True


def pair_daily_series(graph: ActivityGraph, v: int, u: int) -> np.ndarray:
    """Daily email counts from v to u over the full horizon."""
    vec = np.zeros(graph.t_days, dtype=np.int64)
    days = graph.edges.get((v, u))
    if days:
        for day, count in days.items():
            vec[day - 1] = count
    return vec


def pairwise_recipient_deviation(pair_series: np.ndarray, day: int) -> float:
    """Volume z-score of the pair channel (not the whole user), erf-mapped."""
    if day < 2 or day > pair_series.shape[0]:
        raise DataError(f"pairwise deviation day {day} outside [2, {pair_series.shape[0]}]")
    hist = np.asarray(pair_series[: day - 1], dtype=np.float64)
    x = float(pair_series[day - 1])
    mu = float(hist.mean())
    sigma = float(hist.std())
    if sigma == 0.0:
        return 1.0 if x > mu else 0.0
    return erf_positive((x - mu) / sigma)


@dataclass
class InsiderProfile:
    """Rolling window of a user's recent sent-message embeddings."""

    node: int
    window: deque = field(default_factory=lambda: deque(maxlen=WINDOW_SIZE))

    def push(self, message_embedding: EmbeddingSequence) -> None:
        # only frozen provider embeddings may enter the profile
        if message_embedding.provenance not in ("file", "stub"):
            raise DataError(
                f"profile for node {self.node} fed a non-provider embedding "
                f"({message_embedding.provenance!r})"
            )
        self.window.append(message_embedding.pooled())

    @property
    def centroid(self) -> np.ndarray:
        if not self.window:
            raise DataError(f"profile for node {self.node} is empty")
        return np.mean(np.stack(list(self.window)), axis=0)

    def __len__(self) -> int:
        return len(self.window)


def linguistic_drift(current: EmbeddingSequence, profile: InsiderProfile) -> float:
    """1 - clamped cosine between the current message and the window centroid."""
    centroid = profile.centroid
    norm = np.linalg.norm(centroid)
    if norm < 1e-12:
        raise NumericError(f"zero centroid for node {profile.node}")
    try:
        sim = cosine_sim01(current.pooled(), centroid / norm)
    except NumericError:
        raise NumericError("zero current-message embedding") from None
    return 1.0 - sim


def insider_score(d_rec: float, d_ling: float, i_man: float, s_struct: float) -> float:
    """Fixed-weight risk sum; the weights close to 1 so the result is in [0,1]."""
    for name, val in (("d_rec", d_rec), ("d_ling", d_ling), ("i_man", i_man), ("s_struct", s_struct)):
        if not 0.0 <= val <= 1.0:
            raise DataError(f"insider component {name} out of [0,1]: {val}")
    return W_REC * d_rec + W_LING * d_ling + W_MAN * i_man + W_STRUCT * s_struct


def insider_threshold(value: float | None = None) -> float:
    """Detection threshold for the insider branch (default 0.60)."""
    if value is None:
        return INSIDER_THRESHOLD_DEFAULT
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"insider threshold must be in [0,1], got {value}")
    return float(value)


@dataclass(frozen=True)
class InsiderScore:
    d_rec: float
    d_ling: float
    i_man: float
    s_struct: float

    @property
    def s_insider(self) -> float:
        return insider_score(self.d_rec, self.d_ling, self.i_man, self.s_struct)


# ---------------------------------------------------------------------------
# Profile store: per-node binary record (window length, rows of 768 floats).


def save_profiles(profiles: dict[int, InsiderProfile], path) -> None:
    buf = io.BytesIO()
    buf.write(_PROFILE_MAGIC)
    buf.write(struct.pack("<II", _PROFILE_VERSION, len(profiles)))
    for node in sorted(profiles):
        window = list(profiles[node].window)
        buf.write(struct.pack("<II", node, len(window)))
        for vec in window:
            buf.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_profiles(path) -> dict[int, InsiderProfile]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read profile store {path}: {exc}") from exc
    buf = io.BytesIO(blob)
    if buf.read(4) != _PROFILE_MAGIC:
        raise DataError("bad profile store magic")
    version, count = struct.unpack("<II", buf.read(8))
    if version != _PROFILE_VERSION:
        raise DataError(f"unsupported profile store version {version}")
    profiles: dict[int, InsiderProfile] = {}
    for _ in range(count):
        node, length = struct.unpack("<II", buf.read(8))
        prof = InsiderProfile(node=node)
        for _ in range(length):
            raw = buf.read(4 * EMBED_DIM)
            if len(raw) != 4 * EMBED_DIM:
                raise DataError(f"truncated profile store at byte offset {buf.tell()}")
            prof.window.append(np.frombuffer(raw, dtype="<f4").astype(np.float64))
        profiles[node] = prof
    return profiles
