"""Message corpus plus pluggable text-embedding providers.

The verification head consumes token-level 768-dim sequences. Two providers
satisfy that contract: a deterministic hashing stub (tests, offline runs)
and a file-backed store filled by the offline exporter. Both tag their
output with a provenance marker so downstream consumers can assert they are
holding frozen provider embeddings.
"""

from __future__ import annotations

import csv
import hashlib
import io
import struct
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .ingest import T0_DEFAULT, day_index, index_date

EMBED_DIM = 768
MAX_SEQ_LEN = 128

_STORE_MAGIC = b"MSEM"
_STORE_VERSION = 1

LABEL_LEGIT = "legit"
LABEL_ATTACK = "attack"
LABEL_UNKNOWN = "unknown"
_LABELS = (LABEL_LEGIT, LABEL_ATTACK, LABEL_UNKNOWN)


@dataclass(frozen=True)
class MessageRecord:
    id: str
    sender: int
    receiver: int
    day: int
    subject: str
    body: str
    label: str = LABEL_UNKNOWN

    @property
    def text(self) -> str:
        return f"{self.subject} {self.body}".strip()


@dataclass(frozen=True)
class EmbeddingSequence:
    rows: np.ndarray  # (L, 768) float
    provenance: str  # "file" or "stub"

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise DataError("embedding sequence must be a non-empty 2-D matrix")
        if self.rows.shape[1] != EMBED_DIM:
            raise DataError(f"embedding width must be {EMBED_DIM}, got {self.rows.shape[1]}")
        if not np.isfinite(self.rows).all():
            raise DataError("embedding sequence contains non-finite values")

    @property
    def length(self) -> int:
        return int(self.rows.shape[0])

    def pooled(self) -> np.ndarray:
        """Row-mean message vector (used by the linguistic-drift path)."""
        return self.rows.mean(axis=0)


def tokenize(text: str) -> list[str]:
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(".,;:!?\"'()[]{}<>")
        if tok:
            tokens.append(tok)
    return tokens


def _token_row(token: str, seed: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    row = rng.standard_normal(EMBED_DIM)
    return row / np.linalg.norm(row)


def stub_embed(text: str, seed: int = 0) -> EmbeddingSequence:
    """Deterministic token-hash embedding: unit-norm row per token.

    Identical text always yields a bitwise-identical sequence; empty text
    maps to a single sentinel token so the sequence stays non-empty.
    """
    tokens = tokenize(text) or ["<empty>"]
    tokens = tokens[:MAX_SEQ_LEN]
    rows = np.stack([_token_row(tok, seed) for tok in tokens])
    return EmbeddingSequence(rows=rows, provenance="stub")


class MessageStore:
    """In-memory corpus indexed by id and by directed pair."""

    def __init__(self, records: Iterable[MessageRecord] = ()):
        self._by_id: dict[str, MessageRecord] = {}
        self._by_pair: dict[tuple[int, int], list[MessageRecord]] = {}
        for rec in records:
            self.add(rec)

    def add(self, rec: MessageRecord) -> None:
        if rec.id in self._by_id:
            raise DataError(f"duplicate message id {rec.id!r}")
        if rec.label not in _LABELS:
            raise DataError(f"unknown message label {rec.label!r}")
        self._by_id[rec.id] = rec
        self._by_pair.setdefault((rec.sender, rec.receiver), []).append(rec)

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self):
        return iter(sorted(self._by_id.values(), key=lambda r: (r.day, r.id)))

    def get(self, message_id: str) -> MessageRecord:
        try:
            return self._by_id[message_id]
        except KeyError:
            raise DataError(f"unknown message id {message_id!r}") from None

    def for_pair_day(self, sender: int, receiver: int, day: int) -> list[MessageRecord]:
        msgs = [m for m in self._by_pair.get((sender, receiver), []) if m.day == day]
        return sorted(msgs, key=lambda m: m.id)

    def sent_by(self, sender: int) -> list[MessageRecord]:
        out = []
        for (s, _), msgs in self._by_pair.items():
            if s == sender:
                out.extend(msgs)
        return sorted(out, key=lambda m: (m.day, m.id))


def get_message_history(
    store: MessageStore, sender: int, receiver: int, day: int
) -> list[MessageRecord]:
    """Every message between the pair (either direction) strictly before day."""
    msgs = [
        m
        for direction in ((sender, receiver), (receiver, sender))
        for m in store._by_pair.get(direction, [])
        if m.day < day
    ]
    return sorted(msgs, key=lambda m: (m.day, m.id))


def save_messages_csv(records: Iterable[MessageRecord], path, t0: date = T0_DEFAULT) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "sender", "receiver", "date", "subject", "body", "label"])
        for rec in sorted(records, key=lambda r: (r.day, r.id)):
            writer.writerow(
                [
                    rec.id,
                    rec.sender,
                    rec.receiver,
                    index_date(rec.day, t0).isoformat(),
                    rec.subject,
                    rec.body,
                    rec.label,
                ]
            )


def load_messages_csv(path, t0: date = T0_DEFAULT) -> MessageStore:
    store = MessageStore()
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read message corpus {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return store
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise DataError(f"{path}: line {lineno}: expected 7 fields, got {len(row)}")
            mid, sender, receiver, day_str, subject, body, label = row
            store.add(
                MessageRecord(
                    id=mid,
                    sender=int(sender),
                    receiver=int(receiver),
                    day=day_index(date.fromisoformat(day_str), t0),
                    subject=subject,
                    body=body,
                    label=label,
                )
            )
    return store


# ---------------------------------------------------------------------------
# Embedding store binary format.
# magic | u32 version | u32 count | entries:
#   u16 id_len | id utf-8 | u32 L | u32 d | L*d little-endian float32


class EmbeddingStore:
    def __init__(self, entries: dict[str, EmbeddingSequence] | None = None, source: str = "file"):
        self.entries = entries or {}
        self.source = source

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def get(self, key: str) -> EmbeddingSequence:
        try:
            return self.entries[key]
        except KeyError:
            raise DataError(f"embedding store has no entry for {key!r}") from None


def message_key(message_id: str) -> str:
    return f"msg:{message_id}"


def history_key(sender: int, receiver: int, day: int) -> str:
    return f"hist:{sender}:{receiver}:{day}"


def save_embedding_file(entries: dict[str, np.ndarray], path) -> None:
    buf = io.BytesIO()
    buf.write(_STORE_MAGIC)
    buf.write(struct.pack("<II", _STORE_VERSION, len(entries)))
    for key in sorted(entries):
        rows = np.ascontiguousarray(entries[key], dtype="<f4")
        if rows.ndim != 2 or rows.shape[1] != EMBED_DIM:
            raise DataError(f"entry {key!r} must be (L, {EMBED_DIM})")
        key_bytes = key.encode("utf-8")
        buf.write(struct.pack("<H", len(key_bytes)))
        buf.write(key_bytes)
        buf.write(struct.pack("<II", rows.shape[0], rows.shape[1]))
        buf.write(rows.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_embedding_file(path) -> EmbeddingStore:
    """Load and validate the exporter's binary embedding format."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read embedding store {path}: {exc}") from exc
    buf = io.BytesIO(blob)

    def need(n: int, what: str) -> bytes:
        raw = buf.read(n)
        if len(raw) != n:
            raise DataError(f"truncated embedding store: {what} at byte offset {buf.tell()}")
        return raw

    if need(4, "magic") != _STORE_MAGIC:
        raise DataError("bad embedding store magic")
    version, count = struct.unpack("<II", need(8, "header"))
    if version != _STORE_VERSION:
        raise DataError(f"unsupported embedding store version {version}")
    entries: dict[str, EmbeddingSequence] = {}
    for _ in range(count):
        (id_len,) = struct.unpack("<H", need(2, "id length"))
        key = need(id_len, "id bytes").decode("utf-8")
        length, dim = struct.unpack("<II", need(8, "entry shape"))
        if dim != EMBED_DIM:
            raise DataError(f"entry {key!r}: width {dim} != {EMBED_DIM}")
        if length < 1:
            raise DataError(f"entry {key!r}: empty sequence")
        raw = need(4 * length * dim, f"rows of {key!r}")
        rows = np.frombuffer(raw, dtype="<f4").reshape(length, dim).astype(np.float64)
        if not np.isfinite(rows).all():
            raise DataError(f"entry {key!r}: non-finite values")
        entries[key] = EmbeddingSequence(rows=rows, provenance="file")
    return EmbeddingStore(entries=entries, source="file")


# ---------------------------------------------------------------------------
# Provider interface consumed by the verification head.


class StubProvider:
    """Hash-based embeddings; no model artifacts required."""

    name = "stub"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def embed_text(self, text: str) -> EmbeddingSequence:
        return stub_embed(text, self.seed)


class FileProvider:
    """Embeddings resolved from an exporter-written store; misses are errors."""

    name = "file"

    def __init__(self, store: EmbeddingStore):
        self.store = store

    def embed_message(self, message_id: str) -> EmbeddingSequence:
        return self.store.get(message_key(message_id))

    def embed_history(self, sender: int, receiver: int, day: int) -> EmbeddingSequence:
        return self.store.get(history_key(sender, receiver, day))
