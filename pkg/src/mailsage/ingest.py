"""Activity ingestion: records -> daily-count series -> attributed graph.

Day indices are 1-based starting at ``t0`` (1999-01-01 by default) and run
up to ``T`` (1448 days). A record ``(sender, receivers, day, count)`` means
``count`` emails were sent to *each* listed receiver on that day.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

T_DEFAULT = 1448
T0_DEFAULT = date(1999, 1, 1)

_GRAPH_MAGIC = b"MSAG"
_GRAPH_VERSION = 1


@dataclass(frozen=True)
class ActivityRecord:
    sender: int
    receivers: tuple[int, ...]
    day: int
    count: int

    @property
    def emails(self) -> int:
        return self.count * len(self.receivers)


def day_index(d: date, t0: date = T0_DEFAULT) -> int:
    """1-based day index of calendar date ``d`` relative to epoch ``t0``."""
    return (d - t0).days + 1


def index_date(day: int, t0: date = T0_DEFAULT) -> date:
    return t0 + timedelta(days=day - 1)


def _parse_date(text: str) -> date:
    return date.fromisoformat(text.strip())


def parse_activity_records(
    path: str | Path,
    format: str = "raw-email-log",
    *,
    edge_path: str | Path | None = None,
    t0: date = T0_DEFAULT,
    t_days: int = T_DEFAULT,
) -> list[ActivityRecord]:
    """Parse an activity file into validated records.

    ``raw-email-log``: CSV with header ``sender,receiver,date,count``.
    ``node-day-count``: CSV ``node,date,count`` joined against an edge list
    CSV ``source,target`` (``edge_path``); the per-day total is distributed
    round-robin over the node's static receivers because the layout does not
    attribute recipients per day.

    All malformed lines and out-of-range dates are collected and raised
    together with their line numbers.
    """
    path = Path(path)
    if format not in ("raw-email-log", "node-day-count"):
        raise DataError(f"unknown activity format: {format!r}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read activity file {path}: {exc}") from exc

    if format == "raw-email-log":
        return _parse_raw_email_log(text, t0=t0, t_days=t_days, name=str(path))

    if edge_path is None:
        raise DataError("node-day-count format requires an edge list (edge_path)")
    try:
        edge_text = Path(edge_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read edge list {edge_path}: {exc}") from exc
    return _parse_node_day_counts(text, edge_text, t0=t0, t_days=t_days, name=str(path))


def _iter_csv_rows(text: str) -> Iterable[tuple[int, list[str]]]:
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, start=1):
        if lineno == 1 and row and not _looks_numeric(row[0]):
            continue  # header
        if not row or all(not c.strip() for c in row):
            continue
        yield lineno, row


def _looks_numeric(cell: str) -> bool:
    try:
        int(cell.strip())
        return True
    except ValueError:
        return False


def _check_day(d: date, t0: date, t_days: int) -> int:
    idx = day_index(d, t0)
    if idx < 1 or idx > t_days:
        raise ValueError(f"date {d.isoformat()} outside [{t0.isoformat()}, day {t_days}]")
    return idx


def _parse_raw_email_log(text: str, *, t0: date, t_days: int, name: str) -> list[ActivityRecord]:
    records: list[ActivityRecord] = []
    problems: list[str] = []
    for lineno, row in _iter_csv_rows(text):
        try:
            if len(row) != 4:
                raise ValueError(f"expected 4 fields, got {len(row)}")
            sender = int(row[0])
            receiver = int(row[1])
            day = _check_day(_parse_date(row[2]), t0, t_days)
            count = int(row[3])
            if sender < 0 or receiver < 0:
                raise ValueError("negative node id")
            if count < 1:
                raise ValueError(f"count must be >= 1, got {count}")
        except ValueError as exc:
            problems.append(f"line {lineno}: {exc}")
            continue
        records.append(ActivityRecord(sender, (receiver,), day, count))
    if problems:
        raise DataError(f"{name}: {len(problems)} bad record(s):\n" + "\n".join(problems))
    return records


def _parse_node_day_counts(
    text: str, edge_text: str, *, t0: date, t_days: int, name: str
) -> list[ActivityRecord]:
    out_neighbors: dict[int, list[int]] = {}
    problems: list[str] = []
    for lineno, row in _iter_csv_rows(edge_text):
        try:
            if len(row) != 2:
                raise ValueError(f"expected 2 fields, got {len(row)}")
            src, dst = int(row[0]), int(row[1])
        except ValueError as exc:
            problems.append(f"edge line {lineno}: {exc}")
            continue
        out_neighbors.setdefault(src, []).append(dst)
    for nbrs in out_neighbors.values():
        nbrs.sort()

    records: list[ActivityRecord] = []
    for lineno, row in _iter_csv_rows(text):
        try:
            if len(row) != 3:
                raise ValueError(f"expected 3 fields, got {len(row)}")
            node = int(row[0])
            day = _check_day(_parse_date(row[1]), t0, t_days)
            total = int(row[2])
            if total < 1:
                raise ValueError(f"count must be >= 1, got {total}")
        except ValueError as exc:
            problems.append(f"line {lineno}: {exc}")
            continue
        nbrs = out_neighbors.get(node)
        if not nbrs:
            problems.append(f"line {lineno}: node {node} has no receivers in the edge list")
            continue
        # Round-robin attribution: the layout withholds per-day recipients.
        base, extra = divmod(total, len(nbrs))
        for i, nbr in enumerate(nbrs):
            c = base + (1 if i < extra else 0)
            if c:
                records.append(ActivityRecord(node, (nbr,), day, c))
    if problems:
        raise DataError(f"{name}: {len(problems)} bad record(s):\n" + "\n".join(problems))
    return records


def vectorize_time_series(
    records: Sequence[ActivityRecord], t_days: int = T_DEFAULT
) -> dict[int, np.ndarray]:
    """Per-sender daily sent-email counts as int64 vectors of length ``t_days``.

    Index 0 of the vector is day 1.
    """
    series: dict[int, np.ndarray] = {}
    for rec in records:
        vec = series.get(rec.sender)
        if vec is None:
            vec = np.zeros(t_days, dtype=np.int64)
            series[rec.sender] = vec
        vec[rec.day - 1] += rec.emails
    return series


@dataclass
class ActivityGraph:
    """Directed attributed multigraph over day-indexed email activity."""

    t_days: int = T_DEFAULT
    t0: date = T0_DEFAULT
    series: dict[int, np.ndarray] = field(default_factory=dict)
    edges: dict[tuple[int, int], dict[int, int]] = field(default_factory=dict)
    self_loops: list[tuple[int, int]] = field(default_factory=list)

    @property
    def nodes(self) -> list[int]:
        return sorted(self.series)

    def node_count(self) -> int:
        return len(self.series)

    def edge_count(self) -> int:
        return len(self.edges)

    def series_for(self, node: int) -> np.ndarray:
        try:
            return self.series[node]
        except KeyError:
            raise DataError(f"unknown node id {node}") from None

    def out_neighbors(self, node: int) -> list[int]:
        return sorted(v for (u, v) in self.edges if u == node)

    def undirected_neighbors(self) -> dict[int, list[int]]:
        """Sorted distinct neighbor lists over the undirected skeleton."""
        nbrs: dict[int, set[int]] = {n: set() for n in self.series}
        for u, v in self.edges:
            if u == v:
                continue
            nbrs[u].add(v)
            nbrs[v].add(u)
        return {n: sorted(s) for n, s in nbrs.items()}

    def undirected_weights(self) -> dict[tuple[int, int], float]:
        """Total emails either direction per unordered pair, self-loops excluded."""
        weights: dict[tuple[int, int], float] = {}
        for (u, v), days in self.edges.items():
            if u == v:
                continue
            key = (u, v) if u < v else (v, u)
            weights[key] = weights.get(key, 0.0) + float(sum(days.values()))
        return weights

    def _day_index(self) -> dict[int, list[tuple[int, int]]]:
        # lazy per-day pair index; graphs are immutable once scoring starts
        cache = getattr(self, "_day_pairs", None)
        if cache is None:
            cache = {}
            for (u, v), days in self.edges.items():
                if u == v:
                    continue
                for d, c in days.items():
                    if c > 0:
                        cache.setdefault(d, []).append((u, v))
            for pairs in cache.values():
                pairs.sort()
            self._day_pairs = cache
        return cache

    def recipients_on_day(self, sender: int, day: int) -> list[int]:
        return [v for (u, v) in self._day_index().get(day, []) if u == sender]

    def active_pairs_on_day(self, day: int) -> list[tuple[int, int]]:
        return list(self._day_index().get(day, []))

    def days_active(self) -> set[int]:
        active: set[int] = set()
        for days in self.edges.values():
            active.update(d for d, c in days.items() if c > 0)
        return active

    def copy(self) -> "ActivityGraph":
        return ActivityGraph(
            t_days=self.t_days,
            t0=self.t0,
            series={n: s.copy() for n, s in self.series.items()},
            edges={pair: dict(days) for pair, days in self.edges.items()},
            self_loops=list(self.self_loops),
        )


def build_graph(
    records: Sequence[ActivityRecord],
    t_days: int = T_DEFAULT,
    t0: date = T0_DEFAULT,
) -> ActivityGraph:
    """Assemble the directed attributed graph from validated records.

    Nodes are senders plus receivers; receive-only nodes carry an all-zero
    series. Self-loops are kept in the edge set but flagged so scoring can
    skip them.
    """
    graph = ActivityGraph(t_days=t_days, t0=t0, series=vectorize_time_series(records, t_days))
    for rec in records:
        for recv in rec.receivers:
            if recv not in graph.series:
                graph.series[recv] = np.zeros(t_days, dtype=np.int64)
            days = graph.edges.setdefault((rec.sender, recv), {})
            days[rec.day] = days.get(rec.day, 0) + rec.count
            if recv == rec.sender:
                graph.self_loops.append((rec.sender, rec.day))
    if graph.self_loops:
        log.warning("kept %d self-loop record(s); excluded from pair scoring", len(graph.self_loops))
    return graph


class InteractionHistory:
    """Per directed pair: the sorted set of days with at least one email."""

    def __init__(self, day_sets: dict[tuple[int, int], np.ndarray]):
        self._days = day_sets

    @classmethod
    def from_graph(cls, graph: ActivityGraph) -> "InteractionHistory":
        day_sets = {}
        for pair, days in graph.edges.items():
            active = sorted(d for d, c in days.items() if c > 0)
            if active:
                day_sets[pair] = np.asarray(active, dtype=np.int64)
        return cls(day_sets)

    def pairs(self) -> Iterable[tuple[int, int]]:
        return self._days.keys()

    def interaction_days(self, pair: tuple[int, int]) -> np.ndarray:
        return self._days.get(pair, np.empty(0, dtype=np.int64))

    def count(self, pair: tuple[int, int]) -> int:
        return int(self._days[pair].size) if pair in self._days else 0

    def days_before(self, pair: tuple[int, int], day: int) -> int:
        """Number of distinct interaction days strictly before ``day``."""
        days = self._days.get(pair)
        if days is None:
            return 0
        return int(np.searchsorted(days, day, side="left"))


def temporal_split(graph: ActivityGraph, cutoff_day: int) -> tuple[ActivityGraph, ActivityGraph]:
    """Chronological partition: train keeps day <= cutoff, test keeps day > cutoff."""
    if not 1 < cutoff_day <= graph.t_days:
        raise DataError(f"cutoff_day {cutoff_day} outside (1, {graph.t_days}]")

    def _window(lo: int, hi: int) -> ActivityGraph:
        sub = ActivityGraph(t_days=graph.t_days, t0=graph.t0)
        for pair, days in graph.edges.items():
            kept = {d: c for d, c in days.items() if lo <= d <= hi and c > 0}
            if kept:
                sub.edges[pair] = kept
        active: set[int] = set()
        for u, v in sub.edges:
            active.add(u)
            active.add(v)
        for node, vec in graph.series.items():
            mask = np.zeros_like(vec)
            mask[lo - 1 : hi] = vec[lo - 1 : hi]
            if mask.any() or node in active:
                sub.series[node] = mask
        sub.self_loops = [(n, d) for n, d in graph.self_loops if lo <= d <= hi]
        return sub

    return _window(1, cutoff_day), _window(cutoff_day + 1, graph.t_days)


# ---------------------------------------------------------------------------
# Binary snapshot format: little-endian, versioned magic header.


def graph_to_bytes(graph: ActivityGraph) -> bytes:
    buf = io.BytesIO()
    buf.write(_GRAPH_MAGIC)
    buf.write(struct.pack("<IIq", _GRAPH_VERSION, graph.t_days, graph.t0.toordinal()))
    nodes = graph.nodes
    buf.write(struct.pack("<I", len(nodes)))
    for node in nodes:
        vec = graph.series[node]
        nz = np.flatnonzero(vec)
        buf.write(struct.pack("<II", node, len(nz)))
        for i in nz:
            buf.write(struct.pack("<II", int(i) + 1, int(vec[i])))
    pairs = sorted(graph.edges)
    buf.write(struct.pack("<I", len(pairs)))
    for u, v in pairs:
        days = sorted((d, c) for d, c in graph.edges[(u, v)].items() if c > 0)
        buf.write(struct.pack("<III", u, v, len(days)))
        for d, c in days:
            buf.write(struct.pack("<II", d, c))
    return buf.getvalue()


def graph_from_bytes(blob: bytes) -> ActivityGraph:
    buf = io.BytesIO(blob)

    def read(fmt: str):
        size = struct.calcsize(fmt)
        raw = buf.read(size)
        if len(raw) != size:
            raise DataError(f"truncated graph snapshot at byte offset {buf.tell()}")
        return struct.unpack(fmt, raw)

    if buf.read(4) != _GRAPH_MAGIC:
        raise DataError("bad graph snapshot magic")
    version, t_days, t0_ord = read("<IIq")
    if version != _GRAPH_VERSION:
        raise DataError(f"unsupported graph snapshot version {version}")
    graph = ActivityGraph(t_days=t_days, t0=date.fromordinal(t0_ord))
    (n_nodes,) = read("<I")
    for _ in range(n_nodes):
        node, n_nz = read("<II")
        vec = np.zeros(t_days, dtype=np.int64)
        for _ in range(n_nz):
            day, count = read("<II")
            vec[day - 1] = count
        graph.series[node] = vec
    (n_edges,) = read("<I")
    for _ in range(n_edges):
        u, v, n_days = read("<III")
        days = {}
        for _ in range(n_days):
            day, count = read("<II")
            days[day] = count
        graph.edges[(u, v)] = days
        if u == v:
            graph.self_loops.extend((u, d) for d in days)
    return graph


def save_graph(graph: ActivityGraph, path: str | Path) -> None:
    path = Path(path)
    path.write_bytes(graph_to_bytes(graph))
    meta = {
        "node_count": graph.node_count(),
        "edge_count": graph.edge_count(),
        "T": graph.t_days,
        "t0": graph.t0.isoformat(),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_graph(path: str | Path) -> ActivityGraph:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read graph snapshot {path}: {exc}") from exc
    return graph_from_bytes(blob)
