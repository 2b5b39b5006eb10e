"""Synthetic attack campaign generation, injection, and the scan baseline.

Five built-in campaign topologies cover the classic compliance principles:
steady grooming, an authority burst with urgent follow-ups, a one-to-many
broadcast, a year-long low-and-slow thread, and a compromised internal
account. Message text is deliberately schematic placeholder prose
(provenance "synthetic-placeholder"); scheduling shapes are reconstructed
from the campaign durations and totals.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from datetime import date

import numpy as np

from .errors import DataError
from .ingest import ActivityGraph, ActivityRecord, day_index
from .providers import LABEL_ATTACK, LABEL_LEGIT, MessageRecord

PLACEHOLDER_PROVENANCE = "synthetic-placeholder"

PATTERNS = ("liking-groom", "authority-burst", "broadcast", "low-slow", "insider")

SCAN_WINDOW_DEFAULT = 30
SCAN_CAP_DEFAULT = 30.0


@dataclass(frozen=True)
class CampaignSpec:
    id: str
    attacker: int
    targets: tuple[int, ...]
    start_day: int
    end_day: int
    n_emails: int
    pattern: str
    principle: str

    def __post_init__(self):
        if self.start_day > self.end_day:
            raise DataError(f"{self.id}: start_day after end_day")
        if self.n_emails < 1:
            raise DataError(f"{self.id}: n_emails must be >= 1")
        if self.pattern not in PATTERNS:
            raise DataError(f"{self.id}: unknown pattern {self.pattern!r}")

    @property
    def span(self) -> int:
        return self.end_day - self.start_day + 1


@dataclass
class GroundTruth:
    """Attacker-originated (sender, receiver, day) triples, deduplicated."""

    by_campaign: dict[str, set[tuple[int, int, int]]]

    @property
    def triples(self) -> set[tuple[int, int, int]]:
        out: set[tuple[int, int, int]] = set()
        for triples in self.by_campaign.values():
            out |= triples
        return out

    def merge(self, other: "GroundTruth") -> "GroundTruth":
        merged = {c: set(t) for c, t in self.by_campaign.items()}
        for c, t in other.by_campaign.items():
            merged.setdefault(c, set()).update(t)
        return GroundTruth(by_campaign=merged)


def builtin_campaigns() -> list[CampaignSpec]:
    d = day_index
    return [
        CampaignSpec(
            id="C1",
            attacker=6600,
            targets=(97,),
            start_day=d(date(1999, 7, 20)),
            end_day=d(date(1999, 7, 31)),
            n_emails=11,
            pattern="liking-groom",
            principle="liking",
        ),
        CampaignSpec(
            id="C2",
            attacker=6601,
            targets=(171,),
            start_day=d(date(1999, 8, 4)),
            end_day=d(date(1999, 8, 15)),
            n_emails=11,
            pattern="authority-burst",
            principle="authority-urgency",
        ),
        CampaignSpec(
            id="C3",
            attacker=6602,
            targets=(221, 223, 225, 226, 227),
            start_day=d(date(1999, 10, 28)),
            end_day=d(date(1999, 11, 2)),
            n_emails=18,
            pattern="broadcast",
            principle="urgency",
        ),
        CampaignSpec(
            id="C4",
            attacker=6603,
            targets=(817, 1017),
            start_day=d(date(1999, 2, 20)),
            end_day=d(date(2000, 2, 15)),
            n_emails=13,
            pattern="low-slow",
            principle="consistency",
        ),
        CampaignSpec(
            id="C5",
            attacker=1023,
            targets=(145,),
            start_day=d(date(2000, 4, 3)),
            end_day=d(date(2000, 9, 18)),
            n_emails=24,
            pattern="insider",
            principle="insider-compromise",
        ),
    ]


def _spread(n: int, span: int) -> list[int]:
    """n distinct offsets spread evenly over [0, span-1] (n <= span)."""
    if n == 1:
        return [0]
    return sorted({round(i * (span - 1) / (n - 1)) for i in range(n)})


def schedule_campaign(spec: CampaignSpec) -> list[tuple[int, int, int]]:
    """Expand a spec into (day, target, count) email slots summing to n_emails."""
    span = spec.span
    out: list[tuple[int, int, int]] = []
    if spec.pattern == "liking-groom":
        # steady touchpoints, mostly doubled, to build rapport
        n_days = min(span, max(3, -(-spec.n_emails // 2)))
        offsets = _spread(n_days, span)
        remaining = spec.n_emails
        for i, off in enumerate(offsets):
            if i == len(offsets) - 1:
                count = remaining
            else:
                count = min(2, remaining - (len(offsets) - 1 - i))
            out.append((spec.start_day + off, spec.targets[0], count))
            remaining -= count
    elif spec.pattern == "authority-burst":
        # one opener, a burst right after, then urgent follow-ups
        target = spec.targets[0]
        burst = [(0, 1), (1, 2), (2, 2)]
        used = sum(c for _, c in burst)
        out.extend((spec.start_day + off, target, c) for off, c in burst)
        n_rest = spec.n_emails - used
        if n_rest > 0:
            rest_span = span - 3
            for off in _spread(min(n_rest, rest_span), rest_span):
                out.append((spec.start_day + 3 + off, target, 1))
    elif spec.pattern == "broadcast":
        # round-robin one-way emails over the target list
        per_day = -(-spec.n_emails // span)
        j = 0
        for day_off in range(span):
            for _ in range(per_day):
                if j >= spec.n_emails:
                    break
                out.append((spec.start_day + day_off, spec.targets[j % len(spec.targets)], 1))
                j += 1
    else:  # low-slow and insider: evenly spaced single emails
        target = spec.targets[0]
        offsets = _spread(min(spec.n_emails, span), span)
        for i, off in enumerate(offsets):
            count = 1
            if len(offsets) < spec.n_emails and i < spec.n_emails - len(offsets):
                count = 2  # doubled early slots absorb the remainder
            out.append((spec.start_day + off, target, count))
    total = sum(c for _, _, c in out)
    if total != spec.n_emails:
        raise DataError(f"{spec.id}: schedule produced {total} emails, expected {spec.n_emails}")
    return sorted(out)


_ATTACK_TEMPLATES = {
    "liking": (
        "catching up",
        "hey friend noticed we share the same hiking group would love to connect "
        "and chat sometime {tok} small favor maybe later",
    ),
    "authority-urgency": (
        "action required invoice",
        "this is the finance director process the attached invoice immediately "
        "call my direct line today urgent compliance deadline {tok}",
    ),
    "urgency": (
        "pending account notice",
        "your account shows a pending violation notice visit the review portal "
        "link immediately to resolve the urgent hold {tok}",
    ),
    "consistency": (
        "monthly alignment thread",
        "following up on our earlier agreement to keep the monthly sync going "
        "please confirm the shared credentials roster when convenient {tok}",
    ),
    "insider-compromise": (
        "document access request",
        "my usual drive is acting up can you send the quarterly archive export "
        "to my personal address instead urgent before the audit {tok}",
    ),
}

_ACK_BODY = "thanks noted will take a look later this week"


def _filler(rng: np.random.Generator) -> str:
    return f"ref{rng.integers(0, 99999):05d}"


def campaign_messages(
    spec: CampaignSpec, seed: int = 0
) -> tuple[list[MessageRecord], list[ActivityRecord]]:
    """Placeholder attacker messages plus simple target acknowledgments."""
    id_hash = int.from_bytes(hashlib.sha256(spec.id.encode("utf-8")).digest()[:4], "little")
    rng = np.random.default_rng(seed ^ id_hash)
    subject, body_tpl = _ATTACK_TEMPLATES[spec.principle]
    messages: list[MessageRecord] = []
    reply_records: list[ActivityRecord] = []
    seq = 0
    touch_days: list[int] = []
    for day, target, count in schedule_campaign(spec):
        touch_days.append(day)
        for _ in range(count):
            seq += 1
            messages.append(
                MessageRecord(
                    id=f"{spec.id}-a{seq:03d}",
                    sender=spec.attacker,
                    receiver=target,
                    day=day,
                    subject=subject,
                    body=body_tpl.format(tok=_filler(rng)),
                    label=LABEL_ATTACK,
                )
            )
    # grooming and insider victims occasionally acknowledge
    if spec.pattern in ("liking-groom", "insider"):
        distinct = sorted(set(touch_days))
        for i, day in enumerate(distinct):
            if i % 3 == 1 and day + 1 <= spec.end_day:
                target = spec.targets[0]
                reply_day = day + 1
                messages.append(
                    MessageRecord(
                        id=f"{spec.id}-r{i:03d}",
                        sender=target,
                        receiver=spec.attacker,
                        day=reply_day,
                        subject="re: " + subject,
                        body=_ACK_BODY,
                        label=LABEL_LEGIT,
                    )
                )
                reply_records.append(ActivityRecord(target, (spec.attacker,), reply_day, 1))
    return messages, reply_records


def inject_campaign(
    graph: ActivityGraph, spec: CampaignSpec, seed: int = 0
) -> tuple[ActivityGraph, GroundTruth, list[MessageRecord]]:
    """Copy-on-inject: returns an augmented graph, truth triples, messages.

    The attacker node is created when absent (external campaigns) and must
    already exist for insider campaigns; targets must exist either way.
    """
    for target in spec.targets:
        if target not in graph.series:
            raise DataError(f"{spec.id}: target node {target} missing from graph")
    if spec.pattern == "insider" and spec.attacker not in graph.series:
        raise DataError(f"{spec.id}: insider attacker {spec.attacker} must already exist")
    aug = graph.copy()
    if spec.attacker not in aug.series:
        aug.series[spec.attacker] = np.zeros(aug.t_days, dtype=np.int64)

    triples: set[tuple[int, int, int]] = set()
    for day, target, count in schedule_campaign(spec):
        if day < 1 or day > aug.t_days:
            raise DataError(f"{spec.id}: scheduled day {day} outside horizon")
        aug.series[spec.attacker][day - 1] += count
        days = aug.edges.setdefault((spec.attacker, target), {})
        days[day] = days.get(day, 0) + count
        triples.add((spec.attacker, target, day))

    messages, reply_records = campaign_messages(spec, seed)
    for rec in reply_records:
        aug.series[rec.sender][rec.day - 1] += rec.emails
        for recv in rec.receivers:
            days = aug.edges.setdefault((rec.sender, recv), {})
            days[rec.day] = days.get(rec.day, 0) + rec.count

    truth = GroundTruth(by_campaign={spec.id: triples})
    return aug, truth, messages


def inject_all(
    graph: ActivityGraph, specs: list[CampaignSpec], seed: int = 0
) -> tuple[ActivityGraph, GroundTruth, list[MessageRecord]]:
    aug = graph
    truth = GroundTruth(by_campaign={})
    messages: list[MessageRecord] = []
    for spec in specs:
        aug, t, msgs = inject_campaign(aug, spec, seed)
        truth = truth.merge(t)
        messages.extend(msgs)
    return aug, truth, messages


def shift_campaign(spec: CampaignSpec, delta_days: int, t_days: int = 1448) -> CampaignSpec:
    """Translate a campaign in time; shape, counts and targets are unchanged."""
    new_start = spec.start_day + delta_days
    new_end = spec.end_day + delta_days
    if new_start < 1 or new_end > t_days:
        raise DataError(
            f"{spec.id}: shift by {delta_days} leaves [1, {t_days}] "
            f"(would span {new_start}..{new_end})"
        )
    return replace(spec, start_day=new_start, end_day=new_end)


def scan_statistic(
    graph: ActivityGraph,
    node: int,
    day: int,
    window: int = SCAN_WINDOW_DEFAULT,
    cap: float = SCAN_CAP_DEFAULT,
) -> float:
    """Rolling-window z-score of email volume in the closed 1-hop neighborhood.

    The baseline is the trailing ``window`` days, so sustained activity is
    absorbed quickly; that decay is exactly the limitation this baseline is
    kept around to demonstrate.
    """
    if node not in graph.series:
        raise DataError(f"unknown node id {node}")
    if day <= window:
        raise DataError(f"scan statistic needs day > window ({day} <= {window})")
    nbhd = {node}
    for u, v in graph.edges:
        if u == node:
            nbhd.add(v)
        elif v == node:
            nbhd.add(u)

    lo = day - window
    counts = np.zeros(window + 1, dtype=np.float64)  # [lo .. day]
    for (u, v), days in graph.edges.items():
        if u in nbhd and v in nbhd:
            for d, c in days.items():
                if lo <= d <= day:
                    counts[d - lo] += c
    baseline = counts[:-1]
    x = counts[-1]
    mu = float(baseline.mean())
    sigma = float(baseline.std())
    if sigma == 0.0:
        return cap if x > mu else 0.0
    return float(min((x - mu) / sigma, cap))
