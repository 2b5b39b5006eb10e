"""Per-interaction anomaly scores: volume, relational, contextual, aggregate.

All three phase scores and the final score live in [0, 1]. Volume acts as a
conditional multiplier on the relational+contextual base risk, so high send
volume alone (admin broadcasts) can never flag an interaction whose
underlying relationships are normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .gnn import cosine_sim01
from .ingest import ActivityGraph, InteractionHistory

BRANCH_STANDARD = "standard"
BRANCH_INSIDER = "insider"


@dataclass(frozen=True)
class PhaseScores:
    s1: float
    s2: float
    s3: float
    z: float = 0.0
    f: float = 0.0
    sim: float = 0.0
    comm_frac: float = 1.0


@dataclass(frozen=True)
class ScoreWeights:
    """Phase-2 mixing weights and final-aggregation weights.

    The bound (1 + w1) * (w2 + w3) <= 1 keeps the final score inside [0, 1].
    """

    alpha: float = 0.4
    beta: float = 0.3
    gamma: float = 0.3
    w1: float = 0.5
    w2: float = 1.0 / 3.0
    w3: float = 1.0 / 3.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "w1", "w2", "w3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"score weight {name} must be >= 0")
        if self.w2 + self.w3 <= 0:
            raise ConfigError("w2 + w3 must be positive")
        if (1.0 + self.w1) * (self.w2 + self.w3) > 1.0 + 1e-9:
            raise ConfigError("(1 + w1) * (w2 + w3) must not exceed 1")


@dataclass(frozen=True)
class ScoredInteraction:
    sender: int
    receiver: int
    day: int
    phases: PhaseScores
    s_final: float
    branch: str = BRANCH_STANDARD


def erf_positive(z: float) -> float:
    """Normal-CDF-style mapping of a z-score: erf(z / sqrt(2)), floored at 0."""
    if z <= 0:
        return 0.0
    if math.isinf(z):
        return 1.0
    return math.erf(z / math.sqrt(2.0))


def spike_score(series: np.ndarray, day: int) -> tuple[float, float]:
    """Volume anomaly for one sender on one day.

    Mean and deviation come strictly from days 1..day-1. A burst out of a
    flat history (sigma = 0, count above mean) is maximally anomalous.
    """
    if day < 2 or day > series.shape[0]:
        raise DataError(f"spike_score day {day} outside [2, {series.shape[0]}]")
    hist = np.asarray(series[: day - 1], dtype=np.float64)
    x = float(series[day - 1])
    mu = float(hist.mean())
    sigma = float(hist.std())
    if sigma == 0.0:
        if x > mu:
            return math.inf, 1.0
        return 0.0 if x == mu else -math.inf, 0.0
    z = (x - mu) / sigma
    return z, erf_positive(z)


def k_dynamic(hist: InteractionHistory, day: int) -> float:
    """Median raw interaction ratio across pairs with at least one past day.

    Falls back to 1.0 when no pair has any history yet (nothing to anchor a
    median on).
    """
    if day < 2:
        raise DataError(f"k_dynamic needs day >= 2, got {day}")
    ratios = []
    past = day - 1
    for pair in hist.pairs():
        c = hist.days_before(pair, day)
        if c > 0:
            ratios.append(c / max(1, past - c))
    if not ratios:
        return 1.0
    return float(np.median(ratios))


def historical_frequency(
    hist: InteractionHistory,
    pair: tuple[int, int],
    day: int,
    k: float | None = None,
) -> tuple[float, float]:
    """Raw past-interaction ratio h and its bounded normalization f.

    h is interaction days over non-interaction days across days 1..day-1
    (0 for never-before pairs); f = h / (K + h) with K the per-day median
    ratio, passed in by day-level drivers to avoid recomputing.
    """
    if day < 2:
        raise DataError(f"historical_frequency needs day >= 2, got {day}")
    c = hist.days_before(pair, day)
    if c == 0:
        return 0.0, 0.0
    h = c / max(1, day - 1 - c)
    if k is None:
        k = k_dynamic(hist, day)
    return h, h / (k + h)


def relational_score(f: float, sim: float, weights: ScoreWeights) -> float:
    """Contrast-aware relational anomaly from history frequency and similarity."""
    if not (0.0 <= f <= 1.0 and 0.0 <= sim <= 1.0):
        raise DataError(f"relational_score inputs out of range: f={f}, sim={sim}")
    s2 = (
        weights.alpha * (1.0 - f)
        + weights.beta * (1.0 - sim)
        + weights.gamma * f * (1.0 - sim)
    )
    return min(1.0, max(0.0, s2))


def contextual_score(
    sender: int,
    receiver: int,
    day: int,
    partition: Mapping[int, int],
    graph: ActivityGraph,
) -> tuple[float, float]:
    """Community engagement fraction for the day's recipient list, inverted."""
    recipients = graph.recipients_on_day(sender, day)
    if not recipients:
        raise DataError(f"sender {sender} has no recipients on day {day}")
    target_comm = partition[receiver]
    in_comm = sum(1 for r in recipients if partition[r] == target_comm)
    comm_frac = in_comm / len(recipients)
    return comm_frac, 1.0 - comm_frac


def aggregate(phases: PhaseScores, weights: ScoreWeights) -> float:
    """Volume-conditioned final score: (1 + w1*s1) * (w2*s2 + w3*s3)."""
    return (1.0 + weights.w1 * phases.s1) * (weights.w2 * phases.s2 + weights.w3 * phases.s3)


def score_day(
    graph: ActivityGraph,
    embeddings: Mapping[int, np.ndarray],
    hist: InteractionHistory,
    partition: Mapping[int, int],
    day: int,
    weights: ScoreWeights,
    established: Callable[[int, int, int], bool] | None = None,
) -> list[ScoredInteraction]:
    """Score every active directed pair on one day (self-loops excluded)."""
    pairs = graph.active_pairs_on_day(day)
    if not pairs:
        return []
    k = k_dynamic(hist, day)
    spike_cache: dict[int, tuple[float, float]] = {}
    out = []
    for sender, receiver in pairs:
        if sender not in spike_cache:
            spike_cache[sender] = spike_score(graph.series_for(sender), day)
        z, s1 = spike_cache[sender]
        _, f = historical_frequency(hist, (sender, receiver), day, k)
        sim = cosine_sim01(embeddings[sender], embeddings[receiver])
        s2 = relational_score(f, sim, weights)
        comm_frac, s3 = contextual_score(sender, receiver, day, partition, graph)
        phases = PhaseScores(s1=s1, s2=s2, s3=s3, z=z, f=f, sim=sim, comm_frac=comm_frac)
        branch = BRANCH_STANDARD
        if established is not None and established(sender, receiver, day):
            branch = BRANCH_INSIDER
        out.append(
            ScoredInteraction(
                sender=sender,
                receiver=receiver,
                day=day,
                phases=phases,
                s_final=aggregate(phases, weights),
                branch=branch,
            )
        )
    return out


def score_days(
    graph: ActivityGraph,
    embeddings: Mapping[int, np.ndarray],
    hist: InteractionHistory,
    partition: Mapping[int, int],
    days: Sequence[int],
    weights: ScoreWeights,
    established: Callable[[int, int, int], bool] | None = None,
) -> list[ScoredInteraction]:
    out: list[ScoredInteraction] = []
    for day in sorted(set(days)):
        out.extend(score_day(graph, embeddings, hist, partition, day, weights, established))
    return out
