"""Stage orchestration shared by the CLI and the acceptance harness."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import campaigns as camp
from . import evaluate as ev
from .errors import DataError
from .gnn import FeatureProjection, SageModel, cosine_sim01, embed_nodes, train_sage
from .communities import detect_communities
from .ingest import ActivityGraph, InteractionHistory, temporal_split
from .insider import (
    InsiderProfile,
    N_EST_DEFAULT,
    InsiderScore,
    is_established_internal_pair,
    linguistic_drift,
    pair_daily_series,
    pairwise_recipient_deviation,
)
from .providers import LABEL_ATTACK, MessageRecord, MessageStore, get_message_history
from .scoring import BRANCH_INSIDER, ScoreWeights, ScoredInteraction, score_days
from .verifier import (
    CoAttentionParams,
    MlpParams,
    TrainResult,
    VerifierVerdict,
    summarize_history,
    train_head,
    verify_pair,
)

Key = tuple[int, int, int]


@dataclass
class StructuralContext:
    graph: ActivityGraph
    embeddings: dict[int, np.ndarray]
    hist: InteractionHistory
    partition: dict[int, int]
    train_nodes: frozenset[int]
    n_est: int = N_EST_DEFAULT

    def established(self, v: int, u: int, day: int) -> bool:
        return is_established_internal_pair(self.graph, v, u, day, self.train_nodes, self.n_est)


def prepare_context(
    graph: ActivityGraph, model: SageModel, n_est: int = N_EST_DEFAULT
) -> StructuralContext:
    return StructuralContext(
        graph=graph,
        embeddings=embed_nodes(model, graph),
        hist=InteractionHistory.from_graph(graph),
        partition=detect_communities(graph),
        train_nodes=frozenset(model.train_nodes),
        n_est=n_est,
    )


def structural_scores(
    ctx: StructuralContext, days: Sequence[int], weights: ScoreWeights
) -> list[ScoredInteraction]:
    return score_days(
        ctx.graph, ctx.embeddings, ctx.hist, ctx.partition, days, weights, ctx.established
    )


def attack_days(truth: camp.GroundTruth) -> list[int]:
    return sorted({day for _, _, day in truth.triples})


# ---------------------------------------------------------------------------
# Verifier wiring.


def candidate_texts(
    store: MessageStore, sender: int, receiver: int, day: int, budget: int
) -> tuple[str, str]:
    """History summary text and current-day text for one interaction."""
    current = store.for_pair_day(sender, receiver, day)
    if not current:
        raise DataError(f"no message content for interaction ({sender}, {receiver}, {day})")
    history = get_message_history(store, sender, receiver, day)
    summary = summarize_history([m.text for m in history], budget)
    return summary, " ".join(m.text for m in current)


def build_verifier_dataset(
    store: MessageStore,
    provider,
    *,
    n_legit: int = 300,
    seed: int = 0,
    budget: int = 64,
) -> list[tuple[np.ndarray, np.ndarray, int]]:
    """Labeled (history, current, y) triples: every attack plus sampled legit."""
    attacks = [m for m in store if m.label == LABEL_ATTACK]
    legit = [m for m in store if m.label != LABEL_ATTACK]
    if not attacks or not legit:
        raise DataError("verifier corpus needs both attack and legit messages")
    rng = np.random.default_rng(seed)
    if len(legit) > n_legit:
        idx = rng.choice(len(legit), size=n_legit, replace=False)
        legit = [legit[i] for i in sorted(idx)]
    dataset = []
    for msg in (*attacks, *legit):
        history = get_message_history(store, msg.sender, msg.receiver, msg.day)
        summary = summarize_history([m.text for m in history], budget)
        h1 = provider.embed_text(summary).rows
        h2 = provider.embed_text(msg.text).rows
        dataset.append((h1, h2, 1 if msg.label == LABEL_ATTACK else 0))
    return dataset


def train_verifier(
    store: MessageStore,
    provider,
    *,
    epochs: int = 30,
    lr: float = 0.05,
    seed: int = 0,
    n_legit: int = 300,
    budget: int = 64,
    k: int = 256,
) -> TrainResult:
    dataset = build_verifier_dataset(store, provider, n_legit=n_legit, seed=seed, budget=budget)
    return train_head(dataset, epochs=epochs, lr=lr, seed=seed, k=k)


def verify_candidates(
    keys: Sequence[Key],
    store: MessageStore,
    provider,
    co: CoAttentionParams,
    mlp: MlpParams,
    budget: int = 64,
) -> dict[Key, VerifierVerdict]:
    out: dict[Key, VerifierVerdict] = {}
    for sender, receiver, day in keys:
        summary, current = candidate_texts(store, sender, receiver, day, budget)
        out[(sender, receiver, day)] = verify_pair(summary, current, provider, co, mlp)
    return out


# ---------------------------------------------------------------------------
# Insider branch assessment.


@dataclass(frozen=True)
class InsiderAssessment:
    sender: int
    receiver: int
    day: int
    score: InsiderScore
    s_insider: float


def assess_insider_candidates(
    scored: Sequence[ScoredInteraction],
    ctx: StructuralContext,
    store: MessageStore,
    provider,
    verdicts: Mapping[Key, VerifierVerdict],
    *,
    invert_struct: bool = False,
) -> list[InsiderAssessment]:
    """Ego-centric risk for every insider-branch interaction with a verdict."""
    out = []
    for s in scored:
        if s.branch != BRANCH_INSIDER:
            continue
        key = (s.sender, s.receiver, s.day)
        if key not in verdicts:
            continue
        sent = [m for m in store.sent_by(s.sender) if m.day < s.day][-50:]
        if not sent:
            continue
        profile = InsiderProfile(node=s.sender)
        for msg in sent:
            profile.push(provider.embed_text(msg.text))
        current = store.for_pair_day(s.sender, s.receiver, s.day)
        if not current:
            continue
        current_seq = provider.embed_text(" ".join(m.text for m in current))
        d_rec = pairwise_recipient_deviation(
            pair_daily_series(ctx.graph, s.sender, s.receiver), s.day
        )
        d_ling = linguistic_drift(current_seq, profile)
        s_struct = cosine_sim01(ctx.embeddings[s.sender], ctx.embeddings[s.receiver])
        if invert_struct:
            s_struct = 1.0 - s_struct
        score = InsiderScore(
            d_rec=d_rec, d_ling=d_ling, i_man=verdicts[key].i_man, s_struct=s_struct
        )
        out.append(
            InsiderAssessment(
                sender=s.sender,
                receiver=s.receiver,
                day=s.day,
                score=score,
                s_insider=score.s_insider,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Temporal generalization experiment.


@dataclass
class TemporalResult:
    recall_shifted: dict[float, float] = field(default_factory=dict)
    recall_unshifted: dict[float, float] = field(default_factory=dict)
    totals: dict[str, int] = field(default_factory=dict)
    checksum_before: str = ""
    checksum_after: str = ""

    @property
    def model_frozen(self) -> bool:
        return self.checksum_before == self.checksum_after


def temporal_experiment(
    clean: ActivityGraph,
    specs: Sequence[camp.CampaignSpec],
    *,
    cutoff: int = 731,
    delta: int = 731,
    weights: ScoreWeights,
    taus: Sequence[float] = (0.60, 0.70),
    seed: int = 0,
    epochs: int = 40,
    lr: float = 0.5,
    proj: FeatureProjection | None = None,
    n_est: int = N_EST_DEFAULT,
    inject_seed: int = 0,
) -> TemporalResult:
    """Train on the pre-cutoff window only, then score shifted campaigns frozen."""
    train_graph, _ = temporal_split(clean, cutoff)
    model = train_sage(train_graph, proj, epochs=epochs, lr=lr, seed=seed)
    result = TemporalResult(checksum_before=model.checksum())

    def _recall(specs_used) -> tuple[dict[float, float], int]:
        aug, truth, _ = camp.inject_all(clean, list(specs_used), seed=inject_seed)
        ctx = prepare_context(aug, model, n_est)
        scores = structural_scores(ctx, attack_days(truth), weights)
        report = ev.sweep_thresholds(scores, truth, taus)
        return {tau: report.row_at(tau).recall for tau in taus}, len(truth.triples)

    result.recall_unshifted, result.totals["unshifted"] = _recall(specs)
    shifted = [camp.shift_campaign(s, delta, clean.t_days) for s in specs]
    result.recall_shifted, result.totals["shifted"] = _recall(shifted)
    result.checksum_after = model.checksum()
    return result


# ---------------------------------------------------------------------------
# Report writers (deterministic formatting).


def write_scores_csv(scores: Sequence[ScoredInteraction], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "sender", "receiver", "s1", "s2", "s3", "s_final", "branch"])
        for s in sorted(scores, key=lambda x: (x.day, x.sender, x.receiver)):
            writer.writerow(
                [
                    s.day,
                    s.sender,
                    s.receiver,
                    f"{s.phases.s1:.6f}",
                    f"{s.phases.s2:.6f}",
                    f"{s.phases.s3:.6f}",
                    f"{s.s_final:.6f}",
                    s.branch,
                ]
            )


def write_verdicts_csv(verdicts: Mapping[Key, VerifierVerdict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "sender", "receiver", "p", "flag"])
        for (sender, receiver, day), verdict in sorted(
            verdicts.items(), key=lambda kv: (kv[0][2], kv[0][0], kv[0][1])
        ):
            writer.writerow([day, sender, receiver, f"{verdict.probability:.6f}", int(verdict.flag)])


def write_truth_csv(truth: camp.GroundTruth, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["campaign", "sender", "receiver", "day"])
        for campaign in sorted(truth.by_campaign):
            for sender, receiver, day in sorted(truth.by_campaign[campaign]):
                writer.writerow([campaign, sender, receiver, day])


def write_report_csv(report: ev.EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "tau", "tp", "fp", "fn", "recall", "precision", "f1", "filter_load"])
        for row in report.rows:
            writer.writerow(
                [
                    report.stage,
                    f"{row.tau:.2f}",
                    row.tp,
                    row.fp,
                    row.fn,
                    f"{row.recall:.6f}",
                    f"{row.precision:.6f}",
                    f"{row.f1:.6f}",
                    f"{row.filter_load:.6f}",
                ]
            )
