"""Synthetic desk-scale background traffic for calibration and tests.

300 nodes exchange routine mail over the full 1448-day horizon under a
stationary generative process: stable partner rosters inside six round-robin
communities, occasional cross-community first contacts (the structural
lookalikes that stress precision), and two fixed-roster admin broadcasters
(the volume-only false-positive case). Node ids cover every built-in
campaign target, and node 1023 is shaped as a quiet established insider.

Everything is deterministic for a given seed, including message text.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import ActivityGraph, ActivityRecord, T_DEFAULT, build_graph
from .providers import LABEL_LEGIT, MessageRecord
from .scoring import ScoreWeights

FIXTURE_SEED = 7

N_COMMUNITIES = 6
P_NEW_CONTACT = 0.0035
P_RECONTACT = 0.6
ADMIN_NODES = (0, 1)
ADMIN_ROSTER_SIZE = 60
ADMIN_PERIOD = 14
INSIDER_NODE = 1023
INSIDER_PEER = 145

# Weights tuned once against this generator and frozen; they respect the
# (1 + w1) * (w2 + w3) <= 1 range bound like the defaults do.
CALIBRATED_WEIGHTS = ScoreWeights(
    alpha=0.8,
    beta=0.3,
    gamma=0.2,
    w1=0.5,
    w2=0.62,
    w3=2.0 / 3.0 - 0.62,
)

_LEGIT_TEMPLATES = (
    ("weekly status", "attaching the weekly metrics summary for the team {tok}"),
    ("meeting notes", "notes from the standup are in the shared folder {tok}"),
    ("schedule check", "can we move our sync to thursday afternoon {tok}"),
    ("report draft", "draft of the quarterly report attached for review {tok}"),
    ("lunch plans", "grabbing lunch at noon if anyone wants to join {tok}"),
    ("build maintenance", "the build server restarts tonight plan accordingly {tok}"),
    ("travel booking", "my flights for the site visit are confirmed {tok}"),
    ("code review", "left comments on your branch when you get a chance {tok}"),
)
_INTRO_TEMPLATE = ("introduction", "hi this is the platform team looping you in on the rollout {tok}")
_ADMIN_TEMPLATE = ("office announcement", "reminder the north lot closes friday for repaving {tok}")


def background_nodes() -> list[int]:
    return sorted(set(range(297)) | {817, 1017, INSIDER_NODE})


def community_of(node: int) -> int:
    return node % N_COMMUNITIES


@dataclass
class BackgroundTraffic:
    records: list[ActivityRecord]
    messages: list[MessageRecord]
    seed: int
    t_days: int

    def build_graph(self) -> ActivityGraph:
        return build_graph(self.records, t_days=self.t_days)


def _pick_partners(rng: np.random.Generator, node: int, nodes: list[int]) -> list[int]:
    same = [n for n in nodes if n != node and community_of(n) == community_of(node)]
    cross = [n for n in nodes if n != node and community_of(n) != community_of(node)]
    n_partners = int(rng.integers(3, 6))
    n_cross = sum(1 for _ in range(n_partners) if rng.random() < 0.2)
    n_same = n_partners - n_cross
    picks = list(rng.choice(same, size=min(n_same, len(same)), replace=False))
    if n_cross:
        picks += list(rng.choice(cross, size=min(n_cross, len(cross)), replace=False))
    return sorted(int(p) for p in picks)


def _activity_profile(
    rng: np.random.Generator, node: int, t_days: int, base_rate: float
) -> np.ndarray:
    """Per-day send probability with a community-phased seasonal rhythm.

    Distinct temporal signatures are what give the embedding features any
    identity; without them every node looks statistically interchangeable
    and no aggregator could tell communities apart.
    """
    days = np.arange(t_days)
    phase = 2.0 * np.pi * community_of(node) / N_COMMUNITIES
    jitter = rng.uniform(-0.3, 0.3)
    season = 1.0 + 0.45 * np.sin(2.0 * np.pi * days / 182.0 + phase + jitter)
    return np.clip(base_rate * season, 0.0, 0.95)


def generate_background(seed: int = FIXTURE_SEED, t_days: int = T_DEFAULT) -> BackgroundTraffic:
    rng = np.random.default_rng(seed)
    nodes = background_nodes()
    node_arr = np.asarray(nodes)

    p_active = {n: float(np.exp(rng.uniform(np.log(0.10), np.log(0.40)))) for n in nodes}
    volume_scale = {n: int(rng.integers(1, 4)) for n in nodes}
    partners = {n: _pick_partners(rng, n, nodes) for n in nodes}

    # steady insider profile: a normal partner roster (so the account is
    # structurally unremarkable) but metronomic volume, and no prior channel
    # to its campaign peer
    p_active[INSIDER_NODE] = 0.15
    for n in nodes:
        partners[n] = [p for p in partners[n] if (n, p) not in ((INSIDER_NODE, INSIDER_PEER), (INSIDER_PEER, INSIDER_NODE))]

    admin_roster = {
        a: sorted(int(x) for x in rng.choice([n for n in nodes if n != a], size=ADMIN_ROSTER_SIZE, replace=False))
        for a in ADMIN_NODES
    }

    template_pref = {n: rng.choice(len(_LEGIT_TEMPLATES), size=3).tolist() for n in nodes}

    activity = {
        n: rng.random(t_days) < _activity_profile(rng, n, t_days, p_active[n]) for n in nodes
    }

    records: list[ActivityRecord] = []
    pair_days: set[tuple[int, int, int]] = set()
    intro_pairs: set[tuple[int, int, int]] = set()

    for day in range(1, t_days + 1):
        for node in nodes:
            if activity[node][day - 1] and partners[node]:
                n_rec = 1 + (rng.random() < 0.3)
                pool = partners[node]
                chosen = rng.choice(pool, size=min(n_rec, len(pool)), replace=False)
                for recv in chosen:
                    # the insider stays metronomic so its own channel is the
                    # only thing that ever spikes
                    if node == INSIDER_NODE:
                        count = 1
                    else:
                        count = int(rng.integers(1, 3)) * volume_scale[node]
                    records.append(ActivityRecord(node, (int(recv),), day, count))
                    pair_days.add((node, int(recv), day))
            # cross-roster first contact: the benign structural lookalike
            if node != INSIDER_NODE and rng.random() < P_NEW_CONTACT:
                candidates = node_arr[(node_arr != node)]
                recv = int(rng.choice(candidates))
                if recv in partners[node] or (node, recv) in (
                    (INSIDER_NODE, INSIDER_PEER),
                    (INSIDER_PEER, INSIDER_NODE),
                ):
                    continue
                count = int(rng.integers(2, 4))
                records.append(ActivityRecord(node, (recv,), day, count))
                pair_days.add((node, recv, day))
                intro_pairs.add((node, recv, day))
                if rng.random() < P_RECONTACT:
                    partners[node] = sorted(set(partners[node]) | {recv})
        for admin in ADMIN_NODES:
            if day % ADMIN_PERIOD == 3 + 4 * admin:
                for recv in admin_roster[admin]:
                    records.append(ActivityRecord(admin, (recv,), day, 1))
                    pair_days.add((admin, recv, day))

    messages = _messages_for(sorted(pair_days), intro_pairs, template_pref, seed)
    return BackgroundTraffic(records=records, messages=messages, seed=seed, t_days=t_days)


def _messages_for(
    pair_days: list[tuple[int, int, int]],
    intro_pairs: set[tuple[int, int, int]],
    template_pref: dict[int, list[int]],
    seed: int,
) -> list[MessageRecord]:
    rng = np.random.default_rng(seed + 1)
    out = []
    for sender, receiver, day in pair_days:
        if sender in ADMIN_NODES and day % ADMIN_PERIOD == 3 + 4 * sender:
            subject, body = _ADMIN_TEMPLATE
        elif (sender, receiver, day) in intro_pairs:
            subject, body = _INTRO_TEMPLATE
        else:
            prefs = template_pref[sender]
            subject, body = _LEGIT_TEMPLATES[prefs[day % len(prefs)]]
        out.append(
            MessageRecord(
                id=f"bg-{sender}-{receiver}-{day}",
                sender=sender,
                receiver=receiver,
                day=day,
                subject=subject,
                body=body.format(tok=f"ref{rng.integers(0, 99999):05d}"),
                label=LABEL_LEGIT,
            )
        )
    return out
