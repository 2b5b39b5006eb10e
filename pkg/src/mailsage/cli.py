"""Command-line pipeline: ingest | train-gnn | inject | score | verify | evaluate | baseline | export-fixtures."""

from __future__ import annotations

import argparse
import csv
import sys
from datetime import date
from pathlib import Path

from . import campaigns as camp
from . import evaluate as ev
from . import pipeline as pl
from .config import RunConfig, apply_overrides, dump_config, load_config
from .errors import ConfigError, DataError, MailsageError
from .fixtures import generate_background
from .gnn import FeatureProjection, load_model, save_model, train_sage
from .ingest import (
    build_graph,
    load_graph,
    parse_activity_records,
    save_graph,
)
from .insider import insider_threshold
from .providers import (
    FileProvider,
    MessageStore,
    StubProvider,
    load_embedding_file,
    load_messages_csv,
    save_messages_csv,
)
from .scoring import PhaseScores, ScoredInteraction, ScoreWeights
from .verifier import load_head, save_head

_REQUIRES = {
    "train-gnn": ("graph.bin", "ingest"),
    "inject": ("graph.bin", "ingest"),
    "score": ("graph-augmented.bin", "inject"),
    "verify": ("scores.csv", "score"),
    "evaluate": ("scores.csv", "score"),
    "baseline": ("graph-augmented.bin", "inject"),
}


def _need(cfg: RunConfig, name: str, producer: str) -> Path:
    path = cfg.out_path(name)
    if not path.exists():
        raise DataError(f"missing {path}; run {producer} first")
    return path


def _weights(cfg: RunConfig) -> ScoreWeights:
    return ScoreWeights(
        alpha=cfg["phase2.alpha"],
        beta=cfg["phase2.beta"],
        gamma=cfg["phase2.gamma"],
        w1=cfg["agg.w1"],
        w2=cfg["agg.w2"],
        w3=cfg["agg.w3"],
    )


def _projection(cfg: RunConfig) -> FeatureProjection:
    return FeatureProjection(mode=cfg["gnn.projection"], input_dim=cfg["gnn.input_dim"])


def _provider(cfg: RunConfig):
    kind = cfg["provider.kind"]
    if kind == "stub":
        return StubProvider(seed=cfg["provider.seed"])
    if kind == "file":
        path = cfg["provider.embeddings"]
        if not path:
            raise ConfigError("provider.kind = file needs provider.embeddings")
        return FileProvider(load_embedding_file(path))
    raise ConfigError(f"unknown provider.kind {kind!r}")


def _message_store(cfg: RunConfig) -> MessageStore:
    merged = MessageStore()
    base = cfg["paths.messages"]
    if base:
        for rec in load_messages_csv(base):
            merged.add(rec)
    injected = cfg.out_path("messages-injected.csv")
    if injected.exists():
        for rec in load_messages_csv(injected):
            merged.add(rec)
    if len(merged) == 0:
        raise DataError("no message corpus configured (paths.messages) or injected")
    return merged


def _load_truth(cfg: RunConfig) -> camp.GroundTruth:
    path = _need(cfg, "truth.csv", "inject")
    by_campaign: dict[str, set[tuple[int, int, int]]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            campaign, sender, receiver, day = row
            by_campaign.setdefault(campaign, set()).add((int(sender), int(receiver), int(day)))
    return camp.GroundTruth(by_campaign=by_campaign)


def _load_scores(cfg: RunConfig) -> list[ScoredInteraction]:
    path = _need(cfg, "scores.csv", "score")
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            day, sender, receiver, s1, s2, s3, s_final, branch = row
            out.append(
                ScoredInteraction(
                    sender=int(sender),
                    receiver=int(receiver),
                    day=int(day),
                    phases=PhaseScores(s1=float(s1), s2=float(s2), s3=float(s3)),
                    s_final=float(s_final),
                    branch=branch,
                )
            )
    return out


def cmd_ingest(cfg: RunConfig) -> int:
    activity = cfg["paths.activity"]
    if not activity:
        raise ConfigError("paths.activity is required for ingest")
    records = parse_activity_records(
        activity,
        cfg["paths.activity_format"],
        edge_path=cfg["paths.edge_list"] or None,
        t0=date.fromisoformat(cfg["ingest.t0"]),
        t_days=cfg["ingest.t_days"],
    )
    graph = build_graph(records, cfg["ingest.t_days"], date.fromisoformat(cfg["ingest.t0"]))
    save_graph(graph, cfg.out_path("graph.bin"))
    print(f"ingested {len(records)} records -> {graph.node_count()} nodes, "
          f"{graph.edge_count()} edges")
    return 0


def cmd_train_gnn(cfg: RunConfig) -> int:
    graph = load_graph(_need(cfg, *_REQUIRES["train-gnn"]))
    model = train_sage(
        graph,
        _projection(cfg),
        epochs=cfg["gnn.epochs"],
        lr=cfg["gnn.lr"],
        negatives=cfg["gnn.negatives"],
        seed=cfg["gnn.seed"],
    )
    save_model(model, cfg.out_path("gnn.ckpt"))
    first, last = model.loss_history[0], model.loss_history[-1]
    print(f"trained {cfg['gnn.epochs']} epochs; loss {first:.4f} -> {last:.4f}")
    return 0


def cmd_inject(cfg: RunConfig) -> int:
    graph = load_graph(_need(cfg, *_REQUIRES["inject"]))
    aug, truth, messages = camp.inject_all(graph, camp.builtin_campaigns(), seed=cfg["campaigns.seed"])
    save_graph(aug, cfg.out_path("graph-augmented.bin"))
    pl.write_truth_csv(truth, cfg.out_path("truth.csv"))
    save_messages_csv(messages, cfg.out_path("messages-injected.csv"))
    print(f"injected {len(truth.by_campaign)} campaigns: {len(truth.triples)} attack "
          f"interactions, {len(messages)} messages")
    return 0


def cmd_score(cfg: RunConfig) -> int:
    aug = load_graph(_need(cfg, *_REQUIRES["score"]))
    model = load_model(_need(cfg, "gnn.ckpt", "train-gnn"))
    truth = _load_truth(cfg)
    ctx = pl.prepare_context(aug, model, cfg["insider.n_est"])
    scores = pl.structural_scores(ctx, pl.attack_days(truth), _weights(cfg))
    pl.write_scores_csv(scores, cfg.out_path("scores.csv"))
    print(f"scored {len(scores)} interactions over {len(pl.attack_days(truth))} days")
    return 0


def cmd_verify(cfg: RunConfig) -> int:
    scores = _load_scores(cfg)
    store = _message_store(cfg)
    provider = _provider(cfg)
    head_path = cfg.out_path("head.ckpt")
    if head_path.exists():
        co, mlp = load_head(head_path)
    else:
        result = pl.train_verifier(
            store,
            provider,
            epochs=cfg["verifier.epochs"],
            lr=cfg["verifier.lr"],
            seed=cfg["verifier.seed"],
            n_legit=cfg["verifier.n_legit"],
            budget=cfg["verifier.summary_budget"],
            k=cfg["verifier.attention_dim"],
        )
        co, mlp = result.co, result.mlp
        save_head(co, mlp, head_path)
    tau = cfg["eval.tau"]
    candidates = [(s.sender, s.receiver, s.day) for s in scores if s.s_final >= tau]
    verdicts = pl.verify_candidates(
        candidates, store, provider, co, mlp, cfg["verifier.summary_budget"]
    )
    pl.write_verdicts_csv(verdicts, cfg.out_path("verdicts.csv"))

    aug = load_graph(_need(cfg, "graph-augmented.bin", "inject"))
    model = load_model(_need(cfg, "gnn.ckpt", "train-gnn"))
    ctx = pl.prepare_context(aug, model, cfg["insider.n_est"])
    assessments = pl.assess_insider_candidates(
        scores, ctx, store, provider, verdicts, invert_struct=cfg["insider.invert_struct"]
    )
    with open(cfg.out_path("insider.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "sender", "receiver", "d_rec", "d_ling", "i_man", "s_struct", "s_insider"])
        for a in sorted(assessments, key=lambda x: (x.day, x.sender, x.receiver)):
            writer.writerow(
                [a.day, a.sender, a.receiver, f"{a.score.d_rec:.6f}", f"{a.score.d_ling:.6f}",
                 f"{a.score.i_man:.6f}", f"{a.score.s_struct:.6f}", f"{a.s_insider:.6f}"]
            )
    print(f"verified {len(verdicts)} candidates at tau={tau}; "
          f"{sum(1 for v in verdicts.values() if v.flag)} confirmed; "
          f"{len(assessments)} insider-branch assessments")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    scores = _load_scores(cfg)
    truth = _load_truth(cfg)
    sweep = ev.sweep_thresholds(scores, truth, cfg["eval.taus"])
    print(ev.format_report(sweep))
    pl.write_report_csv(sweep, cfg.out_path("report-sweep.csv"))

    abl = ev.ablation(scores, truth, _weights(cfg), tau=cfg["eval.tau"])
    print("\nablation at tau=%.2f" % cfg["eval.tau"])
    with open(cfg.out_path("report-ablation.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phases", "tp", "fp", "recall", "precision", "f1"])
        for subset, row in abl.items():
            name = "+".join(str(p) for p in subset)
            print(f"  phases {name:7s} recall={row.recall:.3f} precision={row.precision:.3f}")
            writer.writerow([name, row.tp, row.fp, f"{row.recall:.6f}",
                             f"{row.precision:.6f}", f"{row.f1:.6f}"])

    verdict_path = cfg.out_path("verdicts.csv")
    if verdict_path.exists():
        verdicts = _read_verdicts(verdict_path)
        two = ev.two_stage_eval(scores, truth, verdicts, tau=cfg["eval.tau"])
        print()
        print(ev.format_report(two))
        pl.write_report_csv(two, cfg.out_path("report-two-stage.csv"))

    insider_path = cfg.out_path("insider.csv")
    if insider_path.exists():
        tau_i = insider_threshold(cfg["insider.threshold"])
        rows = list(csv.DictReader(open(insider_path, encoding="utf-8")))
        truth_keys = truth.triples
        flagged = {
            (int(r["sender"]), int(r["receiver"]), int(r["day"]))
            for r in rows
            if float(r["s_insider"]) >= tau_i
        }
        covered = {(int(r["sender"]), int(r["receiver"]), int(r["day"])) for r in rows}
        tp = len(flagged & truth_keys)
        denom_truth = len(covered & truth_keys)
        prec = tp / len(flagged) if flagged else 0.0
        rec = tp / denom_truth if denom_truth else 0.0
        print(f"\ninsider branch at tau={tau_i:.2f}: recall={rec:.3f} precision={prec:.3f} "
              f"over {len(covered)} assessed interactions")
    return 0


def _read_verdicts(path):
    from .verifier import VerifierVerdict

    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for day, sender, receiver, p, flag in reader:
            out[(int(sender), int(receiver), int(day))] = VerifierVerdict(
                probability=float(p), flag=bool(int(flag))
            )
    return out


def cmd_baseline(cfg: RunConfig) -> int:
    aug = load_graph(_need(cfg, *_REQUIRES["baseline"]))
    truth = _load_truth(cfg)
    window, cap = cfg["scan.window"], cfg["scan.cap"]
    print(f"scan statistic (window={window}, cap={cap:g})")
    rows = []
    for campaign in sorted(truth.by_campaign):
        triples = sorted(truth.by_campaign[campaign])
        attacker = triples[0][0]
        days = sorted({d for _, _, d in triples})
        psis = [camp.scan_statistic(aug, attacker, d, window, cap) for d in days]
        peak = max(psis)
        peak_day = days[psis.index(peak)]
        after = psis[psis.index(peak) + 1] if psis.index(peak) + 1 < len(psis) else float("nan")
        print(f"  {campaign}: peak psi={peak:.2f} on day {peak_day}; next attack day psi={after:.2f}")
        for d, psi in zip(days, psis):
            rows.append((campaign, attacker, d, psi))
    with open(cfg.out_path("report-scan.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["campaign", "node", "day", "psi"])
        for campaign, node, d, psi in rows:
            writer.writerow([campaign, node, d, f"{psi:.6f}"])

    # verifier-only pass over all interactions on attack days
    scores = _load_scores(cfg)
    store = _message_store(cfg)
    provider = _provider(cfg)
    head_path = cfg.out_path("head.ckpt")
    if not head_path.exists():
        raise DataError(f"missing {head_path}; run verify first")
    co, mlp = load_head(head_path)
    keys = [(s.sender, s.receiver, s.day) for s in scores]
    verdicts = pl.verify_candidates(keys, store, provider, co, mlp, cfg["verifier.summary_budget"])
    report = ev.verifier_only_eval(keys, verdicts, truth)
    print()
    print(ev.format_report(report))
    pl.write_report_csv(report, cfg.out_path("report-verifier-only.csv"))
    return 0


def cmd_export_fixtures(cfg: RunConfig) -> int:
    traffic = generate_background(seed=cfg["fixtures.seed"], t_days=cfg["ingest.t_days"])
    out_activity = cfg.out_path("fixture-activity.csv")
    with open(out_activity, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sender", "receiver", "date", "count"])
        from .ingest import T0_DEFAULT, index_date

        for rec in traffic.records:
            for recv in rec.receivers:
                writer.writerow([rec.sender, recv, index_date(rec.day, T0_DEFAULT).isoformat(), rec.count])
    save_messages_csv(traffic.messages, cfg.out_path("fixture-messages.csv"))
    fixture_cfg = dump_config(cfg)
    fixture_cfg = fixture_cfg.replace(
        "paths.activity = \n", f"paths.activity = {out_activity}\n"
    ).replace(
        "paths.messages = \n", f"paths.messages = {cfg.out_path('fixture-messages.csv')}\n"
    )
    cfg.out_path("fixture-config.txt").write_text(fixture_cfg, encoding="utf-8")
    print(f"exported {len(traffic.records)} activity records and "
          f"{len(traffic.messages)} messages (seed {cfg['fixtures.seed']})")
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "train-gnn": cmd_train_gnn,
    "inject": cmd_inject,
    "score": cmd_score,
    "verify": cmd_verify,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "export-fixtures": cmd_export_fixtures,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mailsage", description=__doc__)
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", default=None, help="dotted key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override gnn.seed")
    parser.add_argument("--epochs", type=int, default=None, help="override gnn.epochs")
    parser.add_argument("--lr", type=float, default=None, help="override gnn.lr")
    parser.add_argument("--out-dir", default=None, help="override paths.out_dir")
    parser.add_argument("--taus", default=None, help="override eval.taus (comma separated)")
    parser.add_argument("--cutoff", type=int, default=None, help="override temporal.cutoff")
    parser.add_argument("--shift", type=int, default=None, help="override temporal.shift")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        apply_overrides(
            cfg,
            {
                "gnn.seed": args.seed,
                "gnn.epochs": args.epochs,
                "gnn.lr": args.lr,
                "paths.out_dir": args.out_dir,
                "eval.taus": args.taus,
                "temporal.cutoff": args.cutoff,
                "temporal.shift": args.shift,
            },
        )
        return _COMMANDS[args.command](cfg)
    except MailsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
