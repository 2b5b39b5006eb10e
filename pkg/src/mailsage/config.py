"""Flat dotted-key configuration with a strict schema.

Every tunable the pipeline reads is named here with its default, so a run is
fully auditable from its config file. Unknown keys are rejected rather than
ignored; CLI flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "paths.activity": (str, ""),
    "paths.activity_format": (str, "raw-email-log"),
    "paths.edge_list": (str, ""),
    "paths.messages": (str, ""),
    "paths.out_dir": (str, "out"),
    "ingest.t_days": (int, 1448),
    "ingest.t0": (str, "1999-01-01"),
    "gnn.seed": (int, 0),
    "gnn.epochs": (int, 40),
    "gnn.lr": (float, 0.5),
    "gnn.negatives": (int, 5),
    "gnn.projection": (str, "weekly-stats"),
    "gnn.input_dim": (int, 212),
    "phase2.alpha": (float, 0.4),
    "phase2.beta": (float, 0.3),
    "phase2.gamma": (float, 0.3),
    "agg.w1": (float, 0.5),
    "agg.w2": (float, 1.0 / 3.0),
    "agg.w3": (float, 1.0 / 3.0),
    "insider.n_est": (int, 30),
    "insider.threshold": (float, 0.60),
    "insider.invert_struct": (_bool, False),
    "verifier.attention_dim": (int, 256),
    "verifier.epochs": (int, 30),
    "verifier.lr": (float, 0.05),
    "verifier.seed": (int, 0),
    "verifier.dropout": (float, 0.3),
    "verifier.summary_budget": (int, 64),
    "verifier.n_legit": (int, 300),
    "provider.kind": (str, "stub"),
    "provider.seed": (int, 0),
    "provider.embeddings": (str, ""),
    "scan.window": (int, 30),
    "scan.cap": (float, 30.0),
    "eval.taus": (_floats, (0.65, 0.70, 0.75, 0.80)),
    "eval.tau": (float, 0.70),
    "campaigns.seed": (int, 0),
    "temporal.cutoff": (int, 731),
    "temporal.shift": (int, 731),
    "fixtures.seed": (int, 7),
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def out_path(self, name: str) -> Path:
        out = Path(self["paths.out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        return out / name


def default_config() -> RunConfig:
    return RunConfig(values={key: default for key, (_, default) in SCHEMA.items()})


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    cfg = default_config()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}: line {lineno}: unknown key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            cfg.values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}: line {lineno}: bad value for {key}: {exc}") from exc
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return default_config()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            cfg.values[key] = parser(value) if isinstance(value, str) else value
        except ValueError as exc:
            raise ConfigError(f"bad override for {key}: {exc}") from exc
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = [f"{key} = {_format(cfg.values[key])}" for key in sorted(SCHEMA)]
    return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(f"{v:g}" for v in value)
    return str(value)
