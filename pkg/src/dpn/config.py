"""Flat ``key = value`` run configuration with command-line overrides.

Unknown keys are errors so a misspelled hyperparameter fails loudly.
"""
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .model import TrainConfig
from .refinement import PretrainConfig
from .synthetic import SyntheticSpec, Template

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit status 2."""


@dataclass
class RunConfig:
    command: str = ""
    out_dir: str = "runs/latest"
    seed: int = 0
    threads: int = 1
    # data
    data_dir: str = ""
    interactions: str = ""
    impressions: str = ""
    col_user: str = "user"
    col_item: str = "item"
    col_category: str = "category"
    col_timestamp: str = "timestamp"
    test_fraction: float = 0.2
    neg_ratio: int = 1
    # synthetic generator
    n_users: int = 20000
    n_items: int = 1000
    n_categories: int = 50
    min_len: int = 10
    max_len: int = 30
    templates: str = "1 2 3"
    emission: float = 1 / 3
    decoy: float = 1 / 3
    lift: float = 0.9
    base_rate: float = 0.1
    target_tail_prob: float = 0.5
    impressions_per_user: int = 2
    max_gap: int = 1
    # model / training
    seq_len: int = 100
    dim: int = 16
    top_k: int = 5
    pattern_len: int = 5
    refined_len: int = 3
    batch_size: int = 256
    lr: float = 0.001
    epochs: int = 5
    no_tprm: bool = False
    no_sprm: bool = False
    no_tpa: bool = False
    base_only: bool = False
    heads: int = 2
    depth: int = 2
    # refinement pretraining
    pretrain_batch: int = 8196
    pretrain_epochs: int = 10
    pretrain_lr: float = 0.001
    pretrain_max_patterns: int = 0
    pretrain_holdout: float = 0.1
    sprm_checkpoint: str = ""
    # eval / analyze
    model_run: str = ""
    baseline_run: str = ""
    pattern_order: int = 3
    top_patterns: int = 5
    min_support: int = 50
    dump_instances: int = 20

    def validate(self) -> None:
        if self.command not in ("", "synth", "pretrain", "train", "eval", "analyze"):
            raise ConfigError(f"unknown command {self.command!r}")
        positive = ["threads", "seq_len", "dim", "top_k", "pattern_len", "refined_len",
                    "batch_size", "epochs", "heads", "depth", "pretrain_batch", "pretrain_epochs",
                    "pattern_order", "n_users", "n_items", "n_categories"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.refined_len > self.pattern_len:
            raise ConfigError("refined_len must not exceed pattern_len")
        if (2 * self.dim) % self.heads:
            raise ConfigError(f"behavior width {2 * self.dim} not divisible by heads={self.heads}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if not 0.0 <= self.pretrain_holdout < 1.0:
            raise ConfigError("pretrain_holdout must lie in [0, 1)")
        if self.lr <= 0 or self.pretrain_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.pattern_order < 2:
            raise ConfigError("pattern_order must be >= 2")

    def train_config(self) -> TrainConfig:
        return TrainConfig(seq_len=self.seq_len, dim=self.dim, top_k=self.top_k,
                           pattern_len=self.pattern_len, refined_len=self.refined_len,
                           batch_size=self.batch_size, lr=self.lr, epochs=self.epochs,
                           no_tprm=self.no_tprm, no_sprm=self.no_sprm, no_tpa=self.no_tpa,
                           base_only=self.base_only, heads=self.heads, depth=self.depth, seed=self.seed)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(length=self.pattern_len, s=self.refined_len, dim=self.dim,
                              batch_size=self.pretrain_batch, epochs=self.pretrain_epochs,
                              lr=self.pretrain_lr, holdout=self.pretrain_holdout,
                              heads=self.heads, depth=self.depth, seed=self.seed)

    def synthetic_spec(self) -> SyntheticSpec:
        try:
            groups = [tuple(int(x) for x in g.split()) for g in self.templates.split(";") if g.strip()]
        except ValueError as exc:
            raise ConfigError(f"templates: {exc}") from None
        temps = [Template(g, self.emission, self.lift, self.decoy) for g in groups]
        spec = SyntheticSpec(self.n_users, self.n_items, self.n_categories, self.min_len, self.max_len,
                             temps, self.base_rate, self.target_tail_prob, self.impressions_per_user,
                             self.max_gap)
        try:
            spec.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return spec

    def columns(self) -> dict:
        return {"user": self.col_user, "item": self.col_item,
                "category": self.col_category, "timestamp": self.col_timestamp}

    def dumps(self) -> str:
        lines = [f"# schema_version = {SCHEMA_VERSION}"]
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    if kind is bool or kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None
    return raw


def field_types() -> dict:
    return {f.name: f.type for f in fields(RunConfig)}


def parse_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    types = field_types()
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        out[key] = _coerce(key, types[key], value)
    return out


def resolve(config_file=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then explicit overrides (already typed or raw strings)."""
    values = {}
    if config_file:
        path = Path(config_file)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        values.update(parse_text(path.read_text()))
    types = field_types()
    for key, value in (overrides or {}).items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, types[key], value) if isinstance(value, str) else value
    cfg = dataclasses.replace(RunConfig(), **values)
    cfg.validate()
    return cfg


def load_snapshot(path) -> RunConfig:
    """Read back a run directory's resolved ``config.txt``."""
    return dataclasses.replace(RunConfig(), **parse_text(Path(path).read_text()))
