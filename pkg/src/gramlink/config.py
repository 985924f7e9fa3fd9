"""Hyperparameters, dataset presets and config-file handling."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .gram_transformer import GramTransformerConfig, MaskMode, Variant
from .kge import ScoreFn
from .ngram_graph import NodeOrderStrategy


@dataclass
class TrainConfig:
    learning_rate: float = 0.0005
    batch_size: int = 32
    epochs: int = 80
    label_smoothing: float = 0.1
    dropout: float = 0.5
    max_n: int = 13
    max_nodes: int = 90
    seed: int = 0
    mask_mode: str = "post"
    variant: str = "full"
    score_fn: str = "transe"
    strategy: str = "level_major"
    d_model: int = 200
    n_heads: int = 3
    n_layers: int = 1
    d_ff: int = 200
    entity_init_std: float = 0.1
    # None trains for the fixed epoch count; otherwise stop after this many
    # epochs without a dev MRR improvement
    patience: int | None = None
    # "best_dev" restores the parameters of the best dev-MRR epoch, "last" keeps
    # the final ones
    keep: str = "best_dev"
    strip_prefix: bool = False
    split_camel: bool = False
    edge_embeddings: str | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        try:
            self.mask_mode = MaskMode.parse(self.mask_mode).value
            self.variant = Variant.parse(self.variant).value
            self.score_fn = ScoreFn.parse(self.score_fn).value
            self.strategy = NodeOrderStrategy.parse(self.strategy).value
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for name in ("batch_size", "max_n", "max_nodes", "d_model", "n_heads", "n_layers", "d_ff"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must be in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.d_model < self.n_heads:
            raise ConfigError(f"d_model={self.d_model} smaller than n_heads={self.n_heads}")
        if self.keep not in ("best_dev", "last"):
            raise ConfigError(f"keep must be 'best_dev' or 'last', got {self.keep!r}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be positive")

    def transformer_config(self) -> GramTransformerConfig:
        return GramTransformerConfig(
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            d_ff=self.d_ff,
            dropout=self.dropout,
            mask_mode=self.mask_mode,
            variant=self.variant,
            max_nodes=self.max_nodes,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig.from_dict({**self.to_dict(), **changes})


PRESETS: dict[str, dict] = {
    "nell": {"max_n": 13, "max_nodes": 90, "epochs": 80},
    "wiki": {"max_n": 15, "max_nodes": 70, "epochs": 70},
}


@dataclass
class RunConfig:
    """Everything a CLI run needs, fully resolved."""

    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str | None = None
    out: str | None = None
    preset: str | None = None

    def to_dict(self) -> dict:
        return {"preset": self.preset, "dataset": self.dataset, "out": self.out, **self.train.to_dict()}

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        values = dict(values)
        preset = values.pop("preset", None)
        dataset = values.pop("dataset", None)
        out = values.pop("out", None)
        base = {}
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            base = dict(PRESETS[preset])
        return cls(TrainConfig.from_dict({**base, **values}), dataset, out, preset)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_config_file(path) -> dict:
    """Read a JSON object of config keys (a previous ``config.json`` works)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    try:
        values = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    if not isinstance(values, dict):
        raise ConfigError(f"{p}: expected a JSON object")
    return values
