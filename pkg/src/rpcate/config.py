"""Run configuration: one YAML/JSON document drives every CLI command.

Example::

    seed: 0
    out: runs/demo
    data:
      generator: {m: 360, n: 3, bias_kind: monotone, noise_std: 0.01}
      # or: path: my_data.csv
      sort_feature: x0
      eval_count: 60
    model: {w: 25, N: 2, residual: text, ablation: full}
    train: {lr: 0.001, epochs: 2000, lambda: 0.0}
    grid: {w: [9, 25], N: [1, 2, 3, 4, 5], lr: [0.01, 0.001]}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import yaml

from .data import Dataset, load_csv, split_dataset
from .model import HyperParams
from .synthetic import GenConfig, generate
from .training import SEARCH_GRID


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


_DATA_KEYS = {"path", "generator", "sort_feature", "eval_count", "shuffle_split", "scale_features"}
_MODEL_KEYS = {"w", "N", "d_h", "d_m", "n1", "n2", "n3", "n4", "residual", "share_params", "ablation"}
_TRAIN_KEYS = {"lr", "epochs", "lambda", "reg", "standardize_target", "batch_size"}
_TOP_KEYS = {"seed", "out", "data", "model", "train", "grid"}


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    data_path: Optional[str] = None
    generator: Optional[dict] = None
    sort_feature: Union[int, str] = 0
    eval_count: int = 60
    shuffle_split: bool = True
    scale_features: bool = False
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    grid: dict = field(default_factory=lambda: {k: list(v) for k, v in SEARCH_GRID.items()})

    def validate(self) -> "RunConfig":
        if (self.data_path is None) == (self.generator is None):
            raise ConfigError("data: exactly one of 'path' or 'generator' is required")
        if self.data_path is not None and not Path(self.data_path).is_file():
            raise ConfigError(f"data.path {self.data_path!r} does not exist")
        if self.generator is not None:
            self.gen_config()
        self.hyperparams(x_prime=0)
        return self

    def gen_config(self) -> GenConfig:
        spec = dict(self.generator or {})
        spec.setdefault("seed", self.seed)
        try:
            return GenConfig(**spec)
        except TypeError as exc:
            raise ConfigError(f"data.generator: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"data.generator: {exc}") from None

    def hyperparams(self, x_prime: int) -> HyperParams:
        values = dict(self.model)
        t = dict(self.train)
        if "lambda" in t:
            t["lam"] = t.pop("lambda")
        values.update(t)
        values.setdefault("seed", self.seed)
        try:
            return HyperParams(x_prime=x_prime, **values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def load_data(self) -> Dataset:
        if self.data_path is not None:
            return load_csv(self.data_path)
        return generate(self.gen_config())

    def load_splits(self) -> tuple:
        d = self.load_data()
        return split_dataset(d, self.eval_count, seed=self.seed, shuffle=self.shuffle_split)

    def x_prime(self, d: Dataset) -> int:
        try:
            return d.feature_index(self.sort_feature)
        except ValueError as exc:
            raise ConfigError(f"data.sort_feature: {exc}") from None


def _check_keys(section: str, given: dict, allowed: set) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    _check_keys("config", doc, _TOP_KEYS)
    data = doc.get("data") or {}
    _check_keys("data", data, _DATA_KEYS)
    model = doc.get("model") or {}
    _check_keys("model", model, _MODEL_KEYS)
    train = doc.get("train") or {}
    _check_keys("train", train, _TRAIN_KEYS)
    cfg = RunConfig(
        seed=int(doc.get("seed", 0)),
        out=str(doc.get("out", "runs/default")),
        data_path=data.get("path"),
        generator=data.get("generator"),
        sort_feature=data.get("sort_feature", 0),
        eval_count=int(data.get("eval_count", 60)),
        shuffle_split=bool(data.get("shuffle_split", True)),
        scale_features=bool(data.get("scale_features", False)),
        model=dict(model),
        train=dict(train),
    )
    if "grid" in doc:
        cfg.grid = dict(doc["grid"])
    return cfg


def load_config(path: Union[str, Path, None]) -> RunConfig:
    """Read a YAML or JSON config; ``None`` gives the defaults with the built-in generator."""
    if path is None:
        return RunConfig(generator={})
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply CLI flag overrides; ``None`` values are ignored."""
    cfg = dataclasses.replace(cfg, model=dict(cfg.model), train=dict(cfg.train))
    if overrides.get("seed") is not None:
        cfg.seed = overrides["seed"]
    if overrides.get("out") is not None:
        cfg.out = overrides["out"]
    for key in ("ablation", "residual"):
        if overrides.get(key) is not None:
            cfg.model[key] = overrides[key]
    return cfg
