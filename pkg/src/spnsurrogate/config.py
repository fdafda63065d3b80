"""Single JSON run configuration shared by every CLI command."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .covariates import SyntheticWeather
from .dataset import DropoutSpec
from .errors import ConfigurationError, ValidationError
from .model import ModelConfig
from .nn.resnet import ResNetConfig
from .nn.train import TrainConfig
from .uq import UQConfig

DEFAULT_PATHS = {
    "weather_csv": None,
    "covariates_dir": "runs/covariates",
    "dataset_dir": "runs/dataset",
    "train_dir": "runs/train",
    "eval_dir": "runs/eval",
    "report_dir": "runs/report",
}


@dataclass
class RunConfig:
    seed: int = 42
    workers: int = 1
    paths: dict = field(default_factory=lambda: dict(DEFAULT_PATHS))
    covariates: dict = field(default_factory=lambda: {
        "synthetic": True, "T": 365, "start": None, "window": 7, "patches": None, "weather": {}})
    model: dict = field(default_factory=lambda: ModelConfig().to_dict())
    dataset: dict = field(default_factory=lambda: {
        "n": 256, "T": 365, "runs_per_sample": 1, "dropout": {"p_drop": 0.2, "mode": "event-drop"},
        "fractions": [0.8, 0.1, 0.1], "max_failure_rate": 0.01})
    network: dict = field(default_factory=lambda: {"F": 128, "k": 5, "B": 3, "p": 0.2})
    train: dict = field(default_factory=lambda: {
        k: v for k, v in TrainConfig().to_dict().items() if k != "seed"})
    uq: dict = field(default_factory=lambda: {"M": 50, "tau_inv": 0.0, "levels": [0.5, 0.68, 0.9, 0.95],
                                              "mc_dropout": True})

    # -- loading

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        base = cls().to_dict()
        merged = _merge(base, d or {})
        unknown = set(merged) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown config section(s): {sorted(unknown)}")
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ValidationError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def with_overrides(self, assignments: list[str]) -> "RunConfig":
        """Apply ``section.key=value`` overrides; values parse as JSON when possible."""
        d = self.to_dict()
        for item in assignments:
            if "=" not in item:
                raise ValidationError(f"override {item!r} must look like section.key=value")
            key, raw = item.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                if not isinstance(node.get(p), dict):
                    raise ValidationError(f"override {key!r}: {p!r} is not a config section")
                node = node[p]
            node[parts[-1]] = value
        return RunConfig.from_dict(d)

    # -- typed views

    def validate(self) -> None:
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ValidationError("workers must be a positive integer")
        self.model_config()
        self.dropout_spec()
        self.train_config()
        self.uq_config()
        self.weather()
        if self.dataset["T"] > self.covariates["T"]:
            raise ValidationError("dataset.T exceeds covariates.T")
        if int(self.dataset["n"]) < 1:
            raise ValidationError("dataset.n must be positive")

    def model_config(self) -> ModelConfig:
        return _build(ModelConfig.from_dict, self.model, "model")

    def dropout_spec(self) -> DropoutSpec:
        return _build(lambda d: DropoutSpec(**d), self.dataset["dropout"], "dataset.dropout")

    def train_config(self) -> TrainConfig:
        return _build(lambda d: TrainConfig(**d, seed=self.seed), self.train, "train")

    def resnet_config(self, d_in: int, d_out: int, T: int) -> ResNetConfig:
        return _build(lambda d: ResNetConfig(**d, d_in=d_in, d_out=d_out, T=T), self.network, "network")

    def uq_config(self) -> UQConfig:
        return _build(lambda d: UQConfig(**{**d, "levels": tuple(d.get("levels", ()))}), self.uq, "uq")

    def weather(self) -> SyntheticWeather:
        def make(d):
            d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
            return SyntheticWeather(**d)
        return _build(make, self.covariates.get("weather") or {}, "covariates.weather")

    def path(self, key: str) -> Path | None:
        v = self.paths.get(key)
        return None if v is None else Path(v)


def _build(factory, data, section: str):
    try:
        return factory(data)
    except TypeError as exc:
        raise ConfigurationError(f"config section {section}: {exc}") from None


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out
