"""Experiment configuration: a YAML document with datasets, training and evaluation settings."""
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .data import DatasetDescriptor, DatasetRegistry
from .synthetic import SyntheticRecipe
from .training import ConfigurationError, TrainConfig, config_hash


@dataclass
class EvalSettings:
    threshold: float = 0.5
    p: float = 0.05
    embed_samples: int = 50
    pca_dim: int = 200
    perplexity: float = 30.0


@dataclass
class DatasetEntry:
    name: str
    label_fractions: dict = field(default_factory=dict)
    path: str | None = None
    synthetic: dict | None = None

    def descriptor(self) -> DatasetDescriptor:
        if (self.path is None) == (self.synthetic is None):
            raise ConfigurationError(f"dataset {self.name!r} needs exactly one of 'path' or 'synthetic'")
        if self.synthetic is not None:
            recipe = SyntheticRecipe.from_dict({"name": self.name, **self.synthetic})
            return DatasetDescriptor(self.name, recipe, dict(self.label_fractions))
        path = Path(self.path)
        if not (path / "images").is_dir():
            raise ConfigurationError(f"dataset {self.name!r}: {path}/images does not exist")
        return DatasetDescriptor(self.name, path, dict(self.label_fractions))


@dataclass
class ExperimentConfig:
    datasets: list
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalSettings = field(default_factory=EvalSettings)
    output_dir: str = "runs/experiment"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        unknown = set(d) - {"datasets", "train", "evaluation", "output_dir"}
        if unknown:
            raise ConfigurationError(f"unknown top-level keys: {sorted(unknown)}")
        if not d.get("datasets"):
            raise ConfigurationError("config lists no datasets")
        try:
            datasets = [DatasetEntry(**e) for e in d["datasets"]]
            train = TrainConfig.from_dict(d.get("train") or {})
            evaluation = EvalSettings(**(d.get("evaluation") or {}))
        except TypeError as e:
            raise ConfigurationError(str(e)) from e
        return cls(datasets, train, evaluation, str(d.get("output_dir", "runs/experiment")))

    def to_dict(self) -> dict:
        return {
            "datasets": [{k: v for k, v in asdict(e).items() if v is not None} for e in self.datasets],
            "train": self.train.to_dict(),
            "evaluation": asdict(self.evaluation),
            "output_dir": self.output_dir,
        }

    def registry(self) -> DatasetRegistry:
        reg = DatasetRegistry()
        for entry in self.datasets:
            try:
                reg.register(entry.descriptor())
            except (ValueError, FileNotFoundError) as e:
                raise ConfigurationError(str(e)) from e
        return reg

    @property
    def digest(self) -> str:
        payload = self.to_dict()
        payload.pop("output_dir")
        return config_hash(payload)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"malformed config {path}: {e}") from e
    return ExperimentConfig.from_dict(raw)


def dump_config(config: ExperimentConfig, path):
    with open(path, "w") as f:
        f.write(f"# config_hash: {config.digest}\n")
        yaml.safe_dump(config.to_dict(), f, sort_keys=False)
