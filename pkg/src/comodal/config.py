"""Run configuration: one JSON document with sections
{world, datasets, encoder, align, train, eval}. Unknown keys are rejected,
every field has a default, and the fingerprint is a stable hash of the
fully-populated canonical document."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

from .align import AlignConfig
from .errors import ConfigError
from .trainer import TrainConfig
from .world import WorldConfig


@dataclass(frozen=True)
class DatasetSizes:
    n1: int = 2000
    n2: int = 2000
    n3: int = 2000
    n1_test: int = 1000
    n2_test: int = 1000
    n3_test: int = 200

    def __post_init__(self) -> None:
        if min(self.n1, self.n2, self.n3, self.n1_test, self.n2_test, self.n3_test) < 0:
            raise ConfigError("dataset sizes must be non-negative")


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 32
    hidden_dim: int = 64
    output_dim: int = 32
    position_tags: bool = False

    def dims(self) -> tuple[int, int, int]:
        return (self.embed_dim, self.hidden_dim, self.output_dim)

    def __post_init__(self) -> None:
        if min(self.embed_dim, self.hidden_dim, self.output_dim) < 1:
            raise ConfigError("encoder dims must be positive")


UNFREEZE_CHOICES = ("target_encoder", "classifier", "source_encoder")


@dataclass(frozen=True)
class ColearnConfig:
    source_modality: int = 1
    target_modality: int = 2
    shots: tuple[int, ...] = (1, 5, 10)
    num_seeds: int = 10
    finetune_iterations: int = 50
    finetune_learning_rate: float = 0.01
    unfreeze: tuple[str, ...] = ("target_encoder", "classifier")

    def __post_init__(self) -> None:
        if {self.source_modality, self.target_modality} != {1, 2}:
            raise ConfigError("source/target modalities must be 1 and 2 in some order")
        if not self.shots or any(k < 1 for k in self.shots):
            raise ConfigError("shot counts must be >= 1")
        if self.num_seeds < 1:
            raise ConfigError("need at least one seed")
        if self.finetune_iterations < 0:
            raise ConfigError("finetune_iterations must be >= 0")
        if self.finetune_learning_rate < 0:
            raise ConfigError("finetune_learning_rate must be >= 0")
        bad = set(self.unfreeze) - set(UNFREEZE_CHOICES)
        if bad:
            raise ConfigError(f"unknown unfreeze targets {sorted(bad)}")


@dataclass(frozen=True)
class EvalConfig:
    recall_ks: tuple[int, ...] = (1, 5, 10)
    fusion_seeds: int = 5
    colearn: ColearnConfig = field(default_factory=ColearnConfig)

    def __post_init__(self) -> None:
        if not self.recall_ks or any(k < 1 for k in self.recall_ks):
            raise ConfigError("recall ks must be >= 1")
        if self.fusion_seeds < 1:
            raise ConfigError("fusion_seeds must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    datasets: DatasetSizes = field(default_factory=DatasetSizes)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self) -> None:
        # the align section is the single source for the trainer's objective
        if self.train.align != self.align:
            object.__setattr__(
                self, "train", dataclasses.replace(self.train, align=self.align)
            )

    def to_canonical_dict(self) -> dict:
        return _to_plain(
            {
                "world": self.world,
                "datasets": self.datasets,
                "encoder": self.encoder,
                "align": self.align,
                "train": self.train,
                "eval": self.eval,
            }
        )

    def fingerprint(self) -> str:
        doc = json.dumps(self.to_canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(doc.encode("utf-8")).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, train=dataclasses.replace(self.train, seed=seed))


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {
            f.name: _to_plain(getattr(obj, f.name))
            for f in dataclasses.fields(obj)
            if f.name != "align" or not isinstance(obj, TrainConfig)  # nested copy, not canonical
        }
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, doc: dict, section: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section {section!r}")
    kwargs = {}
    for name, value in doc.items():
        f = fields[name]
        if f.type.startswith("tuple") and isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad section {section!r}: {exc}") from exc


_SECTIONS = {
    "world": WorldConfig,
    "datasets": DatasetSizes,
    "encoder": EncoderConfig,
    "align": AlignConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


def run_config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level section(s) {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name not in doc:
            continue
        section = dict(doc[name])
        if name == "train" and "align" in section:
            raise ConfigError("configure the alignment objective in the top-level 'align' section")
        if name == "eval" and "colearn" in section:
            section["colearn"] = _build(ColearnConfig, section["colearn"], "eval.colearn")
        kwargs[name] = _build(cls, section, name)
    return RunConfig(**kwargs)


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return run_config_from_dict(doc)


def fusion_run_config(seed: int = 0) -> RunConfig:
    """Preset for the fusion experiment: mild complementary slot noise (each
    modality sees one slot more clearly), scarce labels, and a large paired
    set over a wide vocabulary, so the coordinated space carries most of
    the generalization."""
    return RunConfig(
        world=WorldConfig(
            num_concepts=10,
            vocab_size1=160,
            vocab_size2=160,
            num_classes=10,
            slot_noise1=(0.05, 0.2),
            slot_noise2=(0.2, 0.05),
        ),
        datasets=DatasetSizes(n1=100, n2=100, n3=5000, n1_test=1500, n2_test=1500, n3_test=200),
        train=TrainConfig(iterations=3500, seed=seed),
    )


def colearn_run_config(seed: int = 0) -> RunConfig:
    """Preset for the co-learning experiment: a moderate world with light
    noise and a medium paired set; phase budgets come from train/eval."""
    return RunConfig(
        world=WorldConfig(
            num_concepts=8,
            vocab_size1=64,
            vocab_size2=64,
            num_classes=16,
            noise_rate=0.05,
        ),
        datasets=DatasetSizes(n1=1500, n2=1500, n3=2000, n1_test=800, n2_test=800, n3_test=200),
        train=TrainConfig(iterations=1200, seed=seed),
    )
