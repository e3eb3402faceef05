"""Experiment configuration: one JSON document with full defaulting.

Defaults mirror the reference training setup: embedding dropout 0.3, emotion
BiLSTM 4 layers, cause BiLSTM 3 layers, inter-layer dropout 0.3, epochs
60/40/40, negative ratio 1:5, 90-10 train/val split, AdamW with warmup-linear
schedule.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


class ConfigError(Exception):
    pass


@dataclass
class EmbeddingSettings:
    kind: str = "synthetic"            # "synthetic" or "files"
    seed: int = 0
    dims: tuple[int, int, int] = (16, 8, 8)
    planted: bool = False
    noise_scale: float = 0.1
    text_path: str | None = None
    audio_path: str | None = None
    video_path: str | None = None


@dataclass
class ExperimentConfig:
    # paths
    dataset_path: str | None = None
    output_dir: str = "runs/default"
    embeddings: EmbeddingSettings = field(default_factory=EmbeddingSettings)

    # model selection and architecture
    emotion_variant: str = "dense"
    cause_variant: str = "dense"
    emotion_layers: int = 4
    cause_layers: int = 3
    hidden_size: int = 256
    embedding_dropout: float = 0.3
    inter_layer_dropout: float = 0.3
    crf_decode: str = "viterbi"

    # pairing
    negative_ratio: int = 5
    max_distance: int = 12
    distance_dim: int = 32
    threshold: float = 0.5

    # optimization
    epochs_emotion: int = 60
    epochs_cause: int = 40
    epochs_pairing: int = 40
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_fraction: float = 0.1
    batch_size: int = 64              # utterance/pair rows per step for dense/pairing models
    conversations_per_batch: int = 1  # whole conversations per step for sequence models

    # data
    val_fraction: float = 0.1
    class_weight_floor: int | None = None
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        emb = data.pop("embeddings", {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        emb_known = {f.name for f in dataclasses.fields(EmbeddingSettings)}
        emb_unknown = set(emb) - emb_known
        if emb_unknown:
            raise ConfigError(f"unknown embeddings field(s): {sorted(emb_unknown)}")
        if "dims" in emb:
            emb["dims"] = tuple(emb["dims"])
        return cls(embeddings=EmbeddingSettings(**emb), **data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(data)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def apply_overrides(self, overrides: dict) -> "ExperimentConfig":
        """New config with flat key=value overrides (embeddings.* reaches the
        nested block)."""
        data = self.to_dict()
        for key, value in overrides.items():
            target = data
            parts = key.split(".")
            for part in parts[:-1]:
                if part not in target or not isinstance(target[part], dict):
                    raise ConfigError(f"unknown config field {key!r}")
                target = target[part]
            leaf = parts[-1]
            if leaf not in target:
                raise ConfigError(f"unknown config field {key!r}")
            current = target[leaf]
            target[leaf] = _coerce(value, current)
        return ExperimentConfig.from_dict(data)


def _coerce(value, current):
    """Parse a string override to the type of the current value."""
    if not isinstance(value, str):
        return value
    if isinstance(current, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean from {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, (list, tuple)):
        return json.loads(value)
    if current is None:
        # untyped null fields accept JSON literals, else the raw string
        try:
            return json.loads(value)
        except json.JSONDecodeError:
            return value
    return value
