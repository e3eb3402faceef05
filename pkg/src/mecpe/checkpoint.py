"""Model bundle files: named float64 parameter arrays plus a JSON config block
inside one npz container.  Write/read round-trips bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .models import (
    CauseModel,
    CauseModelConfig,
    EmotionModel,
    EmotionModelConfig,
    PairingModel,
    PairingModelConfig,
)

_STAGES = {
    "emotion": (EmotionModel, EmotionModelConfig),
    "cause": (CauseModel, CauseModelConfig),
    "pairing": (PairingModel, PairingModelConfig),
}


class CheckpointError(Exception):
    pass


def save_model(path, stage: str, model, extra: dict | None = None) -> None:
    if stage not in _STAGES:
        raise CheckpointError(f"unknown stage {stage!r}")
    meta = {
        "stage": stage,
        "config": dataclasses.asdict(model.config),
        "fusion_order": "text|audio|video",  # fixed; recorded for portability
        "extra": extra or {},
    }
    arrays = {f"param:{k}": np.asarray(v, dtype=np.float64) for k, v in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=json.dumps(meta, sort_keys=True), **arrays)


def load_model(path):
    """Returns (stage, model, extra)."""
    with np.load(path, allow_pickle=False) as data:
        if "__meta__" not in data.files:
            raise CheckpointError(f"{path}: not a model bundle (missing meta block)")
        meta = json.loads(str(data["__meta__"][()]))
        params = {
            k[len("param:"):]: data[k].copy()
            for k in data.files
            if k.startswith("param:")
        }
    stage = meta["stage"]
    if stage not in _STAGES:
        raise CheckpointError(f"{path}: unknown stage {stage!r}")
    model_cls, config_cls = _STAGES[stage]
    config = meta["config"]
    if "betas" in config:
        config["betas"] = tuple(config["betas"])
    model = model_cls(config_cls(**config), params=params)
    return stage, model, meta.get("extra", {})


def load_stage_model(path, expected_stage: str):
    stage, model, extra = load_model(path)
    if stage != expected_stage:
        raise CheckpointError(
            f"{path}: bundle holds a {stage!r} model, expected {expected_stage!r}"
        )
    return model, extra
