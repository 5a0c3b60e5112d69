"""Save and restore models through the tensor checkpoint format."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import torch
from torch import nn

from barcodemlm.models.cnn import BarcodeCNN, CNNConfig
from barcodemlm.models.encoder import (
    BarcodeEncoder,
    ClassifierHead,
    EncoderConfig,
    MaskedLM,
    SequenceClassifier,
)
from barcodemlm.nn.checkpoint import CheckpointError, load_tensors, read_metadata, save_tensors

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def _describe(model: nn.Module) -> tuple[str, dict]:
    if isinstance(model, MaskedLM):
        return "mlm", model.config.to_dict()
    if isinstance(model, BarcodeEncoder):
        return "encoder", model.config.to_dict()
    if isinstance(model, SequenceClassifier):
        head = model.head
        return "classifier", {
            **model.encoder.config.to_dict(),
            "n_classes": head.n_classes,
            "hidden": head.hidden.weight.shape[0],
            "head_dropout": 1.0 - head.keep,
        }
    if isinstance(model, BarcodeCNN):
        return "cnn", model.config.to_dict()
    if isinstance(model, ClassifierHead):
        return "head", {
            "d_in": model.d_in, "n_classes": model.n_classes,
            "hidden": model.hidden.weight.shape[0], "dropout": 1.0 - model.keep,
        }
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def save_model(path: str | Path, model: nn.Module, labels: Sequence[str] | None = None) -> None:
    arch, config = _describe(model)
    dtype = next(model.parameters()).dtype
    metadata = {
        "arch": arch,
        "dtype": "float64" if dtype == torch.float64 else "float32",
        "config": json.dumps(config, sort_keys=True),
    }
    if labels is not None:
        metadata["labels"] = json.dumps(list(labels))
    save_tensors(path, model.state_dict(), metadata)


def _build(arch: str, config: dict) -> nn.Module:
    if arch in ("mlm", "encoder"):
        cfg = EncoderConfig(**config)
        return MaskedLM(cfg) if arch == "mlm" else BarcodeEncoder(cfg)
    if arch == "classifier":
        extra = {key: config.pop(key) for key in ("n_classes", "hidden", "head_dropout")}
        return SequenceClassifier(
            BarcodeEncoder(EncoderConfig(**config)), extra["n_classes"], extra["hidden"], extra["head_dropout"]
        )
    if arch == "cnn":
        return BarcodeCNN(CNNConfig(**config))
    if arch == "head":
        return ClassifierHead(**config)
    raise CheckpointError(f"unknown architecture tag {arch!r}")


def load_model(path: str | Path) -> tuple[nn.Module, dict]:
    """Rebuild a saved model in eval mode; returns ``(model, metadata)``."""
    meta = read_metadata(path)
    if "arch" not in meta or "config" not in meta:
        raise CheckpointError(f"{path}: manifest lacks arch/config metadata")
    model = _build(meta["arch"], json.loads(meta["config"]))
    model.to(_DTYPES[meta.get("dtype", "float32")])
    tensors = load_tensors(path)
    state = model.state_dict()
    if set(tensors) != set(state):
        missing, extra = set(state) - set(tensors), set(tensors) - set(state)
        raise CheckpointError(f"{path}: parameter names differ (missing {sorted(missing)}, extra {sorted(extra)})")
    for name, value in tensors.items():
        if tuple(value.shape) != tuple(state[name].shape):
            raise CheckpointError(f"{path}: {name} has shape {value.shape}, expected {tuple(state[name].shape)}")
        state[name] = torch.from_numpy(value).to(state[name].dtype)
    model.load_state_dict(state)
    model.eval()
    if "labels" in meta:
        meta["labels"] = json.loads(meta["labels"])
    return model, meta
