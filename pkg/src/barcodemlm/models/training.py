"""MLM pretraining and supervised training loops."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np
import torch
from torch import nn

from barcodemlm.models.cnn import BarcodeCNN
from barcodemlm.models.encoder import ClassifierHead, EncoderConfig, MaskedLM, SequenceClassifier, mlm_loss
from barcodemlm.models.io import save_model
from barcodemlm.nn import functional as F
from barcodemlm.nn.optim import AdamW, linear_schedule, set_lr, step_schedule
from barcodemlm.tokenizer import TokenizedBatch, Vocabulary, apply_mlm_mask, pad_token_lists

logger = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class PretrainSpec:
    epochs: int = 40
    batch_size: int = 16
    lr0: float = 1e-4
    mask_ratio: float = 0.5
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")


@dataclass
class TrainRecord:
    epoch: int
    step: int
    loss: float
    accuracy: float
    lr: float
    val_accuracy: float | None = None


@dataclass
class TrainingHistory:
    records: list[TrainRecord] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)
    epoch_accuracy: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def write_csv(self, sink: TextIO) -> None:
        with_val = any(r.val_accuracy is not None for r in self.records)
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(["epoch", "step", "loss", "accuracy", "lr"] + (["val_accuracy"] if with_val else []))
        for r in self.records:
            row = [r.epoch, r.step, f"{r.loss:.9g}", f"{r.accuracy:.9g}", f"{r.lr:.9g}"]
            if with_val:
                row.append("" if r.val_accuracy is None else f"{r.val_accuracy:.9g}")
            writer.writerow(row)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def run_mlm_pretraining(
    corpus: Sequence[Sequence[int]],
    vocab: Vocabulary,
    config: EncoderConfig,
    spec: PretrainSpec,
    checkpoint_dir: str | Path | None = None,
    checkpoint_every_epoch: bool = False,
) -> tuple[MaskedLM, TrainingHistory]:
    """Masked-token pretraining with AdamW and a linear decay to zero.

    ``corpus`` holds token-id lists (already truncated to ``config.max_len``).
    One record per optimizer step lands in the history; the epoch means are
    kept separately.
    """
    if not corpus:
        raise ValueError("pretraining corpus is empty")
    if vocab.k != config.k:
        raise ValueError(f"vocabulary k={vocab.k} does not match encoder k={config.k}")
    model = MaskedLM(config, seed=derive_seed(spec.seed, 0)).to(DTYPES[spec.dtype])
    model.train()
    optimizer = AdamW(
        model.parameters(), lr=spec.lr0, betas=(spec.beta1, spec.beta2),
        eps=spec.eps, weight_decay=spec.weight_decay,
    )
    steps_per_epoch = math.ceil(len(corpus) / spec.batch_size)
    total = spec.epochs * steps_per_epoch
    dropout_gen = torch.Generator().manual_seed(derive_seed(spec.seed, 1))
    history = TrainingHistory()
    step = 0
    for epoch in range(spec.epochs):
        rng = np.random.default_rng([spec.seed, 2, epoch])
        losses, accs = [], []
        for rows in _batches(len(corpus), spec.batch_size, rng):
            batch = pad_token_lists([corpus[i] for i in rows], vocab.pad_id, config.max_len)
            masked = apply_mlm_mask(batch, vocab.mask_id, spec.mask_ratio, seed=derive_seed(spec.seed, 3, step))
            lr = linear_schedule(step, total, spec.lr0)
            set_lr(optimizer, lr)
            outputs = model.encoder(
                torch.from_numpy(masked.ids), torch.from_numpy(masked.padding_mask), dropout_gen
            )
            loss, acc = mlm_loss(
                outputs, torch.from_numpy(masked.target_ids), torch.from_numpy(masked.loss_mask), model.head
            )
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            history.records.append(TrainRecord(epoch + 1, step + 1, value, acc, lr))
            losses.append(value)
            accs.append(acc)
            step += 1
        history.epoch_loss.append(float(np.mean(losses)))
        history.epoch_accuracy.append(float(np.mean(accs)))
        logger.info("epoch %d loss %.4f masked acc %.3f", epoch + 1, history.epoch_loss[-1], history.epoch_accuracy[-1])
        if checkpoint_dir is not None and checkpoint_every_epoch:
            save_model(Path(checkpoint_dir) / f"mlm_epoch{epoch + 1:03d}.ckpt", model)
    model.eval()
    if checkpoint_dir is not None:
        save_model(Path(checkpoint_dir) / "mlm.ckpt", model)
    return model, history


@torch.no_grad()
def masked_token_accuracy(
    model: MaskedLM, corpus: Sequence[Sequence[int]], vocab: Vocabulary, ratio: float = 0.5,
    seed: int = 0, batch_size: int = 64,
) -> float:
    """Eval-mode masked-token accuracy over the whole corpus under a fresh mask."""
    model.eval()
    hits = total = 0
    for start in range(0, len(corpus), batch_size):
        batch = pad_token_lists(corpus[start : start + batch_size], vocab.pad_id, model.config.max_len)
        masked = apply_mlm_mask(batch, vocab.mask_id, ratio, seed=derive_seed(seed, start))
        logits = model(torch.from_numpy(masked.ids), torch.from_numpy(masked.padding_mask))
        sel = torch.from_numpy(masked.loss_mask)
        hits += int((logits[sel].argmax(-1) == torch.from_numpy(masked.target_ids)[sel]).sum())
        total += int(sel.sum())
    return hits / total


# ---------------------------------------------------------------------------
# supervised training


@dataclass
class SupervisedSpec:
    epochs: int = 12
    batch_size: int = 32
    lr: float = 5e-3
    optimizer: str = "sgd"
    momentum: float = 0.0
    schedule: str = "step"
    step_decay: float = 0.5
    step_period: int = 3
    weight_decay: float = 0.0
    freeze_encoder: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"optimizer must be sgd or adamw, got {self.optimizer!r}")
        if self.schedule not in ("step", "linear", "constant"):
            raise ValueError(f"schedule must be step, linear or constant, got {self.schedule!r}")

    @classmethod
    def for_kind(cls, kind: str, **overrides) -> "SupervisedSpec":
        """Default recipe: SGD + step decay for the transformer, AdamW + linear for the CNN."""
        if kind == "cnn":
            base = dict(optimizer="adamw", schedule="linear", lr=1e-3, weight_decay=0.01)
        elif kind in ("transformer", "head"):
            base = {}
        else:
            raise ValueError(f"unknown model kind {kind!r}")
        return cls(**{**base, **overrides})

    def to_dict(self) -> dict:
        return asdict(self)


Inputs = TokenizedBatch | np.ndarray


def _n_rows(inputs: Inputs) -> int:
    return len(inputs) if isinstance(inputs, TokenizedBatch) else inputs.shape[0]


def model_logits(model: nn.Module, inputs: Inputs, rows: Sequence[int] | None = None,
                 generator: torch.Generator | None = None) -> torch.Tensor:
    """Dispatch a batch of rows to the model according to its input type."""
    dtype = next(model.parameters()).dtype
    if rows is None:
        rows = range(_n_rows(inputs))
    rows = list(rows)
    if isinstance(model, SequenceClassifier):
        if not isinstance(inputs, TokenizedBatch):
            raise TypeError("transformer classifier needs a TokenizedBatch")
        sub = inputs.subset(rows)
        return model(torch.from_numpy(sub.ids), torch.from_numpy(sub.padding_mask), generator)
    x = torch.as_tensor(np.asarray(inputs)[rows], dtype=dtype)
    if isinstance(model, (BarcodeCNN, ClassifierHead)):
        return model(x, generator)
    raise TypeError(f"unsupported model {type(model).__name__}")


@torch.no_grad()
def predict(model: nn.Module, inputs: Inputs, batch_size: int = 64) -> np.ndarray:
    was_training = model.training
    model.eval()
    preds = [
        model_logits(model, inputs, range(i, min(i + batch_size, _n_rows(inputs)))).argmax(-1).numpy()
        for i in range(0, _n_rows(inputs), batch_size)
    ]
    model.train(was_training)
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def accuracy(model: nn.Module, inputs: Inputs, labels: np.ndarray) -> float:
    return float(np.mean(predict(model, inputs) == labels)) if len(labels) else float("nan")


def run_supervised_training(
    model: nn.Module,
    train_inputs: Inputs,
    train_labels: Sequence[int],
    spec: SupervisedSpec,
    val_inputs: Inputs | None = None,
    val_labels: Sequence[int] | None = None,
) -> tuple[nn.Module, TrainingHistory]:
    """Cross-entropy training; keeps the weights of the best validation epoch.

    Without a validation set the final weights are kept. Labels must be
    contiguous ids ``0..n_classes-1``.
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    n_classes = model.n_classes if isinstance(model, ClassifierHead) else (
        model.head.n_classes if isinstance(model, SequenceClassifier) else model.config.n_classes
    )
    if train_labels.size and (train_labels.min() < 0 or train_labels.max() >= n_classes):
        raise ValueError(f"training labels must lie in [0, {n_classes})")
    has_val = val_inputs is not None and val_labels is not None and len(val_labels) > 0
    if has_val:
        val_labels = np.asarray(val_labels, dtype=np.int64)
        if val_labels.min() < 0 or val_labels.max() >= n_classes:
            raise ValueError(f"validation label outside the {n_classes} training classes")

    params = [
        p for name, p in model.named_parameters()
        if not (spec.freeze_encoder and name.startswith("encoder."))
    ]
    if spec.freeze_encoder and isinstance(model, SequenceClassifier):
        model.encoder.requires_grad_(False)
    if spec.optimizer == "sgd":
        optimizer = torch.optim.SGD(params, lr=spec.lr, momentum=spec.momentum, weight_decay=spec.weight_decay)
    else:
        optimizer = AdamW(params, lr=spec.lr, weight_decay=spec.weight_decay)

    n = _n_rows(train_inputs)
    steps_per_epoch = math.ceil(n / spec.batch_size)
    total = spec.epochs * steps_per_epoch
    generator = torch.Generator().manual_seed(derive_seed(spec.seed, 11))
    needs_pairs = isinstance(model, BarcodeCNN)
    history = TrainingHistory()
    best_acc, best_state = -1.0, None
    step = 0
    for epoch in range(spec.epochs):
        model.train()
        if spec.freeze_encoder and isinstance(model, SequenceClassifier):
            model.encoder.eval()
        rng = np.random.default_rng([spec.seed, 12, epoch])
        losses, hits = [], 0
        for rows in _batches(n, spec.batch_size, rng):
            if needs_pairs and len(rows) < 2:
                continue  # batch statistics need at least two samples
            if spec.schedule == "step":
                lr = step_schedule(epoch, spec.lr, spec.step_decay, spec.step_period)
            elif spec.schedule == "linear":
                lr = linear_schedule(step, total, spec.lr)
            else:
                lr = spec.lr
            set_lr(optimizer, lr)
            logits = model_logits(model, train_inputs, rows, generator)
            target = torch.from_numpy(train_labels[rows])
            loss = F.masked_cross_entropy(logits, target)
            if not math.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite loss at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
            hits += int((logits.argmax(-1) == target).sum())
            step += 1
        train_acc = hits / n
        val_acc = accuracy(model, val_inputs, val_labels) if has_val else None
        history.records.append(TrainRecord(epoch + 1, step, float(np.mean(losses)), train_acc, lr, val_acc))
        history.epoch_loss.append(float(np.mean(losses)))
        history.epoch_accuracy.append(train_acc)
        if has_val and val_acc > best_acc:
            best_acc, best_state = val_acc, copy.deepcopy(model.state_dict())
            history.best_epoch = epoch + 1
    if best_state is not None:
        model.load_state_dict(best_state)
    elif not has_val:
        history.best_epoch = spec.epochs
    model.eval()
    return model, history
