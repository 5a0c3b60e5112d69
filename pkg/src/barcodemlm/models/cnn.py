"""Convolutional baseline over one-hot encoded barcodes."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from barcodemlm.models.layers import BatchNorm, Conv1d, Linear, make_generator
from barcodemlm.nn import functional as F


@dataclass
class ConvStage:
    filters: int
    width: int
    pool: int


def _default_stages() -> list[ConvStage]:
    return [ConvStage(64, 5, 2), ConvStage(32, 5, 2), ConvStage(16, 5, 2)]


@dataclass
class CNNConfig:
    n_classes: int
    input_len: int = 660
    hidden: int = 500
    stages: list[ConvStage] = field(default_factory=_default_stages)
    channels: int = 5

    def __post_init__(self):
        self.stages = [s if isinstance(s, ConvStage) else ConvStage(**s) for s in self.stages]
        if len(self.stages) != 3:
            raise ValueError(f"the CNN has exactly three conv stages, got {len(self.stages)}")
        if self.output_len() < 1:
            raise ValueError(
                f"input_len={self.input_len} is too short for the pooling cascade; "
                f"minimum is {self.min_input_len()}"
            )

    def output_len(self, length: int | None = None) -> int:
        length = self.input_len if length is None else length
        for s in self.stages:
            length = (length - s.width + 1) // s.pool
            if length < 1:
                return 0
        return length

    def min_input_len(self) -> int:
        length = 1
        for s in reversed(self.stages):
            length = length * s.pool + s.width - 1
        return length

    def to_dict(self) -> dict:
        return asdict(self)


class BarcodeCNN(nn.Module):
    """Three (conv -> batchnorm -> relu -> maxpool) stages, then
    flatten -> batchnorm -> linear(hidden) -> relu -> linear(n_classes)."""

    def __init__(self, config: CNNConfig, seed: int = 0):
        super().__init__()
        self.config = config
        g = make_generator(seed)
        c_in = config.channels
        self.convs = nn.ModuleList()
        self.norms = nn.ModuleList()
        for stage in config.stages:
            self.convs.append(Conv1d(c_in, stage.filters, stage.width, g))
            self.norms.append(BatchNorm(stage.filters))
            c_in = stage.filters
        flat = c_in * config.output_len()
        self.flat_norm = BatchNorm(flat)
        self.hidden = Linear(flat, config.hidden, g)
        self.out = Linear(config.hidden, config.n_classes, g)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """(batch, len, channels) one-hot -> (batch, hidden) features."""
        if x.dim() != 3 or x.shape[1] != self.config.input_len or x.shape[2] != self.config.channels:
            raise F.ShapeError(
                f"CNN expects (batch, {self.config.input_len}, {self.config.channels}), got {tuple(x.shape)}"
            )
        h = x.transpose(1, 2)
        for conv, norm, stage in zip(self.convs, self.norms, self.config.stages):
            h = F.max_pool1d(F.relu(norm(conv(h))), stage.pool)
        return F.relu(self.hidden(self.flat_norm(F.flatten(h))))

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        return self.out(self.embed(x))
