"""Transformer encoder over k-mer tokens, its MLM head and the classification head."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from barcodemlm.models.layers import LayerNorm, Linear, make_generator, normal_
from barcodemlm.nn import functional as F


@dataclass
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_len: int = 128
    k: int = 4
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def vocab_size(self) -> int:
        """Predictable tokens: every k-mer plus MASK and UNK."""
        return 4 ** self.k + 2

    @classmethod
    def desk(cls, k: int = 4, **overrides) -> "EncoderConfig":
        return cls(**{**dict(layers=2, heads=4, d_model=64, d_ff=256, max_len=128, k=k), **overrides})

    @classmethod
    def paper(cls, k: int = 4, **overrides) -> "EncoderConfig":
        return cls(**{**dict(layers=12, heads=12, d_model=768, d_ff=3072, max_len=512, k=k), **overrides})

    @classmethod
    def preset(cls, name: str, k: int = 4, **overrides) -> "EncoderConfig":
        if name not in ("desk", "paper"):
            raise ValueError(f"unknown preset {name!r} (expected desk or paper)")
        return getattr(cls, name)(k, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)


class SelfAttention(nn.Module):
    def __init__(self, d: int, heads: int, generator: torch.Generator):
        super().__init__()
        self.heads = heads
        self.query = Linear(d, d, generator)
        self.key = Linear(d, d, generator)
        self.value = Linear(d, d, generator)
        self.out = Linear(d, d, generator)

    def forward(self, x: torch.Tensor, padding_mask: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        split = lambda t: t.view(b, n, self.heads, d // self.heads).transpose(1, 2)
        ctx = F.scaled_dot_product_attention(
            split(self.query(x)), split(self.key(x)), split(self.value(x)), padding_mask
        )
        return self.out(ctx.transpose(1, 2).reshape(b, n, d))


class EncoderBlock(nn.Module):
    """Pre-norm block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, config: EncoderConfig, generator: torch.Generator):
        super().__init__()
        self.keep = 1.0 - config.dropout
        self.norm1 = LayerNorm(config.d_model)
        self.attn = SelfAttention(config.d_model, config.heads, generator)
        self.norm2 = LayerNorm(config.d_model)
        self.ff_in = Linear(config.d_model, config.d_ff, generator)
        self.ff_out = Linear(config.d_ff, config.d_model, generator)

    def forward(self, x, padding_mask, generator=None):
        h = self.attn(self.norm1(x), padding_mask)
        x = x + F.dropout(h, self.keep, self.training, generator)
        h = self.ff_out(F.gelu(self.ff_in(self.norm2(x))))
        return x + F.dropout(h, self.keep, self.training, generator)


class BarcodeEncoder(nn.Module):
    def __init__(self, config: EncoderConfig, seed: int = 0):
        super().__init__()
        self.config = config
        g = make_generator(seed)
        # one extra row for the pad id, which is never a prediction target
        self.token_embedding = nn.Parameter(normal_(torch.empty(config.vocab_size + 1, config.d_model), 0.02, g))
        self.position_embedding = nn.Parameter(normal_(torch.empty(config.max_len, config.d_model), 0.02, g))
        self.blocks = nn.ModuleList(EncoderBlock(config, g) for _ in range(config.layers))
        self.final_norm = LayerNorm(config.d_model)

    @property
    def pad_id(self) -> int:
        return self.config.vocab_size

    def forward(
        self, ids: torch.Tensor, padding_mask: torch.Tensor, generator: torch.Generator | None = None
    ) -> torch.Tensor:
        """(batch, len) ids -> (batch, len, d) token outputs."""
        if ids.shape[1] > self.config.max_len:
            raise ValueError(f"sequence of {ids.shape[1]} tokens exceeds max_len={self.config.max_len}")
        if ids.shape != padding_mask.shape:
            raise F.ShapeError(f"ids {tuple(ids.shape)} and padding mask {tuple(padding_mask.shape)} differ")
        x = F.embedding(ids, self.token_embedding) + self.position_embedding[: ids.shape[1]]
        x = F.dropout(x, 1.0 - self.config.dropout, self.training, generator)
        for block in self.blocks:
            x = block(x, padding_mask, generator)
        return self.final_norm(x)


class MLMHead(nn.Module):
    def __init__(self, config: EncoderConfig, seed: int = 1):
        super().__init__()
        self.proj = Linear(config.d_model, config.vocab_size, make_generator(seed))

    def forward(self, token_outputs: torch.Tensor) -> torch.Tensor:
        return self.proj(token_outputs)


class ClassifierHead(nn.Module):
    """linear -> tanh -> dropout -> linear."""

    def __init__(self, d_in: int, n_classes: int, hidden: int | None = None, dropout: float = 0.2, seed: int = 2):
        super().__init__()
        g = make_generator(seed)
        self.d_in, self.n_classes = d_in, n_classes
        self.keep = 1.0 - dropout
        self.hidden = Linear(d_in, hidden or d_in, g)
        self.out = Linear(hidden or d_in, n_classes, g)

    def forward(self, pooled: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        if pooled.shape[-1] != self.d_in:
            raise F.ShapeError(f"classifier head expects {self.d_in} features, got {pooled.shape[-1]}")
        h = F.dropout(F.tanh(self.hidden(pooled)), self.keep, self.training, generator)
        return self.out(h)


def pool_embeddings(token_outputs: torch.Tensor, padding_mask: torch.Tensor) -> torch.Tensor:
    """Mean of the token vectors at real (unpadded) positions."""
    if token_outputs.shape[:2] != padding_mask.shape:
        raise F.ShapeError(
            f"pool_embeddings: outputs {tuple(token_outputs.shape)} vs mask {tuple(padding_mask.shape)}"
        )
    counts = padding_mask.sum(dim=1)
    if bool((counts == 0).any()):
        rows = torch.nonzero(counts == 0).flatten().tolist()
        raise ValueError(f"rows {rows} have no real tokens to pool")
    weights = padding_mask.to(token_outputs.dtype).unsqueeze(-1)
    return (token_outputs * weights).sum(dim=1) / counts.unsqueeze(-1).to(token_outputs.dtype)


def mlm_loss(
    token_outputs: torch.Tensor, target_ids: torch.Tensor, loss_mask: torch.Tensor, head: MLMHead
) -> tuple[torch.Tensor, float]:
    """Cross-entropy over masked positions and the masked-token accuracy."""
    if not bool(loss_mask.any()):
        raise ValueError("mlm_loss: loss mask selects no positions")
    logits = head(token_outputs)
    loss = F.masked_cross_entropy(logits, target_ids, loss_mask)
    with torch.no_grad():
        hits = (logits[loss_mask].argmax(dim=-1) == target_ids[loss_mask]).to(torch.float64).mean()
    return loss, float(hits)


class SequenceClassifier(nn.Module):
    """Encoder + global average pooling + classification head."""

    def __init__(self, encoder: BarcodeEncoder, n_classes: int, hidden: int | None = None,
                 dropout: float = 0.2, seed: int = 2):
        super().__init__()
        self.encoder = encoder
        self.head = ClassifierHead(encoder.config.d_model, n_classes, hidden, dropout, seed)

    def embed(self, ids, padding_mask, generator=None) -> torch.Tensor:
        return pool_embeddings(self.encoder(ids, padding_mask, generator), padding_mask)

    def forward(self, ids, padding_mask, generator=None) -> torch.Tensor:
        return self.head(self.embed(ids, padding_mask, generator), generator)


class MaskedLM(nn.Module):
    """Encoder plus its token-prediction head; the unit saved by pretraining."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        super().__init__()
        self.encoder = BarcodeEncoder(config, seed)
        self.head = MLMHead(config, seed + 1)

    @property
    def config(self) -> EncoderConfig:
        return self.encoder.config

    def forward(self, ids, padding_mask, generator=None) -> torch.Tensor:
        return self.head(self.encoder(ids, padding_mask, generator))
