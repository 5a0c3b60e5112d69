"""Differentiable building blocks.

Each op is written from torch tensor primitives and relies on torch autograd
for the reverse pass. Shape problems raise :class:`ShapeError` before any
arithmetic happens so the message names the op and the offending shapes.
"""

from __future__ import annotations

import math

import torch


class ShapeError(ValueError):
    pass


def _fail(op: str, *tensors: torch.Tensor) -> ShapeError:
    shapes = ", ".join(str(tuple(t.shape)) for t in tensors)
    return ShapeError(f"{op}: incompatible shapes {shapes}")


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise _fail("matmul", a, b)
    return a @ b


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise _fail("add", a, b) from None
    return a + b


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """``x @ weight.T + bias`` with weight stored as (out, in)."""
    if x.shape[-1] != weight.shape[1] or (bias is not None and bias.shape != weight.shape[:1]):
        raise _fail("linear", x, weight, *(() if bias is None else (bias,)))
    out = x @ weight.transpose(0, 1)
    return out + bias if bias is not None else out


def embedding(ids: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    if ids.numel() and (int(ids.max()) >= weight.shape[0] or int(ids.min()) < 0):
        raise ShapeError(f"embedding: id out of range for table {tuple(weight.shape)}")
    return weight[ids]


def layer_norm(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    if weight.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise _fail("layer_norm", x, weight, bias)
    mean = x.mean(dim=-1, keepdim=True)
    centred = x - mean
    var = (centred * centred).mean(dim=-1, keepdim=True)
    return centred / torch.sqrt(var + eps) * weight + bias


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    shifted = x - x.amax(dim=dim, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=dim, keepdim=True)


def log_softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    shifted = x - x.amax(dim=dim, keepdim=True).detach()
    return shifted - torch.log(torch.exp(shifted).sum(dim=dim, keepdim=True))


def scaled_dot_product_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    key_padding_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """softmax(q k^T / sqrt(d)) v over (..., len, d) tensors.

    ``key_padding_mask`` is (batch, len_k) with True marking real keys; padded
    keys receive exactly zero weight.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise _fail("scaled_dot_product_attention", q, k, v)
    scores = (q @ k.transpose(-2, -1)) / math.sqrt(q.shape[-1])
    if key_padding_mask is not None:
        if key_padding_mask.shape != (q.shape[0], k.shape[-2]):
            raise _fail("scaled_dot_product_attention", q, k, key_padding_mask)
        expand = key_padding_mask.view(q.shape[0], *([1] * (q.dim() - 2)), k.shape[-2])
        scores = scores.masked_fill(~expand, float("-inf"))
    return softmax(scores, dim=-1) @ v


def gelu(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


def tanh(x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(x)


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.clamp(x, min=0)


def dropout(
    x: torch.Tensor, keep_prob: float, training: bool, generator: torch.Generator | None = None
) -> torch.Tensor:
    """Inverted dropout; identity when not training or ``keep_prob == 1``."""
    if not 0 < keep_prob <= 1:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) < keep_prob
    return x * keep / keep_prob


def conv1d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Valid cross-correlation: x (batch, c_in, len), weight (c_out, c_in, width)."""
    if x.dim() != 3 or weight.dim() != 3 or x.shape[1] != weight.shape[1] or x.shape[2] < weight.shape[2]:
        raise _fail("conv1d", x, weight)
    width = weight.shape[2]
    windows = x.unfold(2, width, 1)  # (batch, c_in, out_len, width)
    out = torch.einsum("bilw,oiw->bol", windows, weight)
    if bias is not None:
        out = out + bias.view(1, -1, 1)
    return out


def batch_norm(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor,
    running_mean: torch.Tensor,
    running_var: torch.Tensor,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> torch.Tensor:
    """Per-channel normalization over every axis except 1.

    Training mode normalizes with biased batch statistics and updates the
    running buffers in place (unbiased variance); evaluation mode uses the
    buffers only.
    """
    if x.dim() < 2 or weight.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise _fail("batch_norm", x, weight, bias)
    axes = [0] + list(range(2, x.dim()))
    shape = [1, x.shape[1]] + [1] * (x.dim() - 2)
    if training:
        count = x.numel() // x.shape[1]
        if count < 2:
            raise ShapeError("batch_norm: training needs more than one value per channel")
        mean = x.mean(dim=axes)
        var = ((x - mean.view(shape)) ** 2).mean(dim=axes)
        with torch.no_grad():
            running_mean.mul_(1 - momentum).add_(momentum * mean.detach())
            running_var.mul_(1 - momentum).add_(momentum * var.detach() * count / (count - 1))
    else:
        mean, var = running_mean, running_var
    return (x - mean.view(shape)) / torch.sqrt(var.view(shape) + eps) * weight.view(shape) + bias.view(shape)


def max_pool1d(x: torch.Tensor, width: int) -> torch.Tensor:
    """Non-overlapping max pooling over the last axis; a short tail is dropped."""
    if x.dim() != 3 or x.shape[2] < width:
        raise ShapeError(f"max_pool1d: input {tuple(x.shape)} shorter than pool width {width}")
    n = x.shape[2] // width
    return x[..., : n * width].reshape(x.shape[0], x.shape[1], n, width).amax(dim=-1)


def flatten(x: torch.Tensor) -> torch.Tensor:
    return x.reshape(x.shape[0], -1)


def masked_cross_entropy(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean negative log-likelihood over positions where ``mask`` is True.

    ``logits`` is (..., classes), ``targets`` and ``mask`` share the leading
    shape. Positions outside the mask contribute nothing, including gradient.
    """
    if logits.shape[:-1] != targets.shape or (mask is not None and mask.shape != targets.shape):
        raise _fail("masked_cross_entropy", logits, targets, *(() if mask is None else (mask,)))
    if mask is None:
        mask = torch.ones_like(targets, dtype=torch.bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("masked_cross_entropy: loss mask selects no positions")
    picked_logits = logits[mask]
    picked_targets = targets[mask]
    logp = log_softmax(picked_logits, dim=-1)
    return -logp.gather(-1, picked_targets.unsqueeze(-1)).sum() / count
