"""AdamW and the two learning-rate schedules used for training."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    exp_avg: list[torch.Tensor] = field(default_factory=list)
    exp_avg_sq: list[torch.Tensor] = field(default_factory=list)


def adamw_step(
    params: Sequence[torch.Tensor],
    grads: Sequence[torch.Tensor | None],
    state: OptimizerState,
    names: Sequence[str] | None = None,
) -> OptimizerState:
    """One decoupled-weight-decay Adam update, applied to ``params`` in place."""
    if state.lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {state.lr}")
    if not state.exp_avg:
        state.exp_avg = [torch.zeros_like(p) for p in params]
        state.exp_avg_sq = [torch.zeros_like(p) for p in params]
    if len(state.exp_avg) != len(params) or len(grads) != len(params):
        raise ValueError("params, grads and optimizer state are misaligned")
    for i, g in enumerate(grads):
        if g is not None and not bool(torch.isfinite(g).all()):
            label = names[i] if names else f"#{i}"
            raise FloatingPointError(f"non-finite gradient for parameter {label}")

    state.step += 1
    bc1 = 1 - state.beta1 ** state.step
    bc2 = 1 - state.beta2 ** state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
            m.mul_(state.beta1).add_(g, alpha=1 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1 - state.beta2)
            p.mul_(1 - state.lr * state.weight_decay)
            denom = (v / bc2).sqrt_().add_(state.eps)
            p.addcdiv_(m, denom, value=-state.lr / bc1)
    return state


class AdamW(torch.optim.Optimizer):
    """torch optimizer front-end for :func:`adamw_step` (one state per group)."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay))
        self._states = [
            OptimizerState(lr, betas[0], betas[1], eps, weight_decay) for _ in self.param_groups
        ]

    @torch.no_grad()
    def step(self, closure=None):
        loss = closure() if closure is not None else None
        for group, state in zip(self.param_groups, self._states):
            state.lr = group["lr"]
            state.weight_decay = group["weight_decay"]
            adamw_step(group["params"], [p.grad for p in group["params"]], state)
        return loss


def linear_schedule(step: int, total_steps: int, lr0: float) -> float:
    """Linear decay from ``lr0`` to zero at ``total_steps``; clamps past the end."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if step < 0:
        raise ValueError("step must be >= 0")
    return lr0 * max(0.0, 1.0 - step / total_steps)


def step_schedule(epoch: int, base_lr: float, decay: float = 0.5, period: int = 3) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * decay ** (epoch // period)


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr
