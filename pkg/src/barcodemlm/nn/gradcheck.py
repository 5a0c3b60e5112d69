from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import torch


def finite_difference_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    probe_count: int = 20,
    epsilon: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Max relative error between autograd and central differences.

    Probes ``probe_count`` coordinates drawn uniformly over all entries of
    ``params``. The relative error of one probe is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``; ``floor``
    keeps exactly-zero gradients from dividing by rounding noise.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise FloatingPointError(f"loss is not finite: {loss.item()}")
    analytic = torch.autograd.grad(loss, params, allow_unused=True)
    analytic = [torch.zeros_like(p) if g is None else g.detach() for p, g in zip(params, analytic)]

    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    worst = 0.0
    for flat in rng.integers(0, offsets[-1], size=probe_count):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        local = int(flat - offsets[which])
        view = params[which].data.view(-1)
        original = view[local].item()
        with torch.no_grad():
            view[local] = original + epsilon
            up = float(loss_fn())
            view[local] = original - epsilon
            down = float(loss_fn())
            view[local] = original
        if not (math.isfinite(up) and math.isfinite(down)):
            raise FloatingPointError("loss became non-finite while probing")
        numeric = (up - down) / (2 * epsilon)
        a = analytic[which].reshape(-1)[local].item()
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
    return worst
