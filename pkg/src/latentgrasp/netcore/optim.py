"""Learning-rate schedule and parameter averaging."""

import math
from typing import Dict

import torch

from ..errors import BadConfig


def cosine_warmup_lr(step: int, warmup_steps: int, total_steps: int,
                     peak_lr: float) -> float:
    """Linear warmup from zero to peak, then cosine decay to ~zero."""
    if total_steps <= warmup_steps:
        raise BadConfig("total_steps must exceed warmup_steps")
    if step < warmup_steps:
        return peak_lr * step / max(1, warmup_steps)
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


class EmaTracker:
    """Exponential moving average of named parameters.

    decay(step) = min(max_decay, ((1 + step) / (10 + step)) ** power), so the
    shadow warms up quickly and then tracks slowly.
    """

    def __init__(self, named_params: Dict[str, torch.Tensor], power: float = 0.75,
                 max_decay: float = 0.9999):
        if power <= 0.0:
            raise BadConfig("ema power must be positive; power=0 never updates")
        self.power = power
        self.max_decay = max_decay
        self.shadow = {name: p.detach().clone() for name, p in named_params.items()}

    def decay_at(self, step: int) -> float:
        return min(self.max_decay, ((1.0 + step) / (10.0 + step)) ** self.power)

    def update(self, named_params: Dict[str, torch.Tensor], step: int) -> None:
        d = self.decay_at(step)
        with torch.no_grad():
            for name, p in named_params.items():
                self.shadow[name].mul_(d).add_(p.detach(), alpha=1.0 - d)

    def copy_to(self, named_params: Dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for name, p in named_params.items():
                p.copy_(self.shadow[name])
