"""Shared training utilities: LR schedule and divergence handling."""

from __future__ import annotations

import math


class TrainingDiverged(RuntimeError):
    """Raised when a training loss becomes non-finite.

    Carries the per-epoch loss trace accumulated up to the failure.
    """

    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


def make_warmup_cosine(total_steps: int, warmup_ratio: float):
    """LR multiplier: linear warmup over ``warmup_ratio`` of the run, then
    a half-cosine decay to zero."""
    warmup_steps = int(warmup_ratio * total_steps)

    def lr_lambda(step: int) -> float:
        if step < warmup_steps:
            return (step + 1) / warmup_steps
        span = max(1, total_steps - warmup_steps)
        progress = (step - warmup_steps) / span
        return 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))

    return lr_lambda
