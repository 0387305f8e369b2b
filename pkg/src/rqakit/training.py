"""Shared training plumbing: the step log and the Adam + warmup optimizer."""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch


@dataclass
class TrainLog:
    """Per-step losses plus the config that produced them."""

    algorithm: str
    config: dict[str, Any]
    losses: list[float] = field(default_factory=list)

    def record(self, loss: float) -> None:
        self.losses.append(float(loss))

    @property
    def final_loss(self) -> float | None:
        return self.losses[-1] if self.losses else None

    def to_dict(self) -> dict[str, Any]:
        return {"algorithm": self.algorithm, "config": self.config, "losses": self.losses}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def make_optimizer(
    parameters, learning_rate: float, max_steps: int
) -> tuple[torch.optim.Optimizer, torch.optim.lr_scheduler.LambdaLR]:
    """Adam with linear warmup over the first 10% of steps, then constant."""
    optimizer = torch.optim.Adam(parameters, lr=learning_rate)
    warmup = max(1, math.ceil(0.1 * max_steps))
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: min(1.0, (step + 1) / warmup)
    )
    return optimizer, scheduler
