from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.layers import softmax_crossentropy

WEIGHT_BOUNDS = (0.01, 10.0)


@dataclass(frozen=True)
class TaskWeights:
    """Multipliers for the displacement, speed and direction losses."""
    l1: float = 1.0
    l2: float = 1.0
    l3: float = 1.0

    def __post_init__(self):
        lo, hi = WEIGHT_BOUNDS
        for name in ("l1", "l2", "l3"):
            w = getattr(self, name)
            if not np.isfinite(w) or not lo <= w <= hi:
                raise ValueError(f"task weight {name}={w} outside [{lo}, {hi}]")

    @classmethod
    def unchecked(cls, l1: float, l2: float, l3: float) -> "TaskWeights":
        """Bypass the bound check (used to isolate single tasks in tests)."""
        obj = object.__new__(cls)
        for k, v in zip(("l1", "l2", "l3"), (l1, l2, l3)):
            object.__setattr__(obj, k, float(v))
        return obj

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.l1, self.l2, self.l3)


def loss_l1(x_hat, x) -> tuple[float, np.ndarray]:
    """Mean squared displacement error and its gradient w.r.t. ``x_hat``."""
    x_hat = np.asarray(x_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x.shape}")
    if x.size == 0:
        raise ValueError("empty batch")
    r = x_hat - x
    return float(np.mean(r * r)), 2.0 * r / x.size


def loss_l2(speed_logits, v_class) -> tuple[float, np.ndarray]:
    return softmax_crossentropy(speed_logits, v_class)


def loss_l3(dir_logits, d_class) -> tuple[float, np.ndarray]:
    return softmax_crossentropy(dir_logits, d_class)


def loss_total(l1: float, l2: float, l3: float, weights: TaskWeights) -> float:
    return weights.l1 * l1 + weights.l2 * l2 + weights.l3 * l3


def combined_loss(outputs, x, v_class, d_class, weights: TaskWeights):
    """Weighted loss, its parts and the gradients w.r.t. the three network outputs."""
    l1, g1 = loss_l1(outputs.x_hat, x)
    l2, g2 = loss_l2(outputs.speed_logits, v_class)
    l3, g3 = loss_l3(outputs.dir_logits, d_class)
    total = loss_total(l1, l2, l3, weights)
    return total, (l1, l2, l3), (weights.l1 * g1, weights.l2 * g2, weights.l3 * g3)
