from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[str, int] | None
    tolerance: float
    per_param: dict[str, float] = field(default_factory=dict)
    n_checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def rel_error(a, n):
    a = np.asarray(a, dtype=float)
    n = np.asarray(n, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(model_fn: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
               params: Mapping[str, np.ndarray], tolerance: float = 1e-4,
               h: float = 1e-4, max_params: int = 5000) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``model_fn()`` must return ``(loss, grads)`` computed from the arrays in
    ``params``; those arrays are perturbed in place, one entry at a time, and
    restored afterwards.
    """
    total = sum(v.size for v in params.values())
    if total > max_params:
        raise ValueError(f"{total} parameters is too many for a finite-difference check")
    _, analytic = model_fn()
    analytic = {k: np.array(v, dtype=float, copy=True) for k, v in analytic.items()}
    report = GradCheckReport(0.0, None, tolerance)
    for name, arr in params.items():
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"parameter {name} is not contiguous; cannot perturb in place")
        num = np.zeros(arr.size)
        for j in range(arr.size):
            old = flat[j]
            flat[j] = old + h
            fp = model_fn()[0]
            flat[j] = old - h
            fm = model_fn()[0]
            flat[j] = old
            num[j] = (fp - fm) / (2.0 * h)
        ana = analytic.get(name, np.zeros(arr.shape)).reshape(-1)
        err = rel_error(ana, num)
        report.n_checked += arr.size
        report.per_param[name] = float(err.max()) if err.size else 0.0
        if err.size and err.max() > report.max_rel_error:
            report.max_rel_error = float(err.max())
            report.worst = (name, int(err.argmax()))
    return report
