"""Named parameter storage, the Adam update and checkpoint files."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np


@dataclass
class Parameter:
    value: np.ndarray
    trainable: bool = True
    grad: np.ndarray | None = None
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


class ParameterSet:
    """Ordered name -> Parameter mapping plus the shared Adam step count.

    Indexing returns the raw value array so layer code can stay terse;
    use :meth:`param` for the full record.
    """

    def __init__(self):
        self._params: dict[str, Parameter] = {}
        self.step = 0

    def add(self, name: str, value, trainable: bool = True) -> np.ndarray:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        self._params[name] = Parameter(value, trainable)
        return self._params[name].value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name].value

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def param(self, name: str) -> Parameter:
        return self._params[name]

    def trainable(self) -> list[str]:
        return [k for k, p in self._params.items() if p.trainable]

    def values(self, trainable_only: bool = False) -> dict[str, np.ndarray]:
        return {k: p.value for k, p in self._params.items()
                if p.trainable or not trainable_only}

    def count(self, trainable_only: bool = True) -> int:
        return sum(v.size for v in self.values(trainable_only).values())

    def set_grads(self, grads: dict[str, np.ndarray]) -> None:
        for name in self.trainable():
            g = grads.get(name)
            p = self._params[name]
            if g is None:
                p.grad = np.zeros_like(p.value)
                continue
            if g.shape != p.value.shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.value.shape}")
            p.grad = g

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        out.step = self.step
        for k, p in self._params.items():
            q = Parameter(p.value.copy(), p.trainable)
            q.m, q.v = p.m.copy(), p.v.copy()
            out._params[k] = q
        return out

    def allclose(self, other: "ParameterSet", atol: float = 0.0) -> bool:
        if list(self) != list(other):
            return False
        return all(np.allclose(self[k], other[k], rtol=0.0, atol=atol) for k in self)


def adam_step(params: ParameterSet, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update of every trainable parameter, in place."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    params.step += 1
    t = params.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name in params.trainable():
        p = params.param(name)
        if p.grad is None:
            raise ValueError(f"no gradient populated for {name}")
        g = p.grad
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        p.value -= (lr / bc1) * p.m / (np.sqrt(p.v / bc2) + eps)


def save_checkpoint(path, params: ParameterSet, meta: dict | None = None) -> None:
    """Write an ``.npz`` holding values, Adam moments and a JSON header."""
    arrays = {}
    layout = []
    for k in params:
        p = params.param(k)
        arrays[f"value/{k}"] = p.value
        arrays[f"m/{k}"] = p.m
        arrays[f"v/{k}"] = p.v
        layout.append({"name": k, "shape": list(p.value.shape), "trainable": p.trainable})
    header = {"format": "wakesense-checkpoint/1", "step": params.step,
              "layout": layout, "meta": meta or {}}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[ParameterSet, dict]:
    with np.load(Path(path)) as data:
        header = json.loads(data["header"].tobytes().decode())
        params = ParameterSet()
        params.step = header["step"]
        for entry in header["layout"]:
            k = entry["name"]
            params.add(k, data[f"value/{k}"], entry["trainable"])
            p = params.param(k)
            p.m = data[f"m/{k}"].copy()
            p.v = data[f"v/{k}"].copy()
            if list(p.value.shape) != entry["shape"]:
                raise ValueError(f"checkpoint entry {k} has inconsistent shape")
    return params, header["meta"]
