"""Small layer helpers on top of :mod:`srulab.tensor`."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import tensor as tn
from .tensor import Tensor


def uniform_param(rng: np.random.Generator, shape, bound: float) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear:
    """Affine map ``y = x W^T + b`` with ``W`` stored as (out, in)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(n_in)
        self.W = uniform_param(rng, (n_out, n_in), bound)
        self.b = uniform_param(rng, (n_out,), bound) if bias else None

    def __call__(self, x) -> Tensor:
        y = tn.matmul(x, tn.transpose(self.W))
        return y + self.b if self.b is not None else y

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + "W": self.W}
        if self.b is not None:
            out[prefix + "b"] = self.b
        return out


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": tn.relu,
    "tanh": tn.tanh,
    "sigmoid": tn.sigmoid,
    "identity": lambda x: x,
}


class MLP:
    """Stack of Linear layers; ``activation`` between layers, ``final`` after the last."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, activation: str = "relu",
                 final: str = "identity"):
        if len(sizes) < 2:
            raise ValueError(f"MLP needs at least input and output size, got {sizes}")
        self.sizes = list(sizes)
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.act = ACTIVATIONS[activation]
        self.final = ACTIVATIONS[final]

    def __call__(self, x) -> Tensor:
        for layer in self.layers[:-1]:
            x = self.act(layer(x))
        return self.final(self.layers[-1](x))

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for k, layer in enumerate(self.layers):
            out.update(layer.named_parameters(f"{prefix}{k}."))
        return out


def params_to_json(named: dict[str, Tensor]) -> dict:
    return {k: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()} for k, t in named.items()}


def load_params_json(named: dict[str, Tensor], blob: dict) -> None:
    """Copy values from a checkpoint map into existing tensors (shapes must agree)."""
    missing = set(named) - set(blob)
    if missing:
        raise KeyError(f"checkpoint missing parameters: {sorted(missing)}")
    for k, t in named.items():
        entry = blob[k]
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != t.shape:
            raise tn.DimensionError(f"parameter {k}: checkpoint shape {arr.shape} vs model {t.shape}")
        t.data[...] = arr


def save_checkpoint(path: str | Path, named: dict[str, Tensor]) -> None:
    Path(path).write_text(json.dumps(params_to_json(named)))


def load_checkpoint(path: str | Path, named: dict[str, Tensor]) -> None:
    load_params_json(named, json.loads(Path(path).read_text()))


def parameters(named: dict[str, Tensor]) -> list[Tensor]:
    return list(named.values())


def grads_of(params: Iterable[Tensor]) -> list[np.ndarray]:
    return [p.grad for p in params]
