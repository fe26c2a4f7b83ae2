"""Parameter containers and basic layers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .core import Parameter, Tensor, get_default_dtype


class Module:
    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy arrays into parameters by name; returns the names that were loaded."""
        own = dict(self.named_parameters())
        if strict and set(state) != set(own):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        loaded = []
        for name, array in state.items():
            if name not in own:
                continue
            p = own[name]
            if p.shape != tuple(array.shape):
                raise ValueError(f"{name}: shape {array.shape} != {p.shape}")
            p.data = np.array(array, dtype=p.dtype)
            loaded.append(name)
        return loaded


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = Parameter(_uniform(rng, bound, (n_in, n_out)))
        self.bias = Parameter(_uniform(rng, bound, (n_out,)), decay=False) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return y if self.bias is None else ops.add(y, self.bias)


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator, std: float = 1.0):
        self.weight = Parameter((rng.standard_normal((n, dim)) * std).astype(get_default_dtype()))

    def __call__(self, ids) -> Tensor:
        return ops.embedding(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        dtype = get_default_dtype()
        self.weight = Parameter(np.ones(dim, dtype=dtype), decay=False)
        self.bias = Parameter(np.zeros(dim, dtype=dtype), decay=False)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, self.weight, self.bias, self.eps)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, padding="same"):
        bound = 1.0 / math.sqrt(c_in * k)
        self.weight = Parameter(_uniform(rng, bound, (c_out, c_in, k)))
        self.bias = Parameter(_uniform(rng, bound, (c_out,)), decay=False)
        self.padding = ((k - 1) // 2, k // 2) if padding == "same" else padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, padding=self.padding)


class Recurrent(Module):
    """One direction of a GRU or LSTM layer."""

    def __init__(self, cell: str, n_in: int, hidden: int, rng: np.random.Generator, reverse: bool = False):
        if cell not in ("gru", "lstm"):
            raise ValueError(cell)
        gates = 3 if cell == "gru" else 4
        bound = 1.0 / math.sqrt(hidden)
        self.cell = cell
        self.reverse = reverse
        self.w_ih = Parameter(_uniform(rng, bound, (n_in, gates * hidden)))
        self.w_hh = Parameter(_uniform(rng, bound, (hidden, gates * hidden)))
        self.b_ih = Parameter(_uniform(rng, bound, (gates * hidden,)), decay=False)
        self.b_hh = Parameter(_uniform(rng, bound, (gates * hidden,)), decay=False)

    def __call__(self, x: Tensor, mask) -> Tensor:
        fn = ops.gru if self.cell == "gru" else ops.lstm
        return fn(x, mask, self.w_ih, self.w_hh, self.b_ih, self.b_hh, reverse=self.reverse)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        self.p = p
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.p, self.rng, self.training)
