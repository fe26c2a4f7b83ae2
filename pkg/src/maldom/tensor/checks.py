"""Randomized gradient-check cases, one per differentiable op.

Each builder takes a numpy Generator and returns ``(f, inputs, wrt)`` for
:func:`gradcheck`. Shapes are small so a hundred trials per op stay cheap.
Inputs to kinked ops (relu, max) are kept well away from the kinks.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .gradcheck import gradcheck

Case = tuple[Callable, list, list]


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    x = rng.standard_normal(shape)
    return np.sign(x) * (0.05 + np.abs(x))


def _spread(rng: np.random.Generator, shape) -> np.ndarray:
    """Values whose pairwise gaps are at least 0.05, so argmax is stable under h."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.05 + rng.uniform(0, 0.01, n)).reshape(shape) - n * 0.025


def _lengths_mask(rng: np.random.Generator, b: int, t: int) -> np.ndarray:
    lengths = rng.integers(1, t + 1, size=b)
    return (np.arange(t)[None, :] < lengths[:, None]).astype(np.int64)


def _add(rng):
    return ops.add, [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))], [0, 1]


def _add_bias(rng):
    return ops.add, [rng.standard_normal((2, 3, 4)), rng.standard_normal(4)], [0, 1]


def _sub(rng):
    return ops.sub, [rng.standard_normal((3, 4)), rng.standard_normal(4)], [0, 1]


def _mul(rng):
    return ops.mul, [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))], [0, 1]


def _mul_shared(rng):
    return (lambda x: ops.mul(x, x)), [rng.standard_normal((3, 4))], [0]


def _matmul(rng):
    return ops.matmul, [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))], [0, 1]


def _bmm(rng):
    return ops.matmul, [rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 3))], [0, 1]


def _sum(rng):
    axis = int(rng.integers(0, 3))
    return (lambda x: ops.sum(x, axis=axis)), [rng.standard_normal((2, 3, 4))], [0]


def _mean(rng):
    axis = int(rng.integers(0, 3))
    return (lambda x: ops.mean(x, axis=axis)), [rng.standard_normal((2, 3, 4))], [0]


def _unary(fn):
    def build(rng):
        return fn, [rng.standard_normal((3, 5))], [0]
    return build


def _relu(rng):
    return ops.relu, [_away_from_zero(rng, (3, 5))], [0]


def _softmax(rng):
    return (lambda x: ops.softmax(x, axis=-1)), [rng.standard_normal((3, 5))], [0]


def _masked_fill(rng):
    mask = rng.random((3, 5)) < 0.3
    return (lambda x: ops.masked_fill(x, mask, -3.0)), [rng.standard_normal((3, 5))], [0]


def _reshape_transpose(rng):
    def f(x):
        return ops.transpose(ops.reshape(x, (4, 6)), (1, 0))
    return f, [rng.standard_normal((2, 3, 4))], [0]


def _index_basic(rng):
    return (lambda x: ops.index(x, (slice(None), 0))), [rng.standard_normal((3, 4, 2))], [0]


def _index_advanced(rng):
    rows = rng.integers(0, 4, size=6)
    return (lambda x: ops.index(x, rows)), [rng.standard_normal((4, 3))], [0]


def _concat(rng):
    def f(a, b):
        return ops.concat([a, b], axis=-1)
    return f, [rng.standard_normal((2, 3)), rng.standard_normal((2, 2))], [0, 1]


def _max(rng):
    return (lambda x: ops.max(x, axis=1)), [_spread(rng, (2, 5, 3))], [0]


def _embedding(rng):
    ids = rng.integers(0, 6, size=(2, 4))
    return (lambda t: ops.embedding(t, ids)), [rng.standard_normal((6, 3))], [0]


def _conv1d(rng):
    stride = int(rng.integers(1, 3))
    padding = (int(rng.integers(0, 3)), int(rng.integers(0, 3)))

    def f(x, w, b):
        return ops.conv1d(x, w, b, stride=stride, padding=padding)
    inputs = [rng.standard_normal((2, 3, 6)), rng.standard_normal((4, 3, 3)), rng.standard_normal(4)]
    return f, inputs, [0, 1, 2]


def _layernorm(rng):
    inputs = [rng.standard_normal((2, 3, 5)), 1 + 0.1 * rng.standard_normal(5), rng.standard_normal(5)]
    return ops.layernorm, inputs, [0, 1, 2]


def _dropout(rng):
    seed = int(rng.integers(2**31))
    return (lambda x: ops.dropout(x, 0.3, seed)), [rng.standard_normal((3, 5))], [0]


def _cross_entropy(rng):
    targets = rng.integers(0, 4, size=5)
    targets[rng.random(5) < 0.3] = ops.IGNORE
    targets[0] = rng.integers(0, 4)
    return (lambda z: ops.softmax_cross_entropy(z, targets)), [rng.standard_normal((5, 4))], [0]


def _recurrent(kernel, gates: int, reverse: bool):
    def build(rng):
        b, t, n_in, h = 2, 4, 3, 2
        mask = _lengths_mask(rng, b, t)

        def f(x, w_ih, w_hh, b_ih, b_hh):
            return kernel(x, mask, w_ih, w_hh, b_ih, b_hh, reverse=reverse)
        inputs = [
            rng.standard_normal((b, t, n_in)),
            0.5 * rng.standard_normal((n_in, gates * h)),
            0.5 * rng.standard_normal((h, gates * h)),
            0.5 * rng.standard_normal(gates * h),
            0.5 * rng.standard_normal(gates * h),
        ]
        return f, inputs, [0, 1, 2, 3, 4]
    return build


OP_CASES: dict[str, Callable[[np.random.Generator], Case]] = {
    "add": _add,
    "add_bias": _add_bias,
    "sub": _sub,
    "mul": _mul,
    "mul_shared": _mul_shared,
    "matmul": _matmul,
    "bmm": _bmm,
    "sum": _sum,
    "mean": _mean,
    "tanh": _unary(ops.tanh),
    "sigmoid": _unary(ops.sigmoid),
    "relu": _relu,
    "gelu": _unary(ops.gelu),
    "softmax": _softmax,
    "masked_fill": _masked_fill,
    "reshape_transpose": _reshape_transpose,
    "index_basic": _index_basic,
    "index_advanced": _index_advanced,
    "concat": _concat,
    "max": _max,
    "embedding": _embedding,
    "conv1d": _conv1d,
    "layernorm": _layernorm,
    "dropout": _dropout,
    "cross_entropy": _cross_entropy,
    "gru": _recurrent(ops.gru, 3, False),
    "gru_reverse": _recurrent(ops.gru, 3, True),
    "lstm": _recurrent(ops.lstm, 4, False),
    "lstm_reverse": _recurrent(ops.lstm, 4, True),
}


@dataclass
class OpResult:
    name: str
    trials: int
    max_rel_error: float
    passed: bool


def check_op(name: str, trials: int = 100, seed: int = 0, tol: float = 1e-4) -> OpResult:
    build = OP_CASES[name]
    worst = 0.0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial, zlib.crc32(name.encode())])
        f, inputs, wrt = build(rng)
        rep = gradcheck(f, inputs, tol=tol, seed=trial, wrt=wrt)
        worst = max(worst, rep.max_rel_error)
    return OpResult(name, trials, worst, worst < tol)


def run_suite(trials: int = 100, seed: int = 0, tol: float = 1e-4, names=None) -> list[OpResult]:
    return [check_op(n, trials, seed, tol) for n in (names or OP_CASES)]
