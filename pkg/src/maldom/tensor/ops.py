"""Differentiable operations.

Broadcasting is limited to a scalar operand or an operand whose shape is a
suffix of the other's (bias over leading batch axes). Model code keeps all
other shapes explicit.
"""

from __future__ import annotations

import math
from numbers import Number
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .core import Tensor

IGNORE = -100


def _check_broadcast(a: tuple, b: tuple) -> None:
    if a == b or not a or not b:
        return
    short, long = (a, b) if len(a) <= len(b) else (b, a)
    if long[len(long) - len(short):] != short:
        raise ValueError(f"unsupported broadcast between {a} and {b}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if not shape:
        return np.asarray(g.sum(), dtype=g.dtype)
    return g.reshape((-1,) + shape).sum(axis=0)


def _binary(a, b):
    if isinstance(b, Number):
        return a, None
    if isinstance(a, Number):
        return b, None
    return a, b


# -- arithmetic ---------------------------------------------------------------

def add(a, b) -> Tensor:
    if isinstance(a, Number):
        a, b = b, a
    if isinstance(b, Number):
        return Tensor._from_op(a.data + b, (a,), lambda g: (g,))
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    if isinstance(b, Number):
        return add(a, -b)
    if isinstance(a, Number):
        return add(mul(b, -1.0), a)
    _check_broadcast(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (_reduce_to(g, sa), -_reduce_to(g, sb)))


def mul(a, b) -> Tensor:
    if isinstance(a, Number):
        a, b = b, a
    if isinstance(b, Number):
        c = b
        return Tensor._from_op(a.data * c, (a,), lambda g: (g * c,))
    _check_broadcast(a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return _reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)

    return Tensor._from_op(ad * bd, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``(..., n, k) @ (..., k, m)`` with equal leading axes, or ``(..., n, k) @ (k, m)``."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 dimensions")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ValueError(f"matmul batch extents differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return Tensor._from_op(ad @ bd, (a, b), backward)


def sum(x: Tensor, axis=None) -> Tensor:
    shape = x.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return Tensor._from_op(np.asarray(x.data.sum(axis=axis)), (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(x, axis), 1.0 / float(n))


# -- elementwise nonlinearities -------------------------------------------------

def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * (1 - y * y),))


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * a) + 1)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * y * (1 - y),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return Tensor._from_op(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,))


_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1 + erf(xd / _SQRT2))

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return Tensor._from_op((xd * cdf).astype(x.dtype), (x,), backward)


ELEMENTWISE = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "gelu": gelu}


def elementwise(op: str, *args) -> Tensor:
    if op == "add":
        return add(*args)
    if op == "mul":
        return mul(*args)
    return ELEMENTWISE[op](*args)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(y, (x,), backward)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true (numpy broadcasting; mask is constant)."""
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, np.asarray(value, dtype=x.dtype), x.data)
    return Tensor._from_op(out, (x,), lambda g: (np.where(mask, 0, g).astype(g.dtype),))


# -- shape manipulation -----------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def index(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.dtype
    basic = _is_basic(idx)

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._from_op(x.data[idx], (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    ax = axis % datas[0].ndim
    bounds = np.cumsum([d.shape[ax] for d in datas])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._from_op(np.concatenate(datas, axis=ax), tuple(tensors), backward)


def max(x: Tensor, axis: int) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    arg = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, arg, axis=axis)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, arg, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return Tensor._from_op(np.squeeze(out, axis), (x,), backward)


# -- layers ----------------------------------------------------------------------

def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding ids outside [0, {table.shape[0]})")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return Tensor._from_op(table.data[ids], (table,), backward)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding=0) -> Tensor:
    """Cross-correlation of ``x (batch, c_in, length)`` with ``w (c_out, c_in, k)``.

    ``padding`` is a zero-pad width applied to both ends, or a ``(left, right)`` pair.
    """
    pl, pr = (padding, padding) if isinstance(padding, (int, np.integer)) else padding
    xd, wd = x.data, w.data
    batch, c_in, length = xd.shape
    c_out, c_in_w, k = wd.shape
    if c_in != c_in_w:
        raise ValueError(f"conv1d channel mismatch: input {c_in}, weight {c_in_w}")
    out_len = (length + pl + pr - k) // stride + 1
    if out_len < 1:
        raise ValueError("conv1d kernel longer than padded input")
    xp = np.pad(xd, ((0, 0), (0, 0), (pl, pr)))
    win = sliding_window_view(xp, k, axis=2)[:, :, : stride * (out_len - 1) + 1 : stride, :]
    cols = win.transpose(0, 2, 1, 3).reshape(batch * out_len, c_in * k)
    w2 = wd.reshape(c_out, c_in * k)
    out = (cols @ w2.T).reshape(batch, out_len, c_out).transpose(0, 2, 1)
    if b is not None:
        out = out + b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(batch * out_len, c_out)
        gw = (g2.T @ cols).reshape(wd.shape)
        gcols = (g2 @ w2).reshape(batch, out_len, c_in, k)
        gxp = np.zeros_like(xp)
        stop = stride * (out_len - 1) + 1
        for j in range(k):
            gxp[:, :, j : j + stop : stride] += gcols[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, pl : pl + length]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return Tensor._from_op(np.ascontiguousarray(out), parents, backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data
    d = xd.shape[-1]

    def backward(g):
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).reshape(-1, d).sum(axis=0), g.reshape(-1, d).sum(axis=0)

    return Tensor._from_op(out, (x, gamma, beta), backward)


def dropout(x: Tensor, p: float, rng, training: bool = True) -> Tensor:
    """Inverted dropout; identity when ``p == 0`` or not training."""
    if not training or p == 0:
        return x
    if not 0 <= p < 1:
        raise ValueError("dropout probability must lie in [0, 1)")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1 - p)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,))


def softmax_cross_entropy(logits: Tensor, targets, ignore_index: int = IGNORE) -> Tensor:
    """Mean cross-entropy over rows whose target is not ``ignore_index``.

    With no such rows the loss is 0 and all gradients are zero.
    """
    ld = logits.data
    if ld.ndim != 2:
        raise ValueError("logits must be (n, classes)")
    t = np.asarray(targets).reshape(-1)
    if len(t) != ld.shape[0]:
        raise ValueError("one target per logits row required")
    valid = t != ignore_index
    if np.any((t[valid] < 0) | (t[valid] >= ld.shape[1])):
        raise IndexError("target id out of range")
    n_valid = int(valid.sum())
    z = ld - ld.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    rows = np.nonzero(valid)[0]
    if n_valid:
        loss = -(z[rows, t[rows]] - np.log(s[rows, 0])).sum() / n_valid
    else:
        loss = 0.0

    def backward(g):
        grad = np.zeros_like(ld)
        if n_valid:
            grad[rows] = e[rows] / s[rows]
            grad[rows, t[rows]] -= 1
            grad *= g / n_valid
        return (grad,)

    return Tensor._from_op(np.asarray(loss, dtype=ld.dtype), (logits,), backward)


# -- recurrent kernels -----------------------------------------------------------------

def _time_major(x: np.ndarray, mask: np.ndarray, reverse: bool):
    xs = np.swapaxes(x, 0, 1)
    ms = np.swapaxes(mask, 0, 1)[..., None].astype(x.dtype)
    if reverse:
        xs, ms = xs[::-1], ms[::-1]
    return xs, ms


def _batch_major(seq: np.ndarray, reverse: bool) -> np.ndarray:
    if reverse:
        seq = seq[::-1]
    return np.ascontiguousarray(np.swapaxes(seq, 0, 1))


def gru(x: Tensor, mask, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor,
        reverse: bool = False) -> Tensor:
    """Single-direction GRU over ``x (batch, time, in)``; returns ``(batch, time, hidden)``.

    Gates are packed ``[reset, update, new]`` along the last axis of the
    weights. Where ``mask`` is 0 the state is carried through unchanged, so
    for right-padded input the last output of a forward pass (and the first
    of a reverse pass) is the state at the true sequence end.
    """
    xs, ms = _time_major(x.data, np.asarray(mask), reverse)
    steps, batch, _ = xs.shape
    H = w_hh.shape[0]
    Wh, bh = w_hh.data, b_hh.data
    gx = xs @ w_ih.data + b_ih.data  # (T, B, 3H)
    h = np.zeros((batch, H), dtype=xs.dtype)
    hs = np.empty((steps + 1, batch, H), dtype=xs.dtype)
    hs[0] = h
    r_all = np.empty((steps, batch, H), dtype=xs.dtype)
    z_all = np.empty_like(r_all)
    n_all = np.empty_like(r_all)
    ghn_all = np.empty_like(r_all)
    for t in range(steps):
        gh = h @ Wh + bh
        r = _sigmoid(gx[t, :, :H] + gh[:, :H])
        z = _sigmoid(gx[t, :, H : 2 * H] + gh[:, H : 2 * H])
        n = np.tanh(gx[t, :, 2 * H :] + r * gh[:, 2 * H :])
        h_new = (1 - z) * n + z * h
        m = ms[t]
        h = m * h_new + (1 - m) * h
        hs[t + 1] = h
        r_all[t], z_all[t], n_all[t], ghn_all[t] = r, z, n, gh[:, 2 * H :]

    def backward(g):
        gs, _ = _time_major(g, np.asarray(mask), reverse)
        dgx = np.empty_like(gx)
        dWh = np.zeros_like(Wh)
        dbh = np.zeros_like(bh)
        dh = np.zeros((batch, H), dtype=gx.dtype)
        for t in reversed(range(steps)):
            m = ms[t]
            h_prev = hs[t]
            r, z, n, ghn = r_all[t], z_all[t], n_all[t], ghn_all[t]
            dh = dh + gs[t]
            dh_new = m * dh
            dh_prev = (1 - m) * dh + dh_new * z
            dn = dh_new * (1 - z)
            dz = dh_new * (h_prev - n)
            da_n = dn * (1 - n * n)
            da_z = dz * z * (1 - z)
            da_r = da_n * ghn * r * (1 - r)
            dgh = np.concatenate([da_r, da_z, da_n * r], axis=1)
            dgx[t] = np.concatenate([da_r, da_z, da_n], axis=1)
            dWh += h_prev.T @ dgh
            dbh += dgh.sum(axis=0)
            dh = dh_prev + dgh @ Wh.T
        flat = dgx.reshape(-1, 3 * H)
        dW_ih = xs.reshape(-1, xs.shape[-1]).T @ flat
        dx = _batch_major(dgx @ w_ih.data.T, reverse)
        return dx, dW_ih, dWh, flat.sum(axis=0), dbh

    return Tensor._from_op(_batch_major(hs[1:], reverse), (x, w_ih, w_hh, b_ih, b_hh), backward)


def lstm(x: Tensor, mask, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor,
         reverse: bool = False) -> Tensor:
    """Single-direction LSTM, gates packed ``[input, forget, cell, output]``.

    Masking semantics match :func:`gru`.
    """
    xs, ms = _time_major(x.data, np.asarray(mask), reverse)
    steps, batch, _ = xs.shape
    H = w_hh.shape[0]
    Wh = w_hh.data
    gx = xs @ w_ih.data + b_ih.data + b_hh.data
    h = np.zeros((batch, H), dtype=xs.dtype)
    c = np.zeros_like(h)
    hs = np.empty((steps + 1, batch, H), dtype=xs.dtype)
    cs = np.empty_like(hs)
    hs[0], cs[0] = h, c
    gates = np.empty((steps, batch, 4 * H), dtype=xs.dtype)
    tc_all = np.empty((steps, batch, H), dtype=xs.dtype)
    for t in range(steps):
        a = gx[t] + h @ Wh
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H : 2 * H])
        gg = np.tanh(a[:, 2 * H : 3 * H])
        o = _sigmoid(a[:, 3 * H :])
        c_new = f * c + i * gg
        tc = np.tanh(c_new)
        h_new = o * tc
        m = ms[t]
        c = m * c_new + (1 - m) * c
        h = m * h_new + (1 - m) * h
        hs[t + 1], cs[t + 1] = h, c
        gates[t] = np.concatenate([i, f, gg, o], axis=1)
        tc_all[t] = tc

    def backward(g):
        gs, _ = _time_major(g, np.asarray(mask), reverse)
        dgx = np.empty_like(gx)
        dWh = np.zeros_like(Wh)
        dh = np.zeros((batch, H), dtype=gx.dtype)
        dc = np.zeros_like(dh)
        for t in reversed(range(steps)):
            m = ms[t]
            i, f, gg, o = np.split(gates[t], 4, axis=1)
            tc = tc_all[t]
            dh = dh + gs[t]
            dh_new = m * dh
            dc_new = m * dc + dh_new * o * (1 - tc * tc)
            do = dh_new * tc
            di = dc_new * gg
            dg = dc_new * i
            df = dc_new * cs[t]
            da = np.concatenate([
                di * i * (1 - i), df * f * (1 - f), dg * (1 - gg * gg), do * o * (1 - o),
            ], axis=1)
            dgx[t] = da
            dWh += hs[t].T @ da
            dc = (1 - m) * dc + dc_new * f
            dh = (1 - m) * dh + da @ Wh.T
        flat = dgx.reshape(-1, 4 * H)
        db = flat.sum(axis=0)
        dW_ih = xs.reshape(-1, xs.shape[-1]).T @ flat
        dx = _batch_major(dgx @ w_ih.data.T, reverse)
        return dx, dW_ih, dWh, db, db

    return Tensor._from_op(_batch_major(hs[1:], reverse), (x, w_ih, w_hh, b_ih, b_hh), backward)
