from __future__ import annotations

import math

import numpy as np
import pytest

from maldom import tensor as T
from maldom.tensor import Parameter, Tensor, gradcheck, precision
from maldom.tensor import checks, nn
from maldom.tensor.io import load_parameters, save_parameters


def leaf(a, dtype=np.float64):
    return Tensor(np.asarray(a, dtype=dtype), requires_grad=True, dtype=dtype)


def test_default_dtype_and_precision_switch():
    assert Tensor([1.0]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert T.get_default_dtype() == np.float32
    with pytest.raises(ValueError):
        T.set_default_dtype(np.int32)


def test_matmul_identity_and_shapes():
    a = np.random.default_rng(0).standard_normal((3, 3))
    assert np.allclose(T.matmul(Tensor(np.eye(3)), Tensor(a)).data, a, atol=1e-6)
    assert T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4)))).shape == (2, 4)
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 4))))


def test_matmul_gradcheck_5x5():
    rng = np.random.default_rng(1)
    rep = gradcheck(T.matmul, [rng.standard_normal((5, 5)), rng.standard_normal((5, 5))])
    assert rep.passed, rep


def test_conv1d_identity_and_length():
    x = np.random.default_rng(2).standard_normal((2, 1, 7))
    out = T.conv1d(Tensor(x), Tensor(np.ones((1, 1, 1))))
    assert np.allclose(out.data, x, atol=1e-6)
    assert T.conv1d(Tensor(np.ones((1, 2, 10))), Tensor(np.ones((4, 2, 3))), padding=1).shape == (1, 4, 10)
    # floor((L + 2p - k) / s) + 1
    assert T.conv1d(Tensor(np.ones((1, 2, 10))), Tensor(np.ones((4, 2, 3))), stride=2, padding=1).shape[-1] == 5


def test_conv1d_gradcheck_2x3x8():
    rng = np.random.default_rng(3)

    def f(x, w, b):
        return T.conv1d(x, w, b, padding=1)
    rep = gradcheck(f, [rng.standard_normal((2, 3, 8)), rng.standard_normal((4, 3, 3)), rng.standard_normal(4)])
    assert rep.passed, rep


def test_embedding():
    table = Tensor(np.arange(12.0).reshape(4, 3))
    out = T.embedding(table, np.array([0, 0]))
    assert (out.data[0] == out.data[1]).all()
    with pytest.raises(IndexError):
        T.embedding(table, np.array([4]))
    t = leaf(np.zeros((4, 3)))
    T.embedding(t, np.array([1, 1, 2])).sum().backward()
    assert t.grad[:, 0].tolist() == [0, 2, 1, 0]


def test_elementwise_values():
    z = Tensor(np.zeros(3))
    assert (T.elementwise("tanh", z).data == 0).all()
    assert np.allclose(T.elementwise("sigmoid", z).data, 0.5)
    assert (T.elementwise("relu", Tensor([-1.0, 2.0])).data == [0, 2]).all()
    assert np.isclose(T.elementwise("gelu", Tensor([1.0])).data[0], 0.8413447, atol=1e-6)
    assert (T.elementwise("add", z, z).data == 0).all()
    assert (T.elementwise("mul", Tensor([2.0]), Tensor([3.0])).data == 6).all()


def test_cross_entropy_uniform_logits():
    with precision(np.float64):
        loss = T.softmax_cross_entropy(Tensor(np.zeros((3, 4))), np.array([0, 1, 3]))
    assert abs(loss.item() - math.log(4)) < 1e-12


def test_cross_entropy_all_ignored():
    z = leaf(np.random.default_rng(0).standard_normal((3, 4)))
    loss = T.softmax_cross_entropy(z, np.full(3, T.IGNORE))
    loss.backward()
    assert loss.item() == 0.0 and (z.grad == 0).all()


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(4)
    p = rng.standard_normal((6, 5))
    t = rng.integers(0, 5, size=6)
    z = leaf(p)
    T.softmax_cross_entropy(z, t).backward()
    e = np.exp(p - p.max(axis=1, keepdims=True))
    expected = (e / e.sum(axis=1, keepdims=True) - np.eye(5)[t]) / 6
    assert np.abs(z.grad - expected).max() < 1e-6
    with pytest.raises(IndexError):
        T.softmax_cross_entropy(z, np.array([0, 0, 0, 0, 0, 9]))


def test_cross_entropy_stable_on_large_logits():
    with precision(np.float64):
        loss = T.softmax_cross_entropy(Tensor([[1000.0, 0.0]]), np.array([1]))
    assert np.isfinite(loss.item()) and abs(loss.item() - 1000.0) < 1e-9


def test_layernorm():
    with precision(np.float64):
        beta = Tensor(np.array([1.0, -2.0, 3.0]))
        out = T.layernorm(Tensor(np.full((2, 3), 7.0)), Tensor(np.ones(3)), beta)
        assert np.allclose(out.data, beta.data)
        x = np.random.default_rng(5).standard_normal((4, 16)) * 3 + 2
        y = T.layernorm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    assert np.abs(y.mean(axis=1)).max() < 1e-9
    assert np.abs(y.var(axis=1) - 1).max() < 1e-3


def test_dropout():
    x = Tensor(np.ones(100_000))
    assert T.dropout(x, 0.0, 0) is x
    assert T.dropout(x, 0.5, 0, training=False) is x
    y = T.dropout(x, 0.5, 0).data
    assert 0.49 <= (y == 0).mean() <= 0.51
    assert set(np.unique(y)) == {0.0, 2.0}


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(6).standard_normal((50, 9)) * 10)
    assert np.abs(T.softmax(x).data.sum(axis=1) - 1).max() < 1e-6


def test_backward_requires_scalar():
    x = leaf(np.ones(3))
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_gradient_linearity():
    rng = np.random.default_rng(7)
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))

    def loss1(x, w):
        return T.tanh(T.matmul(x, w)).sum()

    def loss2(x, w):
        return T.mul(T.matmul(x, w), T.matmul(x, w)).mean()

    x, w = leaf(a), leaf(b)
    (loss1(x, w) + loss2(x, w)).backward()
    together = (x.grad.copy(), w.grad.copy())
    sep = []
    for fn in (loss1, loss2):
        x, w = leaf(a), leaf(b)
        fn(x, w).backward()
        sep.append((x.grad, w.grad))
    assert np.allclose(together[0], sep[0][0] + sep[1][0], atol=1e-12)
    assert np.allclose(together[1], sep[0][1] + sep[1][1], atol=1e-12)


def test_grads_accumulate_across_backward_calls():
    x = leaf([1.0, 2.0])
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    assert x.grad.tolist() == [6.0, 6.0]


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_broadcast_limited_to_suffix():
    with pytest.raises(ValueError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))
    assert T.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3))).shape == (2, 3)
    assert T.add(Tensor(np.ones((2, 3))), 1.0).shape == (2, 3)


@pytest.mark.parametrize("kernel, gates", [(T.gru, 3), (T.lstm, 4)])
def test_recurrent_padding_does_not_change_state(kernel, gates):
    rng = np.random.default_rng(8)
    w = [rng.standard_normal(s) for s in ((3, gates * 2), (2, gates * 2), (gates * 2,), (gates * 2,))]
    x = rng.standard_normal((1, 4, 3))
    padded = np.concatenate([x, rng.standard_normal((1, 3, 3))], axis=1)
    with precision(np.float64):
        short = kernel(Tensor(x), np.ones((1, 4)), *map(Tensor, w)).data
        long = kernel(Tensor(padded), np.array([[1] * 4 + [0] * 3]), *map(Tensor, w)).data
    assert np.allclose(short[:, -1], long[:, 3], atol=1e-12)


def test_gradcheck_catches_a_wrong_gradient():
    def wrong(x):
        return Tensor._from_op(x.data ** 2, (x,), lambda g: (g * x.data,))  # missing factor 2
    assert not gradcheck(wrong, [np.array([1.0, 2.0])]).passed


@pytest.mark.parametrize("name", sorted(checks.OP_CASES))
def test_op_gradcheck_quick(name):
    res = checks.check_op(name, trials=5, seed=123)
    assert res.passed, res


def test_module_state_round_trip(tmp_path):
    rng = np.random.default_rng(9)

    class Net(nn.Module):
        def __init__(self):
            self.a = nn.Linear(3, 4, rng)
            self.blocks = [nn.LayerNorm(4), nn.Linear(4, 2, rng)]

    net = Net()
    names = [n for n, _ in net.named_parameters()]
    assert names == ["a.weight", "a.bias", "blocks.0.weight", "blocks.0.bias", "blocks.1.weight", "blocks.1.bias"]
    assert [p.decay for p in net.parameters()] == [True, False, False, False, True, False]
    save_parameters(net.state_dict(), tmp_path / "p.json")
    back = load_parameters(tmp_path / "p.json")
    assert all(np.array_equal(back[k], v) for k, v in net.state_dict().items())
    raw = (tmp_path / "p.bin").read_bytes()
    assert raw[:4] == np.float32(net.a.weight.data.reshape(-1)[0]).astype("<f4").tobytes()
    other = Net()
    other.load_state_dict(back)
    assert np.array_equal(other.a.weight.data, net.a.weight.data)
    with pytest.raises(ValueError):
        other.load_state_dict({**back, "a.weight": np.zeros((1, 1), np.float32)})
    with pytest.raises((KeyError, ValueError)):
        other.load_state_dict({k: v for k, v in back.items() if k != "a.bias"})


def test_parameter_defaults():
    p = Parameter(np.zeros(2))
    assert p.requires_grad and p.decay
