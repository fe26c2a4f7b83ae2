from __future__ import annotations

import math

import numpy as np
import pytest

from maldom import corpus
from maldom import tensor as T
from maldom.models import (
    ARCHS,
    AdamState,
    Checkpoint,
    ConfigMismatch,
    LabelOutOfRange,
    ModelConfig,
    TrainConfig,
    adamw_step,
    build,
    finetune,
    fit_classifier,
    predict,
)
from maldom.models.train import ByteEncoder, smoothed
from maldom.tensor import Parameter, precision

import experiments

SMALL = dict(embed_dim=16, hidden_dim=16, num_layers=2, num_heads=2, max_len=32)


def small_config(arch: str, **kw) -> ModelConfig:
    return ModelConfig(arch=arch, vocab_size=50, **{**SMALL, **kw})


def batch(rng, n=4, length=10, vocab=50):
    lengths = rng.integers(3, length + 1, size=n)
    lengths[0] = length
    mask = (np.arange(length)[None, :] < lengths[:, None]).astype(np.int64)
    ids = np.where(mask == 1, rng.integers(1, vocab, size=(n, length)), 0)
    return ids, mask


def test_transformer_output_shape():
    cfg = ModelConfig(arch="TransformerEncoder", vocab_size=512, embed_dim=64, hidden_dim=64,
                      num_layers=2, num_heads=4, max_len=64)
    ids, mask = batch(np.random.default_rng(0), n=8, length=64, vocab=512)
    assert build(cfg, 0).eval()(ids, mask).shape == (8, 2)


def test_bidirectional_feature_width():
    model = build(ModelConfig(arch="CharBiGRU", hidden_dim=128, embed_dim=32, num_layers=1), 0).eval()
    ids, mask = batch(np.random.default_rng(0), vocab=257)
    assert model.features(ids, mask).shape == (4, 256)


def test_heads_must_divide_embed_dim():
    with pytest.raises(ConfigMismatch):
        ModelConfig(arch="TransformerEncoder", embed_dim=10, hidden_dim=10, num_heads=4)
    with pytest.raises(ConfigMismatch):
        ModelConfig(arch="NoSuchNet")


def test_sequence_longer_than_max_len_rejected():
    model = build(small_config("TransformerEncoder", max_len=8), 0).eval()
    with pytest.raises(ValueError):
        model(np.ones((1, 9), np.int64), np.ones((1, 9), np.int64))


@pytest.mark.parametrize("arch", ARCHS)
def test_padding_invariance(arch):
    rng = np.random.default_rng(1)
    model = build(small_config(arch), 0).eval()
    ids, mask = batch(rng)
    extra = np.zeros((len(ids), 6), np.int64)
    with precision(np.float64), T.no_grad():
        model64 = build(small_config(arch), 0).eval()
        a = model64(ids, mask).data
        b = model64(np.hstack([ids, extra]), np.hstack([mask, extra])).data
    assert np.abs(a - b).max() < 1e-5
    with T.no_grad():
        c = model(ids, mask).data
        d = model(np.hstack([ids, extra]), np.hstack([mask, extra])).data
    assert np.abs(c - d).max() < 1e-5


@pytest.mark.parametrize("arch", ARCHS)
def test_batch_permutation_and_finiteness(arch):
    rng = np.random.default_rng(2)
    model = build(small_config(arch), 0).eval()
    ids, mask = batch(rng, n=6)
    perm = rng.permutation(6)
    with T.no_grad():
        out = model(ids, mask).data
        permuted = model(ids[perm], mask[perm]).data
    assert np.isfinite(out).all()
    assert np.abs(out[perm] - permuted).max() < 1e-5


@pytest.mark.parametrize("arch", ARCHS)
def test_build_is_deterministic(arch):
    a = build(small_config(arch), 7).state_dict()
    b = build(small_config(arch), 7).state_dict()
    c = build(small_config(arch), 8).state_dict()
    assert list(a) == list(b)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(a[k].tobytes() != c[k].tobytes() for k in a)


@pytest.mark.parametrize("arch", ARCHS)
def test_every_parameter_receives_gradient(arch):
    model = build(small_config(arch, dropout=0.0), 0).train()
    ids, mask = batch(np.random.default_rng(3), n=6)
    loss = T.softmax_cross_entropy(model(ids, mask), np.array([0, 1, 0, 1, 1, 0]))
    loss.backward()
    for name, p in model.named_parameters():
        assert p.grad is not None, name
        assert np.isfinite(p.grad).all(), name
        assert np.abs(p.grad).max() > 0, name


@pytest.mark.parametrize("mode", ["sequential", "parallel"])
def test_cnn_modes(mode):
    model = build(small_config("CharCNN", cnn_mode=mode), 0).eval()
    ids, mask = batch(np.random.default_rng(4))
    assert model(ids, mask).shape == (4, 2)


def scalar(value: float, decay: bool = True) -> Parameter:
    with precision(np.float64):
        p = Parameter(np.array([value]))
    p.decay = decay
    return p


def test_adamw_decay_only_step():
    p, b = scalar(1.0), scalar(1.0, decay=False)
    adamw_step([p, b], [np.zeros(1), np.zeros(1)], AdamState(), lr=0.1, weight_decay=0.1)
    assert abs(p.data[0] - 0.99) < 1e-12
    assert b.data[0] == 1.0


def test_adamw_skips_missing_gradients():
    p = scalar(1.0)
    adamw_step([p], [None], AdamState(), lr=0.1, weight_decay=0.1)
    assert p.data[0] == 1.0


def reference_adamw(x0, grad_fn, steps, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v, path = x0, 0.0, 0.0, []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        x = x * (1 - lr * wd)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        path.append(x)
    return path


@pytest.mark.parametrize("wd", [0.0, 0.01])
def test_adamw_matches_reference_on_quadratic(wd):
    p, state, path = scalar(5.0), AdamState(), []
    for _ in range(200):
        adamw_step([p], [2 * p.data.copy()], state, lr=0.1, weight_decay=wd)
        path.append(float(p.data[0]))
    ref = reference_adamw(5.0, lambda x: 2 * x, 200, 0.1, wd)
    assert max(abs(a - b) for a, b in zip(path, ref)) < 1e-12
    assert abs(path[-1]) < 0.5


def test_pretrain_zero_steps_keeps_initialisation():
    run = experiments.desk_pretrain(n_lines=300, steps=0)
    assert run.losses == []
    init = build(run.checkpoint.model_config, 42, mlm_head=True).state_dict()
    assert all(init[k].tobytes() == v.tobytes() for k, v in run.checkpoint.state.items())


def test_pretrain_initial_loss_and_progress(desk_pretrained):
    losses = desk_pretrained.losses
    ln_v = math.log(desk_pretrained.checkpoint.model_config.vocab_size)
    assert len(losses) == 500
    assert abs(losses[0] - ln_v) / ln_v < 0.15
    assert smoothed(losses)[-1] < losses[0] - 0.5


@pytest.fixture(scope="module")
def four_class():
    data = corpus.make_dataset({"benign": 16, "uniform_char": 16, "hex": 16, "dictionary": 16},
                               seed=3, binary=False)
    return data, corpus.LabelSet.from_entries(data).names


def test_finetune_overfits_small_set(four_class):
    data, names = four_class
    cfg = ModelConfig(arch="CharCNN", embed_dim=32, hidden_dim=32, num_layers=2, dropout=0.0)
    ckpt, history = finetune(cfg, data, data, TrainConfig(epochs=40, lr=1e-2, weight_decay=0.0,
                                                          batch_size=16), names)
    preds, _ = predict(ckpt.build_model(), ckpt.make_encoder(), [e.text for e in data])
    assert (preds == np.array([e.label_id for e in data])).all()


def test_finetune_rejects_bad_labels(four_class):
    data, names = four_class
    cfg = ModelConfig(arch="CharCNN", embed_dim=8, hidden_dim=8, num_layers=1)
    with pytest.raises(ValueError):
        finetune(cfg, data, data, TrainConfig(epochs=1), names[:1])
    with pytest.raises(LabelOutOfRange):
        fit_classifier(build(cfg, 0), ByteEncoder(), data, [], TrainConfig(epochs=1), 3)


def test_finetune_same_seed_same_history(four_class):
    data, names = four_class
    cfg = ModelConfig(arch="CharGRU", embed_dim=8, hidden_dim=8, num_layers=1)
    train_cfg = TrainConfig(epochs=2, batch_size=16)
    a, ha = finetune(cfg, data, data, train_cfg, names)
    b, hb = finetune(cfg, data, data, train_cfg, names)
    assert ha == hb
    assert all(a.state[k].tobytes() == b.state[k].tobytes() for k in a.state)


def test_predict_probabilities(four_class):
    data, names = four_class
    cfg = ModelConfig(arch="CharBiLSTM", embed_dim=8, hidden_dim=8, num_layers=1, num_classes=4)
    model, enc = build(cfg, 0), ByteEncoder()
    texts = [e.text for e in data[:20]]
    preds, probs = predict(model, enc, texts)
    assert probs.shape == (20, 4)
    assert np.abs(probs.sum(axis=1) - 1).max() < 1e-6
    assert (preds == probs.argmax(axis=1)).all()
    singles = np.vstack([predict(model, enc, [t])[1] for t in texts])
    assert np.abs(singles - probs).max() < 1e-5


def test_checkpoint_round_trip(tmp_path, four_class):
    data, names = four_class
    cfg = ModelConfig(arch="CharCNNBiLSTM", embed_dim=8, hidden_dim=8, num_layers=1)
    ckpt, _ = finetune(cfg, data, data, TrainConfig(epochs=1, batch_size=32), names)
    ckpt.save(tmp_path / "a")
    back = Checkpoint.load(tmp_path / "a")
    back.save(tmp_path / "b")
    for name in ("checkpoint.json", "params.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert back.label_names == names and back.model_config == ckpt.model_config
    texts = [e.text for e in data]
    assert np.array_equal(predict(ckpt.build_model(), ckpt.make_encoder(), texts)[1],
                          predict(back.build_model(), back.make_encoder(), texts)[1])
