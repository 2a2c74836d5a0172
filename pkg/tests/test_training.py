import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caaed import tensor as T
from caaed.data import SynthLanguage, Utterance, synth_corpus
from caaed.errors import ConfigError
from caaed.model import Model, ModelConfig
from caaed.tensor import Tensor
from caaed.training import (Adam, TrainConfig, clip_grad_norm, forward_batch, read_log, smoothed_ce,
                            train, train_step)
from caaed.vocab import Corpus, build_vocab


def test_ce_perfect_prediction_without_smoothing():
    logits = Tensor(np.array([[[60.0, 0.0, 0.0]]]))
    assert smoothed_ce(logits, np.array([[0]]), 0.0).item() == pytest.approx(0.0, abs=1e-12)


def test_ce_uniform_logits():
    logits = Tensor(np.zeros((2, 3, 7)))
    assert smoothed_ce(logits, np.zeros((2, 3), int), 0.1).item() == pytest.approx(math.log(7))


def test_ce_hand_case():
    x = np.array([1.0, 2.0, 0.5])
    logp = x - np.log(np.exp(x).sum())
    expected = -(0.9 * logp[1] + 0.05 * logp[0] + 0.05 * logp[2])
    with T.precision(64):
        got = smoothed_ce(Tensor(x[None, None]), np.array([[1]]), 0.1).item()
    assert got == pytest.approx(expected, rel=1e-12)


def test_ce_mask_ignores_padding():
    with T.precision(64):
        x = np.random.default_rng(0).standard_normal((1, 3, 4))
        full = smoothed_ce(Tensor(x[:, :2]), np.array([[1, 2]]), 0.1).item()
        masked = smoothed_ce(Tensor(x), np.array([[1, 2, 0]]), 0.1, np.array([[True, True, False]])).item()
    assert masked == pytest.approx(full, rel=1e-12)


def test_ce_gradient():
    with T.precision(64):
        x = Tensor(np.random.default_rng(1).standard_normal((2, 3, 5)), requires_grad=True)
        err = T.grad_check(lambda t: smoothed_ce(t, np.array([[0, 1, 2], [3, 4, 0]]), 0.1), x)
    assert err < 1e-5


def test_ce_rejects_bad_eps():
    with pytest.raises(ConfigError):
        smoothed_ce(Tensor(np.zeros((1, 1, 3))), np.zeros((1, 1), int), 1.0)


def test_sampling_schedule():
    cfg = TrainConfig(epochs=10)
    probs = [cfg.sampling_prob(e) for e in range(12)]
    assert probs[0] == 0.0
    assert all(a <= b for a, b in zip(probs, probs[1:]))
    assert probs[5] == pytest.approx(0.4) and max(probs) == pytest.approx(0.4)


@given(st.integers(1, 60), st.integers(0, 100))
@settings(max_examples=50, deadline=None)
def test_sampling_schedule_bounded(epochs, epoch):
    p = TrainConfig(epochs=epochs).sampling_prob(epoch)
    assert 0.0 <= p <= 0.4


def test_config_rejects_excess_sampling():
    with pytest.raises(ConfigError):
        TrainConfig(ss_end=0.5)


# --- small end-to-end fixtures ----------------------------------------------------------


@pytest.fixture(scope="module")
def setup():
    lang = SynthLanguage.default()
    lines = ["talk talks walked walking", "jump jumped play plays"] * 3
    vocab = build_vocab(Corpus.from_lines(lines), "word-piece", target_size=24)
    train_set, dev = synth_corpus(lang, 16, 4, seed=2, vocab=vocab)
    cfg = ModelConfig(vocab_size=len(vocab), input_dim=lang.input_dim, hidden=16, filter_size=5,
                      char_dim=8)
    return vocab, cfg, train_set, dev


def test_full_sampling_feeds_argmax(setup):
    """A zero model's argmax is unit 0, so sampling with p=1 feeds unit 0 back."""
    vocab, cfg, train_set, _ = setup
    m = Model(cfg.replace(dropout=0.0), vocab)
    for t in m.params.values():
        t.data[...] = 0
    m.params["emb.table"].data[...] = np.arange(len(vocab))[:, None]
    seen = []
    orig = m.provider.embedder

    def spy():
        inner = orig()

        def f(ids):
            seen.append(np.asarray(ids).copy())
            return inner(ids)
        return f

    m.provider.embedder = spy
    forward_batch(m, train_set[:2], sampling_p=1.0, rng=np.random.default_rng(0))
    assert np.all(seen[0] == vocab.sos)
    assert all(np.all(s == 0) for s in seen[1:])


@pytest.mark.parametrize("emb", ["lookup", "char"])
def test_overfits_single_utterance(setup, emb):
    vocab, cfg, train_set, _ = setup
    m = Model(cfg.replace(embedding=emb, dropout=0.0), vocab, seed=1)
    tc = TrainConfig(lr=1e-2, label_smoothing=0.0)
    opt = Adam(m.params, tc.lr)
    rng = np.random.default_rng(0)
    for _ in range(200):
        loss = train_step(m, opt, train_set[:1], tc, 0.0, rng)
        if loss < 0.05:
            break
    assert loss < 0.1


def test_zero_learning_rate_keeps_parameters(setup):
    vocab, cfg, train_set, _ = setup
    m = Model(cfg, vocab)
    before = {k: t.data.copy() for k, t in m.params.items()}
    tc = TrainConfig(lr=0.0)
    train_step(m, Adam(m.params, 0.0), train_set[:4], tc, 0.2, np.random.default_rng(0))
    assert all(np.array_equal(before[k], m.params[k].data) for k in before)


def test_zero_gradient_step_is_noop(setup):
    vocab, cfg, _, _ = setup
    m = Model(cfg, vocab)
    before = {k: t.data.copy() for k, t in m.params.items()}
    for t in m.params.values():
        t.grad = np.zeros_like(t.data)
    assert clip_grad_norm(m.params, 5.0) == 0.0
    Adam(m.params, 1e-3).step()
    assert all(np.array_equal(before[k], m.params[k].data) for k in before)


def test_clip_scales_to_max_norm():
    p = {"a": Tensor(np.zeros(2), requires_grad=True)}
    p["a"].grad = np.array([3.0, 4.0])
    assert clip_grad_norm(p, 1.0) == pytest.approx(5.0)
    assert np.linalg.norm(p["a"].grad) == pytest.approx(1.0)


def test_training_is_deterministic(setup, tmp_path):
    vocab, cfg, train_set, dev = setup
    outs = []
    for run in range(2):
        m = Model(cfg.replace(embedding="char"), vocab, seed=5)
        log, ckpt = tmp_path / f"log{run}", tmp_path / f"ckpt{run}"
        train(m, train_set, dev, TrainConfig(epochs=2, batch_size=8, seed=5, max_len=20), log, ckpt,
              clock=lambda: 0.0)
        outs.append((log.read_bytes(), ckpt.read_bytes()))
    assert outs[0] == outs[1]
    rows = read_log(tmp_path / "log0")
    assert len(rows) == 2 and all(len(r) == 6 for r in rows)


def test_training_reduces_loss(setup):
    vocab, cfg, train_set, dev = setup
    m = Model(cfg, vocab, seed=0)
    res = train(m, train_set, dev, TrainConfig(epochs=4, batch_size=4, lr=3e-3, max_len=20))
    assert res.history[-1].train_loss < res.history[0].train_loss
    assert res.best_epoch >= 0


def test_rejects_labels_outside_vocab(setup):
    vocab, cfg, train_set, _ = setup
    bad = [Utterance(train_set[0].features, (0, len(vocab) + 3, 1), "x")]
    from caaed.errors import DataError
    with pytest.raises(DataError):
        train(Model(cfg, vocab), bad, [], TrainConfig(epochs=1))
