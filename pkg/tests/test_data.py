import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caaed.data import (SynthLanguage, Utterance, dumps_dataset, loads_dataset, read_dataset,
                        stack_frames, synth_corpus, unstack_frames, write_dataset)
from caaed.errors import ConfigError, DataError
from caaed.vocab import Corpus, build_wordpiece


def test_stack_exact_fit():
    raw = np.arange(6).reshape(3, 2)
    assert np.array_equal(stack_frames(raw), [[0, 1, 2, 3, 4, 5]])


def test_stack_padding():
    raw = np.arange(8).reshape(4, 2) + 1
    out = stack_frames(raw)
    assert out.shape == (2, 6)
    assert np.array_equal(out[1], [7, 8, 0, 0, 0, 0])


def test_stack_full_size_dims():
    assert stack_frames(np.zeros((100, 80)), 3).shape[1] == 240


def test_stack_bad_factor():
    with pytest.raises(ConfigError):
        stack_frames(np.zeros((3, 2)), 0)


@given(st.integers(1, 40), st.integers(1, 5), st.integers(1, 5))
@settings(max_examples=50, deadline=None)
def test_stack_unstack(n, d, factor):
    raw = np.random.default_rng(n).standard_normal((n, d))
    out = stack_frames(raw, factor)
    assert out.shape[0] == -(-n // factor)
    assert np.array_equal(unstack_frames(out, factor, n), raw)


def test_render_deterministic_without_noise():
    lang = SynthLanguage.default(noise_std=0.0)
    a = lang.render("talks walk", np.random.default_rng(1))
    b = lang.render("talks walk", np.random.default_rng(2))
    assert np.array_equal(a, b)
    assert a.shape == (-(-2 * 10 // 3), 24)


def test_holdout_excluded_from_train():
    lang = SynthLanguage.default()
    train, test = synth_corpus(lang, 300, 50, [("talk", "s")], seed=3)
    assert not any("talks" in u.transcript.split() for u in train)
    assert all("talks" in u.transcript.split() for u in test)
    train_words = {w for u in train for w in u.transcript.split()}
    assert "talked" in train_words and "walks" in train_words


def test_holdout_unsatisfiable():
    lang = SynthLanguage(stems=("cat", "dog"), suffixes=("", "s"))
    with pytest.raises(ConfigError):
        synth_corpus(lang, 10, 10, [("cat", "s"), ("dog", "s")], seed=0)
    with pytest.raises(ConfigError):
        synth_corpus(lang, 10, 10, [("cow", "s")], seed=0)


def test_synth_seeded():
    lang = SynthLanguage.default()
    a = synth_corpus(lang, 20, 5, [("play", "ed")], seed=11)
    b = synth_corpus(lang, 20, 5, [("play", "ed")], seed=11)
    assert dumps_dataset(a[0] + a[1]) == dumps_dataset(b[0] + b[1])
    c = synth_corpus(lang, 20, 5, [("play", "ed")], seed=12)
    assert dumps_dataset(a[0]) != dumps_dataset(c[0])


def test_word_counts():
    lang = SynthLanguage.default()
    train, _ = synth_corpus(lang, 100, 0, seed=0)
    assert all(2 <= len(u.transcript.split()) <= 6 for u in train)


@pytest.fixture
def utts():
    lang = SynthLanguage.default()
    vocab = build_wordpiece(Corpus.from_lines(["talk walks played"] * 3), 30)
    train, _ = synth_corpus(lang, 7, 0, seed=5, vocab=vocab)
    return train


def test_dataset_round_trip(tmp_path, utts):
    path = tmp_path / "d.bin"
    write_dataset(path, utts)
    back = read_dataset(path)
    assert back == utts
    assert dumps_dataset(back) == path.read_bytes()
    assert back[0].labels[0] == 0


def test_dataset_truncated(utts):
    blob = dumps_dataset(utts)
    with pytest.raises(DataError):
        loads_dataset(blob[:-3])
    with pytest.raises(DataError):
        loads_dataset(b"XXXXXX" + blob[6:])


def test_dataset_dim_mismatch(utts):
    blob = bytearray(dumps_dataset(utts[:1]))
    blob[10:14] = (7).to_bytes(4, "little")  # corrupt d_x in the header
    with pytest.raises(DataError):
        loads_dataset(bytes(blob))
    with pytest.raises(DataError):
        loads_dataset(dumps_dataset(utts), expect_dim=99)


def test_utterance_validates():
    with pytest.raises(DataError):
        Utterance(np.zeros((0, 3)), (), "")
