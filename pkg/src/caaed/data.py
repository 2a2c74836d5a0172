"""Feature frames, dataset files and a synthetic inflected-language corpus."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .vocab import CHAR_INVENTORY, CHAR_TO_ID, SPACE, Vocab

MAGIC = b"CAAED1"


@dataclass
class Utterance:
    features: np.ndarray  # [I, d_x] float32
    labels: tuple[int, ...]
    transcript: str

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = tuple(int(i) for i in self.labels)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataError(f"features must be a non-empty matrix, got {self.features.shape}")

    def __eq__(self, other):
        return (isinstance(other, Utterance) and self.labels == other.labels
                and self.transcript == other.transcript
                and np.array_equal(self.features, other.features))


def stack_frames(raw: np.ndarray, factor: int = 3) -> np.ndarray:
    """Concatenate each run of ``factor`` frames; the last run is zero-padded."""
    if factor < 1:
        raise ConfigError(f"stacking factor must be >= 1, got {factor}")
    raw = np.asarray(raw)
    n, d = raw.shape
    if n < 1:
        raise DataError("cannot stack an empty frame sequence")
    out_len = math.ceil(n / factor)
    padded = np.zeros((out_len * factor, d), dtype=raw.dtype)
    padded[:n] = raw
    return padded.reshape(out_len, factor * d)


def unstack_frames(stacked: np.ndarray, factor: int, n: int) -> np.ndarray:
    d = stacked.shape[1] // factor
    return stacked.reshape(-1, d)[:n]


# ---------------------------------------------------------------------------
# synthetic language


@dataclass(frozen=True)
class SynthLanguage:
    """Words are stem + suffix; each character sounds like a fixed random
    prototype vector held for ``frames_per_char`` raw frames."""

    stems: tuple[str, ...]
    suffixes: tuple[str, ...]
    d_raw: int = 8
    frames_per_char: int = 2
    noise_std: float = 0.1
    stack: int = 3
    proto_seed: int = 0
    min_words: int = 2
    max_words: int = 6
    suffix_weights: tuple[float, ...] | None = None
    prototypes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for s in self.stems + self.suffixes:
            if any(c not in CHAR_TO_ID for c in s):
                raise ConfigError(f"{s!r} uses characters outside the inventory")
        if not self.stems or not self.suffixes:
            raise ConfigError("need at least one stem and one suffix")
        if self.suffix_weights is not None and (len(self.suffix_weights) != len(self.suffixes)
                                                 or min(self.suffix_weights) <= 0):
            raise ConfigError("suffix_weights needs one positive weight per suffix")
        if not 1 <= self.min_words <= self.max_words:
            raise ConfigError("need 1 <= min_words <= max_words")
        rng = np.random.default_rng(self.proto_seed)
        protos = rng.standard_normal((len(CHAR_INVENTORY), self.d_raw)).astype(np.float32)
        object.__setattr__(self, "prototypes", protos)

    @classmethod
    def default(cls, **kw) -> "SynthLanguage":
        return cls(stems=DEFAULT_STEMS, suffixes=DEFAULT_SUFFIXES, **kw)

    @property
    def words(self) -> list[str]:
        return [s + x for s in self.stems for x in self.suffixes]

    def word_weight(self, word: str) -> float:
        if self.suffix_weights is None:
            return 1.0
        weights = [w for s, x, w in ((s, x, w) for s in self.stems
                                     for x, w in zip(self.suffixes, self.suffix_weights)) if s + x == word]
        return float(np.sum(weights)) if weights else 1.0

    @property
    def input_dim(self) -> int:
        return self.d_raw * self.stack

    def render(self, transcript: str, rng: np.random.Generator) -> np.ndarray:
        """Stacked feature frames for a transcript."""
        ids = []
        for k, word in enumerate(transcript.split()):
            if k:
                ids.append(CHAR_TO_ID[SPACE])
            ids.extend(CHAR_TO_ID[c] for c in word)
        if not ids:
            ids = [CHAR_TO_ID[SPACE]]
        raw = np.repeat(self.prototypes[ids], self.frames_per_char, axis=0)
        if self.noise_std > 0:
            raw = raw + rng.normal(0.0, self.noise_std, raw.shape).astype(np.float32)
        return stack_frames(raw.astype(np.float32), self.stack)


DEFAULT_STEMS = ("talk", "walk", "play", "jump", "paint", "call", "look", "help", "work", "kick")
DEFAULT_SUFFIXES = ("", "s", "ed", "ing")


def synth_transcripts(lang: SynthLanguage, n: int, rng: np.random.Generator,
                      words: Sequence[str] | None = None,
                      required: Sequence[str] = ()) -> list[str]:
    """``n`` lines of ``min_words``..``max_words`` words drawn from ``words``;
    when ``required`` is given every line contains one of them."""
    words = list(words if words is not None else lang.words)
    probs = np.array([lang.word_weight(w) for w in words])
    probs /= probs.sum()
    lines = []
    for _ in range(n):
        k = int(rng.integers(lang.min_words, lang.max_words + 1))
        line = [words[int(i)] for i in rng.choice(len(words), size=k, p=probs)]
        if required:
            line[int(rng.integers(0, k))] = required[int(rng.integers(0, len(required)))]
        lines.append(" ".join(line))
    return lines


def check_holdout(lang: SynthLanguage, holdout: Sequence[tuple[str, str]]) -> list[str]:
    held = set()
    for stem, suffix in holdout:
        if stem not in lang.stems or suffix not in lang.suffixes:
            raise ConfigError(f"holdout pair ({stem!r}, {suffix!r}) is not a word of the language")
        held.add((stem, suffix))
    kept = [(s, x) for s in lang.stems for x in lang.suffixes if (s, x) not in held]
    kept_words = {s + x for s, x in kept}
    for stem, suffix in held:
        if stem + suffix in kept_words:
            raise ConfigError(f"held-out word {stem + suffix!r} is also formed by another pair")
        if not any(s == stem for s, _ in kept):
            raise ConfigError(f"stem {stem!r} never appears in training")
        if not any(x == suffix for _, x in kept):
            raise ConfigError(f"suffix {suffix!r} never appears in training")
    return sorted(kept_words)


def synth_corpus(lang: SynthLanguage, n_train: int, n_test: int,
                 holdout: Sequence[tuple[str, str]] = (), seed: int = 0,
                 vocab: Vocab | None = None) -> tuple[list[Utterance], list[Utterance]]:
    """Train/test utterances; held-out inflections occur only in test, where
    every line contains at least one of them. Labels are filled in when a
    vocabulary is given (else empty)."""
    train_words = check_holdout(lang, holdout)
    held_words = sorted(s + x for s, x in holdout)
    text_rng, train_rng, test_rng = (np.random.default_rng(s)
                                     for s in np.random.SeedSequence(seed).spawn(3))
    train_lines = synth_transcripts(lang, n_train, text_rng, train_words)
    test_lines = synth_transcripts(lang, n_test, text_rng, lang.words if held_words else train_words,
                                   required=held_words)

    def make(lines, rng):
        return [Utterance(lang.render(t, rng), vocab.tokenize(t) if vocab else (), t) for t in lines]

    return make(train_lines, train_rng), make(test_lines, test_rng)


def with_labels(utts: Sequence[Utterance], vocab: Vocab) -> list[Utterance]:
    return [Utterance(u.features, vocab.tokenize(u.transcript), u.transcript) for u in utts]


# ---------------------------------------------------------------------------
# dataset files


def dumps_dataset(utts: Sequence[Utterance]) -> bytes:
    parts = [MAGIC]
    for u in utts:
        frames, dim = u.features.shape
        text = u.transcript.encode("utf-8")
        parts.append(struct.pack("<II", frames, dim))
        parts.append(u.features.astype("<f4").tobytes())
        parts.append(struct.pack("<I", len(u.labels)))
        parts.append(np.asarray(u.labels, dtype="<u4").tobytes())
        parts.append(struct.pack("<I", len(text)))
        parts.append(text)
    return b"".join(parts)


def loads_dataset(blob: bytes, expect_dim: int | None = None) -> list[Utterance]:
    if not blob.startswith(MAGIC):
        raise DataError("not a dataset file (bad magic)")
    pos, out = len(MAGIC), []

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise DataError(f"dataset truncated in record {len(out)}")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        frames, dim = struct.unpack("<II", take(8))
        if frames < 1 or dim < 1:
            raise DataError(f"record {len(out)}: empty feature matrix")
        if expect_dim is not None and dim != expect_dim:
            raise DataError(f"record {len(out)}: feature dim {dim} != expected {expect_dim}")
        feats = np.frombuffer(take(4 * frames * dim), dtype="<f4").reshape(frames, dim)
        (n_labels,) = struct.unpack("<I", take(4))
        labels = np.frombuffer(take(4 * n_labels), dtype="<u4")
        (n_text,) = struct.unpack("<I", take(4))
        try:
            text = take(n_text).decode("utf-8")
        except UnicodeDecodeError:
            raise DataError(f"record {len(out)}: transcript is not UTF-8") from None
        out.append(Utterance(feats.astype(np.float32), labels.tolist(), text))
    return out


def write_dataset(path, utts: Sequence[Utterance]) -> None:
    Path(path).write_bytes(dumps_dataset(utts))


def read_dataset(path, expect_dim: int | None = None) -> list[Utterance]:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read dataset: {e}") from None
    return loads_dataset(blob, expect_dim)


def write_transcripts(path, utts_or_lines) -> None:
    lines = [u.transcript if isinstance(u, Utterance) else u for u in utts_or_lines]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
