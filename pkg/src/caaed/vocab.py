"""Output-unit inventories: word pieces, mixed units and plain characters.

A ``Vocab`` maps unit strings to ids and keeps, for every unit, the ids of
its characters in a fixed character inventory (what the character-aware
embedding reads). Special tokens are single atomic characters.
"""
from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, DataError

SOS, EOS, SPACE, UNK = "<sos>", "<eos>", "<space>", "<unk>"
SPECIALS = (SOS, EOS, SPACE, UNK)
LETTERS = tuple("abcdefghijklmnopqrstuvwxyz'")
CHAR_INVENTORY = SPECIALS + LETTERS
CHAR_TO_ID = {c: i for i, c in enumerate(CHAR_INVENTORY)}
KINDS = ("word-piece", "mixed-unit", "character")


@dataclass(frozen=True)
class Corpus:
    lines: tuple[str, ...]
    freqs: dict[str, int] = field(compare=False, hash=False)

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Corpus":
        clean = tuple(" ".join(line.split()) for line in lines)
        freqs = Counter(w for line in clean for w in line.split())
        for w in freqs:
            bad = set(w) - set(LETTERS)
            if bad:
                raise DataError(f"word {w!r} has characters outside the inventory: {sorted(bad)}")
        return cls(clean, dict(freqs))

    @classmethod
    def read(cls, path) -> "Corpus":
        return cls.from_lines(Path(path).read_text(encoding="utf-8").splitlines())


@dataclass
class Vocab:
    kind: str
    units: list[str]
    merges: list[tuple[str, str]] = field(default_factory=list)
    decomp: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown vocab kind {self.kind!r}")
        if len(set(self.units)) != len(self.units):
            raise DataError("duplicate units in vocabulary")
        for s in SPECIALS:
            if s not in self.units:
                raise DataError(f"vocabulary lacks {s}")
        self.unit_to_id = {u: i for i, u in enumerate(self.units)}
        self.unit_chars = [self._chars_of(u) for u in self.units]
        self.char_inventory = CHAR_INVENTORY
        self.sos, self.eos = self.unit_to_id[SOS], self.unit_to_id[EOS]
        self.space, self.unk = self.unit_to_id[SPACE], self.unit_to_id[UNK]
        self._merge_rank = {pair: i for i, pair in enumerate(self.merges)}
        self._whole_words = {w for w, seg in self.decomp.items() if seg == (w,)}
        self._cache: dict[str, tuple[int, ...]] = {}

    @staticmethod
    def _chars_of(unit: str) -> tuple[int, ...]:
        if unit in SPECIALS:
            return (CHAR_TO_ID[unit],)
        try:
            return tuple(CHAR_TO_ID[c] for c in unit)
        except KeyError as e:
            raise DataError(f"unit {unit!r} has a character outside the inventory: {e}") from None

    def __len__(self):
        return len(self.units)

    @property
    def size(self) -> int:
        return len(self.units)

    def __eq__(self, other):
        return (isinstance(other, Vocab) and self.kind == other.kind and self.units == other.units
                and self.merges == other.merges and self.decomp == other.decomp)

    # -- segmentation ---------------------------------------------------------

    def segment(self, word: str) -> tuple[int, ...]:
        """Unit ids for a single word (no boundary tokens)."""
        if word not in self._cache:
            if self.kind == "word-piece":
                pieces = self._apply_merges(word)
            elif self.kind == "mixed-unit":
                pieces = self.decomp.get(word) or self._decompose_unseen(word)
            else:
                pieces = list(word)
            self._cache[word] = tuple(self.unit_to_id.get(p, self.unk) for p in pieces)
        return self._cache[word]

    def _apply_merges(self, word: str) -> list[str]:
        parts = list(word)
        while len(parts) > 1:
            ranked = [(self._merge_rank.get((a, b)), i) for i, (a, b) in enumerate(zip(parts, parts[1:]))]
            ranked = [(r, i) for r, i in ranked if r is not None]
            if not ranked:
                break
            rank = min(ranked)[0]
            pair = self.merges[rank]
            merged, i = [], 0
            while i < len(parts):
                if i + 1 < len(parts) and (parts[i], parts[i + 1]) == pair:
                    merged.append(parts[i] + parts[i + 1])
                    i += 2
                else:
                    merged.append(parts[i])
                    i += 1
            parts = merged
        return parts

    def _decompose_unseen(self, word: str) -> list[str]:
        out = []
        for piece in greedy_decompose(word, self._whole_words):
            out.extend([piece] if piece in self.unit_to_id else list(piece))
        return out

    # -- public mapping --------------------------------------------------------

    def tokenize(self, line: str) -> list[int]:
        ids = [self.sos]
        for k, word in enumerate(line.split()):
            if k:
                ids.append(self.space)
            ids.extend(self.segment(word))
        ids.append(self.eos)
        return ids

    def detokenize(self, ids: Sequence[int]) -> str:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.units):
                raise DataError(f"invalid unit id {i}")
            if i in (self.sos, self.eos):
                continue
            out.append(" " if i == self.space else self.units[i])
        return "".join(out)

    def char_ids(self, unit_id: int) -> tuple[int, ...]:
        if not 0 <= unit_id < len(self.units):
            raise DataError(f"invalid unit id {unit_id}")
        return self.unit_chars[unit_id]

    # -- serialisation ----------------------------------------------------------

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write(f"{self.kind}\t{len(self.units)}\n")
        for i, (u, chars) in enumerate(zip(self.units, self.unit_chars)):
            buf.write(f"{i}\t{u}\t{' '.join(map(str, chars))}\n")
        if self.kind == "word-piece":
            buf.write("#merges\n")
            for a, b in self.merges:
                buf.write(f"{a} {b}\n")
        elif self.kind == "mixed-unit":
            buf.write("#decomp\n")
            for word, seg in self.decomp.items():
                buf.write(f"{word}\t{' '.join(seg)}\n")
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str) -> "Vocab":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        try:
            kind, size = lines[0].split("\t")
            size = int(size)
        except (IndexError, ValueError):
            raise DataError("malformed vocabulary header") from None
        if len(lines) < 1 + size:
            raise DataError("vocabulary file truncated")
        units = []
        for k, line in enumerate(lines[1:1 + size]):
            parts = line.split("\t")
            if len(parts) != 3 or parts[0] != str(k):
                raise DataError(f"malformed vocabulary line {k + 2}: {line!r}")
            units.append(parts[1])
        rest = lines[1 + size:]
        merges, decomp = [], {}
        if rest:
            tag, body = rest[0], rest[1:]
            if tag == "#merges":
                merges = [tuple(b.split(" ")) for b in body]
                if any(len(m) != 2 for m in merges):
                    raise DataError("malformed merge line")
            elif tag == "#decomp":
                for b in body:
                    word, _, seg = b.partition("\t")
                    decomp[word] = tuple(seg.split(" "))
            else:
                raise DataError(f"unknown vocabulary section {tag!r}")
        vocab = cls(kind, units, merges, decomp)
        for k, line in enumerate(lines[1:1 + size]):
            chars = tuple(int(c) for c in line.split("\t")[2].split())
            if chars != vocab.unit_chars[k]:
                raise DataError(f"character ids of unit {k} do not match its string")
        return vocab

    @classmethod
    def load(cls, path) -> "Vocab":
        try:
            return cls.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise DataError(f"cannot read vocabulary: {e}") from None


# ---------------------------------------------------------------------------
# builders


def _base_units(corpus: Corpus) -> list[str]:
    chars = sorted({c for w in corpus.freqs for c in w}, key=CHAR_TO_ID.get)
    return list(SPECIALS) + chars


def build_character(corpus: Corpus | None = None) -> Vocab:
    units = list(SPECIALS) + (list(LETTERS) if corpus is None else _base_units(corpus)[len(SPECIALS):])
    return Vocab("character", units)


def count_pairs(words: dict[tuple[str, ...], int]) -> Counter:
    pairs: Counter = Counter()
    for parts, f in words.items():
        for a, b in zip(parts, parts[1:]):
            pairs[(a, b)] += f
    return pairs


def build_wordpiece(corpus: Corpus, target_size: int) -> Vocab:
    """Greedy most-frequent-pair merging within words.

    Ties go to the lexicographically smallest merged string (then the
    smallest pair). Stops at ``target_size`` units or when no pair occurs
    at least twice.
    """
    if not corpus.freqs:
        raise DataError("empty corpus")
    units = _base_units(corpus)
    if target_size < len(units):
        raise ConfigError(f"target_size {target_size} below base inventory {len(units)}")
    words = {tuple(w): f for w, f in corpus.freqs.items()}
    known = set(units)
    merges = []
    while len(units) < target_size:
        pairs = count_pairs(words)
        if not pairs:
            break
        (a, b), best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0][0] + kv[0][1], kv[0]))
        if best < 2:
            break
        merges.append((a, b))
        if a + b not in known:
            known.add(a + b)
            units.append(a + b)
        words = {_merge_word(parts, a, b): f for parts, f in words.items()}
    return Vocab("word-piece", units, merges)


def _merge_word(parts, a, b):
    out, i = [], 0
    while i < len(parts):
        if i + 1 < len(parts) and parts[i] == a and parts[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(parts[i])
            i += 1
    return tuple(out)


def greedy_decompose(word: str, whole_words: Iterable[str]) -> list[str]:
    """Split ``word`` by longest-prefix matches against ``whole_words``;
    unmatched stretches become leftover spans."""
    whole = set(whole_words)
    lengths = sorted({len(w) for w in whole}, reverse=True)
    out, leftover, i = [], "", 0
    while i < len(word):
        match = next((word[i:i + n] for n in lengths if word[i:i + n] in whole), None)
        if match is None:
            leftover += word[i]
            i += 1
            continue
        if leftover:
            out.append(leftover)
            leftover = ""
        out.append(match)
        i += len(match)
    if leftover:
        out.append(leftover)
    return out


def build_mixed_units(corpus: Corpus, freq_threshold: int) -> Vocab:
    """Frequent words as whole units; infrequent words split greedily into
    frequent words plus leftover spans, which join the inventory."""
    if not corpus.freqs:
        raise DataError("empty corpus")
    if freq_threshold < 1:
        raise ConfigError("freq_threshold must be >= 1")
    frequent = sorted(w for w, f in corpus.freqs.items() if f >= freq_threshold)
    units = _base_units(corpus)
    known = set(units)
    for w in frequent:
        if w not in known:
            known.add(w)
            units.append(w)
    decomp = {}
    for word in sorted(corpus.freqs):
        seg = tuple(greedy_decompose(word, frequent)) if corpus.freqs[word] < freq_threshold else (word,)
        decomp[word] = seg
        for piece in seg:
            if piece not in known:
                known.add(piece)
                units.append(piece)
    return Vocab("mixed-unit", units, decomp=decomp)


def build_vocab(corpus: Corpus, kind: str, target_size: int = 0, freq_threshold: int = 2) -> Vocab:
    if kind == "word-piece":
        return build_wordpiece(corpus, target_size)
    if kind == "mixed-unit":
        return build_mixed_units(corpus, freq_threshold)
    if kind == "character":
        return build_character(corpus)
    raise ConfigError(f"unknown vocab kind {kind!r}")
