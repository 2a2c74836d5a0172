"""Greedy inference and word error rate."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .model import CharAwareProvider, Model

MAX_LEN = 200


@dataclass
class Hypothesis:
    ids: list[int]                      # emitted units, <eos> included when reached
    logprobs: list[float] = field(default_factory=list)
    text: str = ""
    capped: bool = False


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def greedy_decode_batch(model: Model, features: Sequence[np.ndarray], max_len: int = MAX_LEN,
                        on_the_fly: bool = False) -> list[Hypothesis]:
    """Argmax decoding from <sos> until <eos> or ``max_len`` units.

    Character-aware models decode from a precomputed embedding table unless
    ``on_the_fly`` is set.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    vocab = model.vocab
    sos = vocab.sos if vocab is not None else 0
    eos = vocab.eos if vocab is not None else 1
    if not on_the_fly and isinstance(model.provider, CharAwareProvider):
        model = model.frozen()
    batch = len(features)
    hyps = [Hypothesis([]) for _ in range(batch)]
    done = np.zeros(batch, dtype=bool)
    with T.no_grad():
        enc = model.encode(features, train=False)
        state = model.initial_state(enc)
        embed = model.provider.embedder()
        prev = np.full(batch, sos)
        for _ in range(max_len):
            logits, state = model.decode_step(state, embed(prev), enc, train=False)
            logp = _log_softmax(logits.data.astype(np.float64))
            pred = logits.data.argmax(axis=-1)  # first maximum = lowest id on ties
            for b in np.flatnonzero(~done):
                hyps[b].ids.append(int(pred[b]))
                hyps[b].logprobs.append(float(logp[b, pred[b]]))
            done |= pred == eos
            if done.all():
                break
            prev = np.where(done, eos, pred)
    for b, h in enumerate(hyps):
        h.capped = not done[b]
        if vocab is not None:
            h.text = vocab.detokenize(h.ids)
    return hyps


def greedy_decode(model: Model, features: np.ndarray, max_len: int = MAX_LEN,
                  on_the_fly: bool = False) -> Hypothesis:
    return greedy_decode_batch(model, [features], max_len, on_the_fly)[0]


def decode_dataset(model: Model, features: Sequence[np.ndarray], max_len: int = MAX_LEN,
                   batch_size: int = 32, on_the_fly: bool = False) -> list[Hypothesis]:
    if not on_the_fly and isinstance(model.provider, CharAwareProvider):
        model = model.frozen()
    out = []
    for i in range(0, len(features), batch_size):
        out.extend(greedy_decode_batch(model, features[i:i + batch_size], max_len, on_the_fly))
    return out


# ---------------------------------------------------------------------------
# word error rate


@dataclass(frozen=True)
class WerResult:
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> float:
        return self.errors / max(1, self.ref_words)

    def __iter__(self):
        return iter((self.substitutions, self.deletions, self.insertions, self.rate))


def align(ref: Sequence[str], hyp: Sequence[str]) -> tuple[int, int, int]:
    """Minimum-edit alignment counts (S, D, I) with unit costs."""
    n, m = len(ref), len(hyp)
    # cost[i][j] = (total, subs, dels, ins); ties prefer fewer insertions+deletions
    prev = [(j, 0, 0, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, i, 0)]
        for j in range(1, m + 1):
            d = prev[j - 1]
            if ref[i - 1] == hyp[j - 1]:
                diag = d
            else:
                diag = (d[0] + 1, d[1] + 1, d[2], d[3])
            up = prev[j]
            left = cur[j - 1]
            cur.append(min(diag,
                           (up[0] + 1, up[1], up[2] + 1, up[3]),
                           (left[0] + 1, left[1], left[2], left[3] + 1),
                           key=lambda c: (c[0], c[2] + c[3])))
        prev = cur
    _, s, dels, ins = prev[m]
    return s, dels, ins


def aligned_pairs(ref: Sequence[str], hyp: Sequence[str]) -> list[tuple[str | None, str | None]]:
    """One minimum-edit alignment as (ref word, hyp word) pairs; None marks a gap."""
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost[i, j] = min(cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]),
                             cost[i - 1, j] + 1, cost[i, j - 1] + 1)
    pairs, i, j = [], n, m
    while i or j:
        if i and j and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            pairs.append((ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i and cost[i, j] == cost[i - 1, j] + 1:
            pairs.append((ref[i - 1], None))
            i -= 1
        else:
            pairs.append((None, hyp[j - 1]))
            j -= 1
    return pairs[::-1]


def word_accuracy(refs: Sequence[str], hyps: Sequence[str], targets) -> float:
    """Fraction of reference occurrences of ``targets`` recognised exactly."""
    targets = set(targets)
    hit = total = 0
    for r, h in zip(refs, hyps):
        for rw, hw in aligned_pairs(r.split(), h.split()):
            if rw in targets:
                total += 1
                hit += rw == hw
    return hit / total if total else float("nan")


def wer(ref: str, hyp: str) -> WerResult:
    r, h = ref.split(), hyp.split()
    s, d, i = align(r, h)
    return WerResult(s, d, i, len(r))


def corpus_wer(refs: Sequence[str], hyps: Sequence[str]) -> float:
    results = [wer(r, h) for r, h in zip(refs, hyps)]
    return sum(x.errors for x in results) / max(1, sum(x.ref_words for x in results))


def write_hypotheses(path, refs: Sequence[str], hyps: Sequence[str]) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for k, (r, h) in enumerate(zip(refs, hyps)):
            fh.write(f"{k}\t{wer(r, h).rate:.6f}\t{r}\t{h}\n")


def read_hypotheses(path) -> list[tuple[int, float, str, str]]:
    from .errors import DataError
    rows = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"hypothesis file line {n + 1}: expected 4 fields")
        rows.append((int(parts[0]), float(parts[1]), parts[2], parts[3]))
    return rows
