"""End-to-end runs on the synthetic corpus: data, vocabulary, both systems."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig
from .data import Utterance, synth_corpus, with_labels
from .decoding import corpus_wer, decode_dataset, word_accuracy
from .model import Model, count_parameters
from .training import TrainResult, train
from .vocab import Corpus, Vocab, build_vocab


@dataclass
class Splits:
    train: list[Utterance]
    dev: list[Utterance]
    test: list[Utterance]
    held_words: list[str]


def make_splits(cfg: ExperimentConfig) -> Splits:
    d = cfg.data
    pairs = d.holdout_pairs()
    train_dev, test = synth_corpus(d.language(), d.n_train + d.n_dev, d.n_test, pairs, seed=d.seed)
    return Splits(train_dev[: d.n_train], train_dev[d.n_train:], test, sorted(s + x for s, x in pairs))


def make_vocab(cfg: ExperimentConfig, train_set) -> Vocab:
    v = cfg.vocab
    corpus = Corpus.from_lines([u.transcript for u in train_set])
    return build_vocab(corpus, v.kind, target_size=v.target_size, freq_threshold=v.freq_threshold)


@dataclass
class SystemResult:
    embedding: str
    n_params: int
    test_wer: float
    held_accuracy: float
    best_dev_wer: float
    epochs_to_target: int | None    # first epoch (1-based) whose dev WER < 0.05
    seconds: float
    history: TrainResult
    model: Model


def run_system(cfg: ExperimentConfig, embedding: str, vocab: Vocab, splits: Splits,
               log_path=None, ckpt_path=None) -> SystemResult:
    """Train one system and score it on the test split."""
    train_set, dev, test = (with_labels(s, vocab) for s in (splits.train, splits.dev, splits.test))
    mcfg = replace(cfg.model, embedding=embedding).build(len(vocab), train_set[0].features.shape[1],
                                                         cfg.train.dropout)
    model = Model(mcfg, vocab, seed=cfg.train.seed)
    start = time.perf_counter()
    result = train(model, train_set, dev, cfg.train, log_path, ckpt_path)
    seconds = time.perf_counter() - start
    refs = [u.transcript for u in test]
    hyps = [h.text for h in decode_dataset(model, [u.features for u in test], cfg.decode.max_len,
                                           cfg.decode.batch_size)]
    reached = [r.epoch + 1 for r in result.history if r.dev_wer < 0.05]
    return SystemResult(embedding, count_parameters(mcfg)["total"], corpus_wer(refs, hyps),
                        word_accuracy(refs, hyps, splits.held_words) if splits.held_words else float("nan"),
                        result.best_wer, reached[0] if reached else None, seconds, result, model)


@dataclass
class PairResult:
    seed: int
    aed: SystemResult
    caaed: SystemResult

    @property
    def relative_wer_change(self) -> float:
        """Relative WER change of CA-AED against AED, in percent (negative = better)."""
        if self.aed.test_wer == 0:
            return 0.0 if self.caaed.test_wer == 0 else float("inf")
        return 100.0 * (self.caaed.test_wer - self.aed.test_wer) / self.aed.test_wer

    @property
    def prr(self) -> float:
        return 100.0 * (self.aed.n_params - self.caaed.n_params) / self.aed.n_params


def run_pair(cfg: ExperimentConfig, seed: int) -> PairResult:
    """Both systems on one seed; only the embedding provider differs."""
    cfg = replace(cfg, data=replace(cfg.data, seed=seed), train=replace(cfg.train, seed=seed))
    splits = make_splits(cfg)
    vocab = make_vocab(cfg, splits.train)
    return PairResult(seed, run_system(cfg, "lookup", vocab, splits), run_system(cfg, "char", vocab, splits))


def summarize(pairs: list[PairResult]) -> dict[str, float]:
    def med(xs):
        return float(np.median(xs))
    return {
        "wer_aed": med([p.aed.test_wer for p in pairs]),
        "wer_caaed": med([p.caaed.test_wer for p in pairs]),
        "held_aed": med([p.aed.held_accuracy for p in pairs]),
        "held_caaed": med([p.caaed.held_accuracy for p in pairs]),
    }
