"""Teacher-forced training with scheduled sampling and label smoothing."""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import Utterance
from .decoding import MAX_LEN, corpus_wer, decode_dataset
from .errors import ConfigError, DataError, NumericError
from .model import Model
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    batch_size: int = 16
    epochs: int = 30
    ss_start: float = 0.0
    ss_end: float = 0.4
    ss_ramp_epochs: int = 0           # 0 -> first half of training
    label_smoothing: float = 0.1
    dropout: float = 0.1
    seed: int = 0
    max_len: int = MAX_LEN
    eval_every: int = 1
    shuffle: bool = True
    target_wer: float = 0.0           # stop once dev WER falls below this; 0 never stops

    def __post_init__(self):
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError("label_smoothing must be in [0, 1)")
        if not 0 <= self.ss_start <= self.ss_end <= 0.4:
            raise ConfigError("need 0 <= ss_start <= ss_end <= 0.4")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")

    def sampling_prob(self, epoch: int) -> float:
        """Linear ramp from ss_start to ss_end, held at ss_end afterwards."""
        ramp = self.ss_ramp_epochs or max(1, self.epochs // 2)
        frac = min(1.0, max(0, epoch) / ramp)
        return min(self.ss_end, self.ss_start + (self.ss_end - self.ss_start) * frac)


# ---------------------------------------------------------------------------
# objective


def smoothed_ce(logits: Tensor, targets: np.ndarray, eps: float, mask: np.ndarray | None = None) -> Tensor:
    """Masked mean over steps of the cross-entropy against a smoothed target:
    1-eps on the reference unit, eps/(V-1) on each other unit."""
    if not 0 <= eps < 1:
        raise ConfigError(f"label smoothing must be in [0, 1), got {eps}")
    targets = np.asarray(targets)
    vocab = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ConfigError(f"targets {targets.shape} do not match logits {logits.shape}")
    if mask is None:
        mask = np.ones(targets.shape, dtype=bool)
    dtype = T.get_dtype()
    off = eps / (vocab - 1) if vocab > 1 else 0.0
    q = np.full(logits.shape, off, dtype=dtype)
    np.put_along_axis(q, targets[..., None], 1.0 - eps if vocab > 1 else 1.0, axis=-1)
    weight = mask.astype(dtype)[..., None] / max(1, int(mask.sum()))
    return -T.sum(T.log_softmax(logits) * Tensor(q * weight))


# ---------------------------------------------------------------------------
# forward pass


def pad_labels(utts: Sequence[Utterance], fill: int) -> tuple[np.ndarray, np.ndarray]:
    lengths = [len(u.labels) for u in utts]
    labels = np.full((len(utts), max(lengths)), fill, dtype=np.int64)
    for b, u in enumerate(utts):
        labels[b, : len(u.labels)] = u.labels
    mask = np.arange(labels.shape[1])[None, :] < np.asarray(lengths)[:, None]
    return labels, mask


def forward_batch(model: Model, utts: Sequence[Utterance], sampling_p: float = 0.0,
                  rng: np.random.Generator | None = None, train: bool = False,
                  eps: float = 0.0) -> tuple[Tensor, Tensor]:
    """Encode, then decode every reference step; returns logits [B, T-1, V] and loss.

    The decoder input at step t is the reference unit y_{t-1}, or with
    probability ``sampling_p`` (drawn per utterance and step) the argmax
    prediction of step t-1.
    """
    vocab = model.vocab
    eos = vocab.eos if vocab is not None else 1
    for u in utts:
        if len(u.labels) < 2:
            raise DataError(f"utterance {u.transcript!r} has no labels")
    rng = rng if rng is not None else np.random.default_rng(0)
    labels, mask = pad_labels(utts, eos)
    enc = model.encode([u.features for u in utts], train=train, rng=rng)
    state = model.initial_state(enc)
    embed = model.provider.embedder()
    prev = labels[:, 0]
    steps = []
    for t in range(1, labels.shape[1]):
        logits, state = model.decode_step(state, embed(prev), enc, train=train, rng=rng)
        steps.append(logits)
        prev = labels[:, t]
        if sampling_p > 0:
            pred = logits.data.argmax(axis=-1)
            coin = rng.random(len(utts)) < sampling_p
            prev = np.where(coin, pred, prev)
    logits = T.stack(steps, axis=1)
    loss = smoothed_ce(logits, labels[:, 1:], eps, mask[:, 1:])
    return logits, loss


def forward_utterance(model: Model, utt: Utterance, sampling_p: float = 0.0,
                      rng: np.random.Generator | None = None, train: bool = False,
                      eps: float = 0.0) -> tuple[Tensor, Tensor]:
    logits, loss = forward_batch(model, [utt], sampling_p, rng, train, eps)
    return logits.reshape(logits.shape[1:]), loss


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    def __init__(self, params: dict[str, Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            update = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = float(np.sqrt(np.sum([np.sum(np.square(g, dtype=np.float64)) for g in grads])))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return norm


def train_step(model: Model, opt: Adam, batch: Sequence[Utterance], cfg: TrainConfig,
               sampling_p: float, rng: np.random.Generator) -> float:
    model.zero_grad()
    with T.Tape():
        _, loss = forward_batch(model, batch, sampling_p, rng, train=True, eps=cfg.label_smoothing)
        value = float(loss.item())
        if not np.isfinite(value):
            raise NumericError(f"non-finite training loss ({value})")
        T.backward(loss)
    clip_grad_norm(model.params, cfg.clip_norm)
    opt.step()
    return value


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_wer: float
    sampling_p: float
    wall: float

    def line(self) -> str:
        return (f"{self.epoch}\t{self.train_loss:.6f}\t{self.dev_loss:.6f}\t{self.dev_wer:.6f}"
                f"\t{self.sampling_p:.4f}\t{self.wall:.2f}")


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_wer: float = float("inf")


def evaluate(model: Model, dev: Sequence[Utterance], cfg: TrainConfig) -> tuple[float, float]:
    if not dev:
        return float("nan"), float("nan")
    losses, weights = [], []
    with T.no_grad():
        for i in range(0, len(dev), cfg.batch_size):
            batch = dev[i:i + cfg.batch_size]
            _, loss = forward_batch(model, batch, 0.0, None, train=False, eps=cfg.label_smoothing)
            losses.append(float(loss.item()))
            weights.append(sum(len(u.labels) - 1 for u in batch))
    hyps = decode_dataset(model, [u.features for u in dev], cfg.max_len, cfg.batch_size)
    dev_wer = corpus_wer([u.transcript for u in dev], [h.text for h in hyps])
    return float(np.average(losses, weights=weights)), dev_wer


def train(model: Model, train_set: Sequence[Utterance], dev_set: Sequence[Utterance],
          cfg: TrainConfig, log_path=None, ckpt_path=None, clock=time.perf_counter) -> TrainResult:
    """Mini-batch Adam with global-norm clipping; keeps the best-dev parameters."""
    if model.vocab is not None:
        bad = [u for u in list(train_set) + list(dev_set) if any(i >= len(model.vocab) for i in u.labels)]
        if bad:
            raise DataError("dataset labels exceed the model vocabulary")
    model.cfg.dropout = cfg.dropout
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps)
    result = TrainResult()
    best = None
    order = np.arange(len(train_set))
    logf = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            start = clock()
            p = cfg.sampling_prob(epoch)
            if cfg.shuffle:
                order = rng.permutation(len(train_set))
            losses = []
            for i in range(0, len(order), cfg.batch_size):
                batch = [train_set[j] for j in order[i:i + cfg.batch_size]]
                losses.append(train_step(model, opt, batch, cfg, p, rng))
            evaluate_now = (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs
            dev_loss, dev_wer = evaluate(model, dev_set, cfg) if evaluate_now else (float("nan"),) * 2
            rec = EpochRecord(epoch, float(np.mean(losses)) if losses else float("nan"),
                              dev_loss, dev_wer, p, clock() - start)
            result.history.append(rec)
            log.info("epoch %d loss %.4f dev_loss %.4f dev_wer %.4f p %.3f",
                     epoch, rec.train_loss, dev_loss, dev_wer, p)
            if logf:
                logf.write(rec.line() + "\n")
                logf.flush()
            if evaluate_now and dev_set and dev_wer < result.best_wer:
                result.best_wer, result.best_epoch = dev_wer, epoch
                best = {k: t.data.copy() for k, t in model.params.items()}
                if ckpt_path:
                    model.save(ckpt_path, {"epoch": epoch})
            if evaluate_now and dev_wer < cfg.target_wer:
                break
    finally:
        if logf:
            logf.close()
    if best is not None:
        for k, data in best.items():
            model.params[k].data[...] = data
    elif ckpt_path:
        model.save(ckpt_path, {"epoch": cfg.epochs - 1})
    return result


def clone_model(model: Model) -> Model:
    return copy.deepcopy(model)


def read_log(path) -> list[list[str]]:
    return [line.split("\t") for line in Path(path).read_text().splitlines()]
