"""Experiment configuration files: INI-style sections of ``key = value``.

Sections are [data], [vocab], [model], [train] and [decode]. Every key has a
default except the two seeds (``data.seed`` and ``train.seed``), which a file
must state explicitly. Unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import DEFAULT_STEMS, DEFAULT_SUFFIXES, SynthLanguage
from .errors import ConfigError, DataError
from .model import ModelConfig
from .training import TrainConfig

REQUIRED = {("data", "seed"), ("train", "seed")}


@dataclass
class DataSection:
    seed: int = 0
    n_train: int = 200
    n_dev: int = 40
    n_test: int = 60
    stems: str = ",".join(DEFAULT_STEMS)
    suffixes: str = ",".join(DEFAULT_SUFFIXES)   # leading empty entry is the bare stem
    suffix_weights: str = ""
    holdout: str = ""                            # e.g. "talk+s, look+ed"
    d_raw: int = 8
    frames_per_char: int = 2
    noise_std: float = 0.1
    stack: int = 3
    proto_seed: int = 0

    def language(self) -> SynthLanguage:
        weights = tuple(float(w) for w in _split(self.suffix_weights)) or None
        suffixes = tuple(x.strip() for x in self.suffixes.split(","))
        return SynthLanguage(stems=tuple(_split(self.stems)), suffixes=suffixes,
                             d_raw=self.d_raw, frames_per_char=self.frames_per_char,
                             noise_std=self.noise_std, stack=self.stack, proto_seed=self.proto_seed,
                             suffix_weights=weights)

    def holdout_pairs(self) -> list[tuple[str, str]]:
        pairs = []
        for item in _split(self.holdout):
            stem, sep, suffix = item.partition("+")
            if not sep:
                raise ConfigError(f"holdout entry {item!r} must look like stem+suffix")
            pairs.append((stem, suffix))
        return pairs


@dataclass
class VocabSection:
    kind: str = "word-piece"
    target_size: int = 40
    freq_threshold: int = 25


@dataclass
class ModelSection:
    hidden: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    embedding: str = "lookup"
    char_dim: int = 16
    char_layers: int = 2
    filter_size: int = 15

    def build(self, vocab_size: int, input_dim: int, dropout: float) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, input_dim=input_dim, hidden=self.hidden,
                           encoder_layers=self.encoder_layers, decoder_layers=self.decoder_layers,
                           embedding=self.embedding, char_dim=self.char_dim,
                           char_layers=self.char_layers, filter_size=self.filter_size, dropout=dropout)


@dataclass
class DecodeSection:
    max_len: int = 200
    batch_size: int = 32


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    vocab: VocabSection = field(default_factory=VocabSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeSection = field(default_factory=DecodeSection)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"malformed config: {str(e).splitlines()[0]}") from None
        sections = {f.name: f for f in fields(cls)}
        for name in parser.sections():
            if name not in sections:
                raise ConfigError(f"unknown config section [{name}]")
        for sec, key in sorted(REQUIRED):
            if not parser.has_option(sec, key):
                raise ConfigError(f"config must set {sec}.{key} explicitly")
        built = {}
        for name, f in sections.items():
            kind = f.default_factory
            values = dict(parser.items(name)) if parser.has_section(name) else {}
            built[name] = _build(kind, values, name)
        return cls(**built)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise DataError(f"cannot read config: {e}") from None
        return cls.loads(text)

    def dumps(self) -> str:
        out = []
        for f in fields(self):
            out.append(f"[{f.name}]")
            section = getattr(self, f.name)
            out.extend(f"{g.name} = {getattr(section, g.name)}" for g in fields(section))
            out.append("")
        return "\n".join(out)


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _convert(raw: str, kind: str, where: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from None
    return raw.strip()


def _build(kind, values: dict, section: str):
    types = {f.name: f.type for f in fields(kind)}
    kwargs = {}
    for key, raw in values.items():
        if key not in types:
            raise ConfigError(f"unknown key {section}.{key}")
        kwargs[key] = _convert(raw, types[key], f"{section}.{key}")
    try:
        return kind(**kwargs)
    except ConfigError as e:
        raise ConfigError(f"[{section}] {e}") from None
