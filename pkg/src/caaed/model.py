"""Attention-based encoder-decoder with pluggable output-unit embeddings.

Layout conventions: activations are row vectors, weights are stored
[in, out] and applied as ``x @ W``. Encoder, attention and decoder all
share one width ``hidden`` because the attention projections are fixed
identities and the two encoder directions are summed.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, DimensionError
from .tensor import Tensor
from .vocab import CHAR_INVENTORY, Vocab

CKPT_MAGIC = b"CAAEDCKPT"
EMBEDDINGS = ("lookup", "char")


@dataclass
class ModelConfig:
    vocab_size: int
    input_dim: int = 24
    hidden: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    embedding: str = "lookup"
    n_chars: int = len(CHAR_INVENTORY)
    char_dim: int = 16
    char_layers: int = 2
    filter_size: int = 15
    dropout: float = 0.1
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.embedding not in EMBEDDINGS:
            raise ConfigError(f"embedding must be one of {EMBEDDINGS}, got {self.embedding!r}")
        if self.filter_size % 2 == 0:
            raise ConfigError("filter_size must be odd")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        for name in ("vocab_size", "input_dim", "hidden", "encoder_layers", "decoder_layers",
                     "n_chars", "char_dim", "char_layers", "filter_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def full_size(cls, vocab_size: int, encoder_layers: int = 4, embedding: str = "lookup") -> "ModelConfig":
        """Full-size architecture: 240-dim input, 512 units everywhere,
        30 characters embedded in 256 dims, 15-tap location filter."""
        return cls(vocab_size=vocab_size, input_dim=240, hidden=512, encoder_layers=encoder_layers,
                   decoder_layers=2, embedding=embedding, n_chars=30, char_dim=256, char_layers=2,
                   filter_size=15)

    def replace(self, **kw) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **kw})

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, val = (s.strip() for s in line.partition("="))
            if not sep or key not in kinds:
                raise DataError(f"bad model config line {line!r}")
            t = kinds[key]
            values[key] = val if t == "str" else float(val) if t == "float" else int(val)
        return cls(**values)


# ---------------------------------------------------------------------------
# parameter accounting


def gru_params(inp: int, hid: int) -> int:
    return 3 * (hid * (inp + hid) + hid)


def count_parameters(cfg: ModelConfig) -> dict[str, int]:
    """Closed-form parameter counts per component (fixed identity
    projections excluded)."""
    h = cfg.hidden
    enc = sum(2 * gru_params(cfg.input_dim if i == 0 else h, h) for i in range(cfg.encoder_layers))
    counts = {
        "encoder_gru": enc,
        "encoder_layer_norm": 2 * h * cfg.encoder_layers,
        "attention": h + h + h * cfg.filter_size,
        "decoder_gru": sum(gru_params(h, h) for _ in range(cfg.decoder_layers)),
        "output": cfg.vocab_size * h + cfg.vocab_size,
    }
    if cfg.embedding == "lookup":
        counts["embedding_table"] = cfg.vocab_size * h
    else:
        counts["char_table"] = cfg.n_chars * cfg.char_dim
        counts["char_rnn"] = sum(gru_params(cfg.char_dim if i == 0 else h, h)
                                 for i in range(cfg.char_layers))
    counts["total"] = sum(counts.values())
    return counts


def embedding_savings(cfg: ModelConfig) -> int:
    """Parameters saved by composing embeddings from characters instead of a table."""
    lookup = count_parameters(cfg.replace(embedding="lookup"))["total"]
    char = count_parameters(cfg.replace(embedding="char"))["total"]
    return lookup - char


def parameter_reduction_rate(cfg: ModelConfig) -> float:
    lookup = count_parameters(cfg.replace(embedding="lookup"))["total"]
    return 100.0 * embedding_savings(cfg) / lookup


# ---------------------------------------------------------------------------
# building blocks


class GruLayer:
    """One GRU direction; gate blocks are [reset | update | candidate]."""

    def __init__(self, prefix: str, inp: int, hid: int, params: dict, init):
        self.hidden = hid
        self.w_x = params.setdefault(f"{prefix}.w_x", init((inp, 3 * hid), inp))
        self.w_h = params.setdefault(f"{prefix}.w_h", init((hid, 3 * hid), hid))
        self.b = params.setdefault(f"{prefix}.b", init((3 * hid,), 0))

    def step(self, x: Tensor, h: Tensor, mask=None) -> Tensor:
        return T.gru_cell(T.affine(x, self.w_x, self.b), h, self.w_h, mask)

    def run(self, x: Tensor, reverse: bool = False, mask: np.ndarray | None = None) -> Tensor:
        """x: [B, I, in] -> states [B, I, hid]; masked steps carry the state through."""
        batch, steps = x.shape[0], x.shape[1]
        gx = T.affine(x, self.w_x, self.b)
        h = Tensor(np.zeros((batch, self.hidden), dtype=T.get_dtype()))
        outs = [None] * steps
        for t in (reversed(range(steps)) if reverse else range(steps)):
            h = T.gru_cell(gx[:, t], h, self.w_h, None if mask is None else mask[:, t])
            outs[t] = h
        return T.stack(outs, axis=1)


class LookupProvider:
    """Embeddings as rows of a table."""

    def __init__(self, table: Tensor):
        self.table = table

    def embedder(self):
        return lambda ids: T.gather_rows(self.table, ids)

    def embed(self, unit_id: int) -> Tensor:
        return T.gather_rows(self.table, [unit_id]).reshape(-1)


class CharAwareProvider:
    """Embeddings composed by a GRU stack over the unit's characters.

    The recurrence restarts from a zero state for every unit, so a unit's
    embedding depends on nothing but its character ids. Each distinct
    character prefix is evaluated once per ``embedder()`` session.
    """

    def __init__(self, char_table: Tensor, layers: Sequence[GruLayer], unit_chars: Sequence[Sequence[int]]):
        self.char_table = char_table
        self.layers = list(layers)
        self.unit_chars = [tuple(c) for c in unit_chars]

    def prefix_states(self, chars: Sequence[int], cache: dict | None = None) -> list[list[Tensor]]:
        """Per-layer states [1, hid] after each character of ``chars``."""
        cache = {} if cache is None else cache
        states = []
        for n in range(1, len(chars) + 1):
            key = tuple(chars[:n])
            if key not in cache:
                prev = cache[key[:-1]] if n > 1 else None
                x = T.gather_rows(self.char_table, [key[-1]])
                layer_states = []
                for k, layer in enumerate(self.layers):
                    h0 = prev[k] if prev is not None else Tensor(np.zeros((1, layer.hidden), dtype=T.get_dtype()))
                    x = layer.step(x, h0)
                    layer_states.append(x)
                cache[key] = layer_states
            states.append(cache[key])
        return states

    def embedder(self):
        cache: dict = {}
        rows: dict[int, Tensor] = {}

        def embed_ids(ids):
            out = []
            for u in np.asarray(ids).reshape(-1).tolist():
                if u not in rows:
                    if not 0 <= u < len(self.unit_chars):
                        raise DataError(f"invalid unit id {u}")
                    rows[u] = self.prefix_states(self.unit_chars[u], cache)[-1][-1]
                out.append(rows[u])
            return T.concat(out, axis=0)

        return embed_ids

    def embed(self, unit_id: int) -> Tensor:
        return self.embedder()([unit_id]).reshape(-1)


def precompute_table(provider: CharAwareProvider) -> LookupProvider:
    """Freeze a character-aware provider into a lookup table, one row per unit."""
    with T.no_grad():
        table = provider.embedder()(np.arange(len(provider.unit_chars)))
    return LookupProvider(Tensor(table.data.copy()))


# ---------------------------------------------------------------------------
# the model


@dataclass
class Encoded:
    H: Tensor           # [B, I, h]
    H_proj: Tensor      # H W_h + b_z, reused every decoder step
    mask: np.ndarray    # [B, I] bool, True on real frames


@dataclass
class DecoderState:
    s: list             # per-layer [B, h]
    a: Tensor           # [B, I]
    g: Tensor           # [B, h]


class Model:
    def __init__(self, cfg: ModelConfig, vocab: Vocab | None = None, seed: int = 0,
                 unit_chars: Sequence[Sequence[int]] | None = None):
        if vocab is not None:
            if len(vocab) != cfg.vocab_size:
                raise ConfigError(f"vocab size {len(vocab)} != model vocab_size {cfg.vocab_size}")
            unit_chars = vocab.unit_chars
        if cfg.embedding == "char":
            if unit_chars is None:
                raise ConfigError("a character-aware model needs its vocabulary")
            if len(unit_chars) != cfg.vocab_size:
                raise ConfigError("unit_chars must list every unit")
            if max(max(c) for c in unit_chars) >= cfg.n_chars:
                raise ConfigError("unit characters exceed the character table")
        self.cfg = cfg
        self.vocab = vocab
        self.seed = seed
        rng = np.random.default_rng(seed)
        dtype = T.get_dtype()

        def init(shape, fan_in):
            if fan_in == 0:
                data = np.zeros(shape)
            else:
                a = np.sqrt(1.0 / fan_in)
                data = rng.uniform(-a, a, size=shape)
            return Tensor(data.astype(dtype), requires_grad=True)

        def const(shape, value):
            return Tensor(np.full(shape, value, dtype=dtype), requires_grad=True)

        h = cfg.hidden
        p: dict[str, Tensor] = {}
        self.enc_fwd, self.enc_bwd, self.enc_ln = [], [], []
        for i in range(cfg.encoder_layers):
            inp = cfg.input_dim if i == 0 else h
            self.enc_fwd.append(GruLayer(f"enc.{i}.fwd", inp, h, p, init))
            self.enc_bwd.append(GruLayer(f"enc.{i}.bwd", inp, h, p, init))
            gain = p.setdefault(f"enc.{i}.ln.gain", const((h,), 1.0))
            bias = p.setdefault(f"enc.{i}.ln.bias", const((h,), 0.0))
            self.enc_ln.append((gain, bias))
        self.v = p.setdefault("att.v", init((h,), h))
        self.b_z = p.setdefault("att.b_z", init((h,), 0))
        self.F = p.setdefault("att.F", init((h, cfg.filter_size), cfg.filter_size))
        self.dec = [GruLayer(f"dec.{i}", h, h, p, init) for i in range(cfg.decoder_layers)]
        self.w_y = p.setdefault("out.w_y", init((h, cfg.vocab_size), h))
        self.b_y = p.setdefault("out.b_y", init((cfg.vocab_size,), 0))
        if cfg.embedding == "lookup":
            table = p.setdefault("emb.table", init((cfg.vocab_size, h), h))
            self.provider = LookupProvider(table)
        else:
            chars = p.setdefault("emb.chars", init((cfg.n_chars, cfg.char_dim), cfg.char_dim))
            layers = [GruLayer(f"emb.rnn.{i}", cfg.char_dim if i == 0 else h, h, p, init)
                      for i in range(cfg.char_layers)]
            self.provider = CharAwareProvider(chars, layers, unit_chars)
        for name, t in p.items():
            t.name = name
        self.params = p
        eye = np.eye(h, dtype=dtype)
        # fixed identity projections inside the attention score
        self.fixed = {name: Tensor(eye.copy(), name=name) for name in ("att.W_h", "att.W_s", "att.W_f")}
        self.rng = np.random.default_rng(seed + 1)

    # -- introspection -----------------------------------------------------------

    def num_parameters(self) -> int:
        return int(np.sum([t.size for t in self.params.values()]))

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None
        for t in self.fixed.values():
            t.grad = None

    def frozen(self) -> "Model":
        """Copy whose character-aware provider is replaced by its precomputed table."""
        clone = object.__new__(Model)
        clone.__dict__.update(self.__dict__)
        if isinstance(self.provider, CharAwareProvider):
            clone.provider = precompute_table(self.provider)
        return clone

    # -- encoder -------------------------------------------------------------------

    def encode(self, features: Sequence[np.ndarray], train: bool = False,
               rng: np.random.Generator | None = None) -> Encoded:
        cfg = self.cfg
        rng = rng or self.rng
        lengths = [len(f) for f in features]
        if min(lengths) < 1:
            raise DimensionError("cannot encode an empty utterance")
        batch, steps = len(features), max(lengths)
        x = np.zeros((batch, steps, cfg.input_dim), dtype=T.get_dtype())
        for b, f in enumerate(features):
            if f.shape[1] != cfg.input_dim:
                raise ConfigError(f"feature dim {f.shape[1]} != model input_dim {cfg.input_dim}")
            x[b, : len(f)] = f
        mask = np.arange(steps)[None, :] < np.asarray(lengths)[:, None]
        step_mask = None if mask.all() else mask.astype(T.get_dtype())
        h = Tensor(x)
        for i in range(cfg.encoder_layers):
            fwd = self.enc_fwd[i].run(h)
            bwd = self.enc_bwd[i].run(h, reverse=True, mask=step_mask)
            gain, bias = self.enc_ln[i]
            h = T.layer_norm(fwd + bwd, gain, bias, cfg.ln_eps)
            if i + 1 < cfg.encoder_layers:
                h = T.dropout(h, cfg.dropout, train, rng)
        proj = T.matmul(h, self.fixed["att.W_h"])
        proj = proj + T.expand(self.b_z, proj.shape)
        return Encoded(h, proj, mask)

    # -- attention -------------------------------------------------------------------

    def attend(self, s: Tensor, enc: Encoded, a_prev: Tensor) -> tuple[Tensor, Tensor]:
        batch, steps, hid = enc.H.shape
        if a_prev.shape != (batch, steps):
            raise DimensionError(f"a_prev shape {a_prev.shape} != {(batch, steps)}")
        f = T.conv1d_same(a_prev, self.F)                      # [B, I, h]
        fw = T.matmul(f, self.fixed["att.W_f"])
        sw = T.matmul(s, self.fixed["att.W_s"]).reshape(batch, 1, hid)
        e = T.relu(enc.H_proj + T.expand(sw, (batch, steps, hid)) + fw)
        z = T.matmul(e, self.v.reshape(hid, 1)).reshape(batch, steps)
        a = T.softmax(z, enc.mask)
        g = T.matmul(a.reshape(batch, 1, steps), enc.H).reshape(batch, hid)
        return a, g

    # -- decoder -----------------------------------------------------------------------

    def initial_state(self, enc: Encoded) -> DecoderState:
        batch, _, hid = enc.H.shape
        dtype = T.get_dtype()
        a0 = enc.mask / enc.mask.sum(axis=1, keepdims=True)
        zeros = np.zeros((batch, hid), dtype=dtype)
        return DecoderState([Tensor(zeros) for _ in self.dec], Tensor(a0.astype(dtype)), Tensor(zeros))

    def decode_step(self, state: DecoderState, w_prev: Tensor, enc: Encoded, train: bool = False,
                    rng: np.random.Generator | None = None) -> tuple[Tensor, DecoderState]:
        """One output step: returns logits [B, V] and the next state."""
        rng = rng or self.rng
        p = self.cfg.dropout
        if w_prev.shape != state.g.shape:
            raise ConfigError(f"embedding shape {w_prev.shape} != context shape {state.g.shape}")
        x = w_prev + state.g
        new_s = []
        for k, layer in enumerate(self.dec):
            s = layer.step(x, state.s[k])
            new_s.append(s)
            x = T.dropout(s, p, train, rng)
        s_top = new_s[-1]
        a, g = self.attend(s_top, enc, state.a)
        logits = T.affine(T.dropout(s_top + g, p, train, rng), self.w_y, self.b_y)
        return logits, DecoderState(new_s, a, g)

    # -- checkpoints -------------------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        Path(path).write_bytes(dumps_checkpoint(self, extra))


def vocab_digest(vocab: Vocab | None) -> str:
    return "none" if vocab is None else hashlib.sha256(vocab.dumps().encode("utf-8")).hexdigest()[:16]


def dumps_checkpoint(model: Model, extra: dict | None = None) -> bytes:
    meta = model.cfg.to_text() + f"seed = {model.seed}\nvocab_digest = {vocab_digest(model.vocab)}\n"
    for k, v in (extra or {}).items():
        meta += f"{k} = {v}\n"
    meta_b = meta.encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<I", len(meta_b)), meta_b, struct.pack("<I", len(model.params))]
    for name, t in model.params.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(t.data.astype("<f4").tobytes())
    return b"".join(parts)


def loads_checkpoint(blob: bytes, vocab: Vocab | None = None) -> tuple[Model, dict]:
    if not blob.startswith(CKPT_MAGIC):
        raise DataError("not a checkpoint (bad magic)")
    pos = len(CKPT_MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise DataError("checkpoint truncated")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    (meta_len,) = struct.unpack("<I", take(4))
    meta_lines = take(meta_len).decode("utf-8").splitlines()
    cfg_names = {f.name for f in fields(ModelConfig)}
    cfg_text = "\n".join(ln for ln in meta_lines if ln.partition("=")[0].strip() in cfg_names)
    extra = {ln.partition("=")[0].strip(): ln.partition("=")[2].strip()
             for ln in meta_lines if ln.strip() and ln.partition("=")[0].strip() not in cfg_names}
    cfg = ModelConfig.from_text(cfg_text)
    if vocab is not None:
        if len(vocab) != cfg.vocab_size:
            raise DataError(f"vocabulary has {len(vocab)} units but the model expects {cfg.vocab_size}")
        if extra.get("vocab_digest") not in (None, "none", vocab_digest(vocab)):
            raise DataError("vocabulary does not match the one the model was trained with")
    model = Model(cfg, vocab, seed=int(extra.get("seed", 0)))
    (count,) = struct.unpack("<I", take(4))
    seen = set()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        data = np.frombuffer(take(4 * int(np.prod(shape))), dtype="<f4").reshape(shape)
        if name not in model.params:
            raise DataError(f"checkpoint has unknown parameter {name!r}")
        if model.params[name].shape != shape:
            raise DataError(f"parameter {name}: shape {shape} != config shape {model.params[name].shape}")
        model.params[name].data[...] = data
        seen.add(name)
    missing = set(model.params) - seen
    if missing:
        raise DataError(f"checkpoint lacks parameters: {sorted(missing)[:3]}")
    if pos != len(blob):
        raise DataError("trailing bytes after checkpoint")
    return model, extra


def load_model(path, vocab: Vocab | None = None) -> tuple[Model, dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint: {e}") from None
    return loads_checkpoint(blob, vocab)
