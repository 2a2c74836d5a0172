"""Dense tensors with a recorded tape for reverse-mode differentiation.

Every primitive computes its result with numpy and, when any input
requires a gradient, appends a node with its backward rule to the active
tape. ``backward(loss)`` replays that tape in reverse.

Broadcasting in the elementwise ops is restricted to exact shapes and
scalars; row-wise bias addition goes through ``affine`` and explicit
replication through ``expand``.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, NumericError, UsageError

_DTYPES = {32: np.float32, 64: np.float64}
_state = threading.local()


def _st():
    if not hasattr(_state, "bits"):
        _state.bits = 32
        _state.grad_enabled = True
        _state.tapes = [Tape()]
    return _state


def set_precision(bits: int) -> None:
    if bits not in _DTYPES:
        raise ConfigError(f"precision must be 32 or 64, got {bits}")
    _st().bits = bits


def get_precision() -> int:
    return _st().bits


def get_dtype():
    return _DTYPES[_st().bits]


@contextmanager
def precision(bits: int):
    old = get_precision()
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(old)


@contextmanager
def no_grad():
    st = _st()
    old = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = old


def grad_enabled() -> bool:
    return _st().grad_enabled


class Node:
    __slots__ = ("name", "inputs", "output", "backward_fn", "tape", "index")

    def __init__(self, name, inputs, output, backward_fn, tape, index):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.tape = tape
        self.index = index


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended as they execute, so the list is already in
    topological order. A tape is consumed by ``backward``.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _st().tapes.append(self)
        return self

    def __exit__(self, *exc):
        _st().tapes.pop()
        return False

    def record(self, name, inputs, output, backward_fn):
        node = Node(name, inputs, output, backward_fn, self, len(self.nodes))
        self.nodes.append(node)
        return node

    def clear(self):
        self.nodes = []


def active_tape() -> Tape:
    return _st().tapes[-1]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tape_node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        dtype = get_dtype()
        if isinstance(data, np.ndarray) and data.dtype == dtype:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape_node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _not_scalar(t):
    raise UsageError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(name: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    result = Tensor(out)
    if _st().grad_enabled and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result.tape_node = active_tape().record(name, tuple(inputs), result, backward_fn)
    return result


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor reaching loss."""
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor requiring grad")
    seed = np.ones_like(loss.data)
    node = loss.tape_node
    if node is None:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    tape = node.tape
    if node.index >= len(tape.nodes) or tape.nodes[node.index] is not node:
        raise UsageError("loss is not on an active tape (already consumed?)")

    pending: dict[int, np.ndarray] = {id(loss): seed}
    leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
    for n in reversed(tape.nodes[: node.index + 1]):
        g = pending.pop(id(n.output), None)
        if g is None:
            continue
        n.output.grad = g
        input_grads = n.backward_fn(g)
        for inp, ig in zip(n.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if inp.tape_node is None:
                if key in leaves:
                    leaves[key] = (inp, leaves[key][1] + ig)
                else:
                    leaves[key] = (inp, ig)
            elif key in pending:
                pending[key] = pending[key] + ig
            else:
                pending[key] = ig
    for t, g in leaves.values():
        g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
        t.grad = g if t.grad is None else t.grad + g
    tape.clear()


# ---------------------------------------------------------------------------
# elementwise


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, a) if a.requires_grad else None,
                            _unbroadcast(g * ad, b) if b.requires_grad else None))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _make("relu", np.where(pos, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * pos,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make("tanh", y, (x,), lambda g: (g * (1 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _make("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ConfigError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# shape and indexing


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def expand(x: Tensor, shape) -> Tensor:
    """Replicate ``x`` to ``shape`` (numpy broadcast rules, leading axes added)."""
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise DimensionError(f"expand: cannot broadcast {x.shape} to {shape}") from None
    lead = len(shape) - x.ndim
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(x.shape) if n == 1 and shape[i + lead] != 1)

    def bw(g):
        return (g.sum(axis=axes).reshape(x.shape),)

    return _make("expand", np.ascontiguousarray(out), (x,), bw)


def index_select(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make("index", np.ascontiguousarray(out), (x,), bw)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Rows of a 2-D table, ``table[ids]``; repeated ids accumulate gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2-D table, got {table.shape}")
    return index_select(table, ids)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]
    return _make("concat", out, xs, lambda g: tuple(np.split(g, bounds, axis=ax)))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise DimensionError(f"stack: mismatched shapes {sorted(shapes)}")
    out = np.stack([x.data for x in xs], axis=axis)
    ax = axis % out.ndim
    return _make("stack", out, xs,
                 lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(xs))))


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    shape = x.shape
    out = x.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make("sum", np.asarray(out), (x,), bw)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2-D operands, a batched left operand with a 2-D right
    operand (weights shared over the batch), or two equal-batch 3-D stacks."""
    a, b = as_tensor(a), as_tensor(b)
    ok = a.ndim >= 2 and b.ndim >= 2 and a.shape[-1] == b.shape[-2]
    if ok and b.ndim == 3:
        ok = a.ndim == 3 and a.shape[0] == b.shape[0]
    if not ok or b.ndim > 3:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make("matmul", ad @ bd, (a, b), bw)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with the bias vector added to every row."""
    if w.ndim != 2 or b.shape != (w.shape[1],) or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"affine: x{x.shape} w{w.shape} b{b.shape}")
    xd, wd = x.data, w.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.reshape(-1, xd.shape[-1]).T @ g2 if w.requires_grad else None
        return gx, gw, g2.sum(axis=0)

    return _make("affine", xd @ wd + b.data, (x, w, b), bw)


# ---------------------------------------------------------------------------
# normalisations


def _check_finite(x: np.ndarray, op: str):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{op}: non-finite input")


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; entries where ``mask`` is False get zero mass."""
    x = as_tensor(x)
    if x.size == 0:
        raise DimensionError("softmax of an empty tensor")
    xd = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError(f"softmax mask {mask.shape} vs input {x.shape}")
        _check_finite(xd[mask], "softmax")
        xd = np.where(mask, xd, -np.inf)
    else:
        _check_finite(xd, "softmax")
    shifted = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("softmax", y, (x,), bw)


def log_softmax(x: Tensor) -> Tensor:
    x = as_tensor(x)
    _check_finite(x.data, "log_softmax")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", y, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    n = x.shape[-1]
    if n < 2:
        raise DimensionError("layer_norm needs at least 2 features")
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(f"layer_norm: x{x.shape} gain{gain.shape} bias{bias.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centred = xd - mu
    inv = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv
    gd = gain.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gd
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make("layer_norm", xhat * gd + bias.data, (x, gain, bias), bw)


def dropout(x: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: identity in eval mode, scale survivors by 1/(1-p) in train mode."""
    if not 0 <= p < 1:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x
    if rng is None:
        raise UsageError("train-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1 - p)
    return _make("dropout", x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# sequence primitives


def conv1d_same(signal: Tensor, filt: Tensor) -> Tensor:
    """Correlate each row of ``signal`` [..., I] with every filter row.

    ``filt`` is [channels, r] (or [r] for one channel) with odd r; the signal is
    zero-padded by (r-1)/2 at both ends so the output is [..., I, channels].
    """
    signal = as_tensor(signal)
    filt = as_tensor(filt)
    w = filt.data if filt.ndim == 2 else filt.data[None, :]
    r = w.shape[1]
    if r % 2 == 0:
        raise ConfigError(f"conv1d_same needs an odd filter length, got {r}")
    pad = (r - 1) // 2
    length = signal.shape[-1]
    widths = [(0, 0)] * (signal.ndim - 1) + [(pad, pad)]
    padded = np.pad(signal.data, widths)
    windows = sliding_window_view(padded, r, axis=-1)  # [..., I, r]
    out = windows @ w.T

    def bw(g):
        gw = None
        if filt.requires_grad:
            gw = g.reshape(-1, g.shape[-1]).T @ windows.reshape(-1, r)
            gw = gw.reshape(filt.shape)
        gs = None
        if signal.requires_grad:
            gwin = g @ w  # [..., I, r]
            gpad = np.zeros_like(padded)
            for j in range(r):
                gpad[..., j:j + length] += gwin[..., j]
            gs = gpad[..., pad:pad + length]
        return gs, gw

    return _make("conv1d_same", out, (signal, filt), bw)


def gru_cell(gx: Tensor, h: Tensor, w_h: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """One GRU step given the precomputed input projection ``gx`` = x W_x + b.

    Column blocks of ``gx`` and ``w_h`` are [reset | update | candidate]:
        r, z = sigmoid(gx_rz + h W_rz)
        n = tanh(gx_n + (r * h) W_n)
        h' = (1 - z) * n + z * h
    Rows where ``mask`` is 0 keep their previous state.
    """
    hid = h.shape[-1]
    if gx.shape[-1] != 3 * hid or w_h.shape != (hid, 3 * hid) or gx.shape[:-1] != h.shape[:-1]:
        raise DimensionError(f"gru_cell: gx{gx.shape} h{h.shape} w_h{w_h.shape}")
    gxd, hd, wd = gx.data, h.data, w_h.data
    w_rz, w_n = wd[:, : 2 * hid], wd[:, 2 * hid:]
    rz = _sigmoid(gxd[..., : 2 * hid] + hd @ w_rz)
    r, z = rz[..., :hid], rz[..., hid:]
    rh = r * hd
    n = np.tanh(gxd[..., 2 * hid:] + rh @ w_n)
    new = n + z * (hd - n)
    if mask is not None:
        m = np.asarray(mask, dtype=hd.dtype).reshape(hd.shape[:-1] + (1,))
        out = hd + m * (new - hd)
    else:
        m = None
        out = new

    def bw(g):
        if m is not None:
            g_keep = g * (1 - m)
            g = g * m
        dn = g * (1 - z)
        dz = g * (hd - n)
        dh = g * z
        da_n = dn * (1 - n * n)
        drh = da_n @ w_n.T
        dh = dh + drh * r
        dr = drh * hd
        da_rz = np.concatenate([dr * r * (1 - r), dz * z * (1 - z)], axis=-1)
        dh = dh + da_rz @ w_rz.T
        if m is not None:
            dh = dh + g_keep
        dgx = np.concatenate([da_rz, da_n], axis=-1)
        h2 = hd.reshape(-1, hid)
        dw = np.concatenate([h2.T @ da_rz.reshape(-1, 2 * hid),
                             rh.reshape(-1, hid).T @ da_n.reshape(-1, hid)], axis=1)
        return dgx, dh, dw

    return _make("gru_cell", out, (gx, h, w_h), bw)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[..., Tensor], x, step: float = 1e-5,
               max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    ``x`` is one tensor or a sequence of tensors; ``f`` is called with no
    arguments if ``x`` is a sequence, else with ``x``. Relative error per
    coordinate is |a - n| / max(1, |a|, |n|). ``max_coords`` subsamples
    coordinates per tensor (seeded).
    """
    return max(grad_check_report(f, x, step, max_coords, seed).values(), default=0.0)


def grad_check_report(f, x, step=1e-5, max_coords=None, seed=0) -> dict[str, float]:
    if get_precision() != 64:
        raise UsageError("grad_check requires 64-bit precision")
    single = isinstance(x, Tensor)
    xs = [x] if single else list(x)

    def call():
        return f(x) if single else f()

    for t in xs:
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)
        t.grad = None
    with Tape():
        loss = call()
        if not np.all(np.isfinite(loss.data)):
            raise NumericError("grad_check: non-finite loss")
        backward(loss)
    rng = np.random.default_rng(seed)
    report = {}
    for k, t in enumerate(xs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        with no_grad():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + step
                up = float(call().data.sum())
                flat[i] = orig - step
                down = float(call().data.sum())
                flat[i] = orig
                num = (up - down) / (2 * step)
                ana = float(analytic.reshape(-1)[i])
                if not (np.isfinite(num) and np.isfinite(ana)):
                    raise NumericError("grad_check: non-finite gradient")
                worst = max(worst, abs(ana - num) / max(1.0, abs(ana), abs(num)))
        report[t.name or f"x{k}"] = worst
    return report
