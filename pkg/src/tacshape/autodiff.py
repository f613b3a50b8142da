"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Graphs are recorded define-by-run: every op appends itself to the implicit
tape through parent links, and `backward` replays the tape in reverse
topological order. Float32 is the working precision; building graphs from
float64 tensors runs the whole pipeline in float64 (gradient tests do this).

Subgradient conventions: ReLU'(0) = 0, sign(0) = 0 for the L1 loss, and
clamp' = 0 on its boundaries. Broadcasting is plain numpy broadcasting with
gradient un-broadcast (sum over expanded axes).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NotScalarError, ParseError, ShapeMismatchError

DEFAULT_DTYPE = np.float32

# When set (by check_gradients), kinked ops append branch-pattern codes here
# so finite-difference probes can detect kink crossings.
_kink_trace: list | None = None


class Tensor:
    """Dense array node of the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _node(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _node(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return _node(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _node(data, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                          _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * np.asarray(c, dtype=a.dtype), (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeMismatchError(f"matmul {ad.shape} @ {bd.shape}")
        return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    if ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise ShapeMismatchError(f"matmul {ad.shape} @ {bd.shape}")
        return _node(ad @ bd, (a, b), lambda g: (g @ bd.transpose(0, 2, 1),
                                                 ad.transpose(0, 2, 1) @ g))
    if ad.ndim == 3 and bd.ndim == 2:
        if ad.shape[2] != bd.shape[0]:
            raise ShapeMismatchError(f"matmul {ad.shape} @ {bd.shape}")
        return _node(ad @ bd, (a, b), lambda g: (g @ bd.T,
                                                 np.einsum("bik,bij->kj", ad, g)))
    raise ShapeMismatchError(f"unsupported matmul ranks {ad.ndim} @ {bd.ndim}")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    if _kink_trace is not None:
        _kink_trace.append(mask.copy())
    return _node(np.where(mask, a.data, np.zeros(1, dtype=a.dtype)), (a,),
                 lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def sin(a: Tensor) -> Tensor:
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a: Tensor) -> Tensor:
    return _node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data > lo) & (a.data < hi)
    if _kink_trace is not None:
        code = np.zeros(a.data.shape, dtype=np.int8)
        code[a.data >= hi] = 2
        code[inside] = 1
        _kink_trace.append(code)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, tuple(tensors), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather a[idx]; the gradient scatter-adds into the source rows."""
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), vjp)


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference (scalar)."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"l1_loss {a.shape} vs {b.shape}")
    diff = a.data - b.data
    sign = np.sign(diff)
    if _kink_trace is not None:
        _kink_trace.append(sign.astype(np.int8))
    n = diff.size
    data = np.asarray(np.mean(np.abs(diff), dtype=np.float64), dtype=a.dtype)

    def vjp(g):
        gs = (g * sign / n).astype(a.dtype)
        return (gs, -gs)

    return _node(data, (a, b), vjp)


def sumsq(a: Tensor) -> Tensor:
    """Sum of squared entries (scalar)."""
    data = np.asarray(np.sum(np.square(a.data, dtype=np.float64)), dtype=a.dtype)
    return _node(data, (a,), lambda g: (g * 2.0 * a.data,))


def mean_all(a: Tensor) -> Tensor:
    data = np.asarray(np.mean(a.data, dtype=np.float64), dtype=a.dtype)
    n = a.data.size
    return _node(data, (a,), lambda g: (np.broadcast_to(g / n, a.data.shape).astype(a.dtype),))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor, params: list[Tensor] | None = None) -> None:
    """Reverse-mode gradients of a scalar into every reachable tensor's .grad.

    Parameters in `params` that do not reach the loss get explicit zero
    gradients (they are simply absent from the graph).
    """
    if loss.data.size != 1:
        raise NotScalarError(f"backward needs a scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            node.grad = g if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if params is not None:
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_param(param: np.ndarray, lr: float = 1e-3, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return AdamState(np.zeros_like(param, dtype=np.float64),
                         np.zeros_like(param, dtype=np.float64),
                         0, lr, beta1, beta2, eps)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update; mutates state, returns new parameter."""
    if param.shape != grad.shape:
        raise ShapeMismatchError(f"adam_step {param.shape} vs {grad.shape}")
    state.step += 1
    g = grad.astype(np.float64)
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    mhat = state.m / (1.0 - state.beta1 ** state.step)
    vhat = state.v / (1.0 - state.beta2 ** state.step)
    return (param.astype(np.float64) - state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(param.dtype)


class Adam:
    """Adam over parameter groups; each group is (tensors, learning rate)."""

    def __init__(self, groups: list[tuple[list[Tensor], float]],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.groups = []
        for tensors, lr in groups:
            states = [AdamState.for_param(t.data, lr, beta1, beta2, eps) for t in tensors]
            self.groups.append((list(tensors), states))

    def set_lr(self, factor: float) -> None:
        for _, states in self.groups:
            for s in states:
                s.lr *= factor

    def step(self) -> None:
        for tensors, states in self.groups:
            for t, s in zip(tensors, states):
                if t.grad is not None:
                    t.data = adam_step(t.data, t.grad, s)

    def zero_grad(self) -> None:
        for tensors, _ in self.groups:
            for t in tensors:
                t.grad = None


# ---------------------------------------------------------------------------
# gradient verification


def check_gradients(fn, tensors: list[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    `fn()` must rebuild and return the scalar loss from the given tensors.
    Coordinates whose ±h probes change any kink branch (ReLU / clamp / L1
    sign) are skipped; run with float64 tensors for meaningful tolerances.
    """
    global _kink_trace

    loss = fn()
    for t in tensors:
        t.grad = None
    backward(loss, params=tensors)

    def probe(t, i, delta):
        global _kink_trace
        flat = t.data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + delta
        _kink_trace = []
        try:
            val = float(fn().data)
            trace = _kink_trace
        finally:
            _kink_trace = None
            flat[i] = orig
        return val, trace

    worst = 0.0
    for t in tensors:
        if not t.requires_grad:
            continue
        grad = t.grad.reshape(-1) if t.grad is not None else np.zeros(t.data.size)
        for i in range(t.data.size):
            fp, trace_p = probe(t, i, +h)
            fm, trace_m = probe(t, i, -h)
            if len(trace_p) != len(trace_m) or any(
                    not np.array_equal(a, b) for a, b in zip(trace_p, trace_m)):
                continue  # kink crossed between probes
            fd = (fp - fm) / (2.0 * h)
            a = float(grad[i])
            denom = max(abs(a), abs(fd), 1e-6)
            worst = max(worst, abs(a - fd) / denom)
    return worst


# ---------------------------------------------------------------------------
# parameter checkpoint format "TPRM" (little-endian): magic, u32 version=1,
# u32 tensor count; per tensor: u32 name length + UTF-8 name, u32 rank,
# rank x u64 dims, float32 data.

_MAGIC = b"TPRM"
_VERSION = 1


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            a = np.asarray(arr, dtype="<f4")  # asarray keeps 0-d shapes intact
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(a.tobytes())


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ParseError(f"{path}: bad checkpoint magic")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ParseError(f"{path}: unsupported checkpoint version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(dims)
            out[name] = data.astype(np.float32)
    return out


def he_normal(rng: np.random.Generator, fan_in: int, shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return (rng.normal(scale=np.sqrt(2.0 / fan_in), size=shape)).astype(dtype)
