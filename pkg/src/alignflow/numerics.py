"""Dense float64 tensors with reverse-mode differentiation.

Everything above this module (alignment likelihoods, coupling flows, the
duration GAN, the text encoder) is built on the small op set here. Design
choices worth knowing:

- float64 only; finite-difference gradient checks need the precision and
  nothing here is performance-critical.
- The tape is per-computation: each forward op records its parents and a
  vector-Jacobian closure on the output tensor, and ``backward`` walks that
  graph once. Gradients accumulate only into leaves (tensors you created
  directly, typically parameters).
- Any op producing NaN/Inf from finite inputs raises ``NumericError``
  immediately instead of letting the poison spread.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested op."""


class NumericError(ArithmeticError):
    """An op produced a non-finite value."""


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """A numpy float64 array plus optional participation in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Copy of the value with no tape linkage."""
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; scalars and ndarrays are wrapped as constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self):
        """Populate ``grad`` on every requires_grad leaf reachable from this scalar.

        Repeated calls without ``zero_grad`` accumulate. Raises ``ShapeError``
        if called on a non-scalar.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward() needs a scalar loss, got shape {self.data.shape}"
            )
        topo = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not _wants_grad(parent):
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _wants_grad(t: Tensor) -> bool:
    return t.requires_grad or t._vjp is not None


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative DFS; training graphs routinely exceed Python's recursion limit
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and _wants_grad(p):
                stack.append((p, False))
    return order


def ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced a non-finite value")
    out = Tensor(data)
    if any(_wants_grad(p) for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / broadcasting ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    return _make(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not broadcast")
    return _make(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
        "div",
    )


def neg(a) -> Tensor:
    a = ensure_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = ensure_tensor(a)
    p = float(p)
    with np.errstate(over="ignore"):
        data = a.data**p
    return _make(data, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def exp(a) -> Tensor:
    a = ensure_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,), "exp")


def log(a) -> Tensor:
    a = ensure_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return _make(data, (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = ensure_tensor(a)
    data = np.tanh(a.data)
    return _make(data, (a,), lambda g: (g * (1.0 - data * data),), "tanh")


def sigmoid(a) -> Tensor:
    a = ensure_tensor(a)
    with np.errstate(over="ignore"):
        data = 1.0 / (1.0 + np.exp(-a.data))
    return _make(data, (a,), lambda g: (g * data * (1.0 - data),), "sigmoid")


def relu(a) -> Tensor:
    a = ensure_tensor(a)
    data = np.maximum(a.data, 0.0)
    return _make(data, (a,), lambda g: (g * (a.data > 0.0),), "relu")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = ensure_tensor(a)
    data = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)
    return _make(data, (a,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")
    data = a.data @ b.data
    return _make(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(a) -> Tensor:
    a = ensure_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape) -> Tensor:
    a = ensure_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [ensure_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(ts), vjp, "concat")


def _getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data)
    shape = a.shape

    def vjp(g):
        buf = np.zeros(shape)
        buf[idx] += g  # basic indexing never aliases, so += is exact
        return (buf,)

    return _make(data.copy(), (a,), vjp, "getitem")


def take_rows(table, ids) -> Tensor:
    """Row gather (embedding lookup); gradient scatter-adds into the table."""
    table = ensure_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"take_rows expects a 2-D table, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"take_rows: ids outside [0, {table.shape[0]}): {ids.min()}..{ids.max()}"
        )
    data = table.data[ids]

    def vjp(g):
        buf = np.zeros(table.shape)
        np.add.at(buf, ids, g)
        return (buf,)

    return _make(data, (table,), vjp, "take_rows")


# ---------------------------------------------------------------------------
# reductions and normalizations
# ---------------------------------------------------------------------------


def summation(a, axis=None) -> Tensor:
    a = ensure_tensor(a)
    data = a.data.sum(axis=axis)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(data), (a,), vjp, "sum")


def mean(a, axis=None) -> Tensor:
    a = ensure_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return summation(a, axis=axis) * (1.0 / n)


def mse(a, b) -> Tensor:
    """Mean squared error over all elements."""
    a, b = ensure_tensor(a), ensure_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    d = sub(a, b)
    return mean(mul(d, d))


def softmax(a, axis: int = -1) -> Tensor:
    a = ensure_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - inner),)

    return _make(data, (a,), vjp, "softmax")


def layer_norm(a, axis: int = -1, eps: float = 1e-8) -> Tensor:
    """Normalize to zero mean, unit variance along ``axis`` (no learned affine)."""
    a = ensure_tensor(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = xc * inv
    n = a.shape[axis]

    def vjp(g):
        g_mean = g.mean(axis=axis, keepdims=True)
        gy_mean = (g * data).mean(axis=axis, keepdims=True)
        return (inv * (g - g_mean - data * gy_mean),)

    return _make(data, (a,), vjp, "layer_norm")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv1d(x, w) -> Tensor:
    """1-D convolution over the last axis, stride 1, same-padding.

    x: (C_in, L), w: (C_out, C_in, K) -> (C_out, L). Padding is zeros,
    (K-1)//2 on the left and the remainder on the right.
    """
    x, w = ensure_tensor(x), ensure_tensor(w)
    if x.ndim != 2 or w.ndim != 3:
        raise ShapeError(f"conv1d expects x (C,L) and w (O,C,K), got {x.shape}, {w.shape}")
    cin, length = x.shape
    cout, cin_w, k = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv1d: x has {cin} channels but kernel expects {cin_w}")
    pl = (k - 1) // 2
    pr = k - 1 - pl
    xp = np.pad(x.data, ((0, 0), (pl, pr)))
    windows = np.stack([xp[:, i : i + length] for i in range(k)], axis=1)  # (C,K,L)
    data = np.einsum("ock,ckl->ol", w.data, windows)

    def vjp(g):
        gw = np.einsum("ol,ckl->ock", g, windows)
        gxp = np.zeros_like(xp)
        for i in range(k):
            gxp[:, i : i + length] += np.einsum("oc,ol->cl", w.data[:, :, i], g)
        return (gxp[:, pl : pl + length], gw)

    return _make(data, (x, w), vjp, "conv1d")


# ---------------------------------------------------------------------------
# seeded randomness
# ---------------------------------------------------------------------------


class Rng:
    """Seeded PCG64 stream (numpy's documented generator).

    The same seed yields the same stream across runs and platforms as long as
    calls happen in the same order. ``child`` derives an independent stream
    deterministically, so separate concerns (corpus sampling, alignment noise,
    GAN noise) never perturb each other's sequences.
    """

    def __init__(self, seed: int, _entropy=None):
        self.seed = int(seed)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(_entropy if _entropy is not None else self.seed))
        )

    def normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None):
        out = self._gen.integers(low, high, size=shape)
        return int(out) if shape is None else out

    def child(self, tag: int) -> "Rng":
        return Rng(self.seed, _entropy=(self.seed, int(tag)))


def init_uniform(rng: Rng, shape, fan_in: int, requires_grad: bool = True) -> Tensor:
    """Parameter init: uniform in [-k, k], k = 1/sqrt(fan_in)."""
    k = 1.0 / math.sqrt(max(1, fan_in))
    return Tensor(rng.uniform(-k, k, shape), requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


@contextmanager
def frozen(params):
    """Temporarily drop params out of gradient accumulation.

    Must stay in effect through ``backward`` — the tape checks requires_grad
    at backward time, not at op creation.
    """
    params = list(params)
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamWConfig:
    """Adam with decoupled weight decay; defaults follow the training recipe
    used throughout this project (lr decays by 0.999^(1/8) per epoch)."""

    lr: float = 2e-4
    beta1: float = 0.8
    beta2: float = 0.99
    weight_decay: float = 0.01
    eps: float = 1e-9
    lr_decay: float = 0.999 ** (1 / 8)

    def build(self, params) -> "AdamW":
        return AdamW(
            params,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            weight_decay=self.weight_decay,
            eps=self.eps,
            lr_decay=self.lr_decay,
        )


class AdamW:
    def __init__(
        self,
        params,
        lr: float = 2e-4,
        beta1: float = 0.8,
        beta2: float = 0.99,
        weight_decay: float = 0.01,
        eps: float = 1e-9,
        lr_decay: float = 0.999 ** (1 / 8),
    ):
        self.params = [p for p in params if p.requires_grad]
        self.lr0 = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.lr_decay = lr_decay
        self.epoch = 0
        self.t = 0
        self._m = [np.zeros(p.shape) for p in self.params]
        self._v = [np.zeros(p.shape) for p in self.params]

    @property
    def lr(self) -> float:
        return self.lr0 * self.lr_decay**self.epoch

    def set_epoch(self, epoch: int):
        self.epoch = int(epoch)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        """One update; params whose grad is unset are skipped."""
        self.t += 1
        lr = self.lr
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            # decoupled weight decay, then the Adam step
            p.data -= lr * self.weight_decay * p.data
            m[:] = self.beta1 * m + (1.0 - self.beta1) * g
            v[:] = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------


def check_grad(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must be a deterministic tensor-to-scalar function. Error per
    coordinate is |analytic - numeric| / max(1, |numeric|); the max over
    coordinates is returned (0 means perfect agreement).
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise ShapeError(f"check_grad: f must return a scalar, got {out.shape}")
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros(probe.shape)

    worst = 0.0
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += h
        fp = float(f(Tensor(bumped.reshape(x.shape))).data)
        bumped[i] -= 2 * h
        fm = float(f(Tensor(bumped.reshape(x.shape))).data)
        numeric = (fp - fm) / (2.0 * h)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
