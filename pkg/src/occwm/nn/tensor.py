"""Float32 tensors with reverse-mode autodiff.

Every op records its parents and a backward closure on the output node; a
Tape linearizes the subgraph reaching a root in topological order and runs
each closure exactly once, accumulating (summing) gradients into shared
parents. Data buffers are numpy float32 throughout.
"""

from __future__ import annotations

import contextlib

import numpy as np

Array = np.ndarray

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference / data prep)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _f32(x) -> Array:
    return np.asarray(x, dtype=np.float32)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _f32(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self.name = name

    # ---- basic introspection ----

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, grad={self.requires_grad}{tag})"

    # ---- graph plumbing ----

    def _accum(self, g: Array) -> None:
        if self.grad is None:
            self.grad = g.astype(np.float32, copy=True)
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, seed: Array | None = None) -> None:
        Tape(self).backward(seed)

    # ---- operators ----

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, pow_scalar(other, -1.0))
        return mul(self, 1.0 / other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


class Tape:
    """Topologically ordered record of the ops reaching a root tensor.

    Backward traverses the reversed order, visiting each node exactly once.
    """

    def __init__(self, root: Tensor):
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.root = root
        self.nodes = order  # inputs before the ops that consume them

    def backward(self, seed: Array | None = None) -> None:
        if seed is None:
            seed = np.ones_like(self.root.data)
        else:
            seed = _f32(seed)
        self.root._accum(seed)
        for node in reversed(self.nodes):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


def _node(data: Array, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward_fn = backward_fn
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---- elementwise & broadcast arithmetic ----


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _node(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _node(out_data, (a, b), bwd)


def pow_scalar(a, p: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data**p

    def bwd(g):
        a._accum(g * p * a.data ** (p - 1))

    return _node(out_data, (a,), bwd)


def texp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        a._accum(g * out_data)

    return _node(out_data, (a,), bwd)


def tlog(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        a._accum(g / a.data)

    return _node(out_data, (a,), bwd)


def ttanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        a._accum(g * (1.0 - out_data * out_data))

    return _node(out_data, (a,), bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        a._accum(g * (a.data > 0.0))

    return _node(out_data, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def bwd(g):
        a._accum(g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), bwd)


_GELU_C = np.float32(np.sqrt(2.0 / np.pi))


def gelu(a) -> Tensor:
    """tanh-approximated GELU (smooth, so finite differences behave)."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + np.float32(0.044715) * x2 * x))
    out_data = np.float32(0.5) * x * (1.0 + t)

    def bwd(g):
        di = _GELU_C * (1.0 + np.float32(3 * 0.044715) * x2)
        a._accum(g * (np.float32(0.5) * (1.0 + t) + np.float32(0.5) * x * (1.0 - t * t) * di))

    return _node(out_data, (a,), bwd)


def detach(a: Tensor) -> Tensor:
    return Tensor(a.data)


# ---- shape ops ----


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    out_data = a.data.reshape(shape)

    def bwd(g):
        a._accum(g.reshape(old))

    return _node(out_data, (a,), bwd)


def transpose(a: Tensor, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    out_data = a.data.transpose(axes)

    def bwd(g):
        a._accum(g.transpose(inv))

    return _node(out_data, (a,), bwd)


def stack_cols(tensors) -> Tensor:
    """Stack 1-d tensors of equal length into an (N, C) matrix."""
    ts = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in ts], axis=1)

    def bwd(g):
        for c, t in enumerate(ts):
            if t.requires_grad:
                t._accum(g[:, c])

    return _node(out_data, tuple(ts), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, s, e in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(s), int(e))
                t._accum(g[tuple(sl)])

    return _node(out_data, tuple(ts), bwd)


# ---- reductions ----


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float32)

    def bwd(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.shape).astype(np.float32))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape).astype(np.float32))

    return _node(out_data, (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        n = a.shape[axis]
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def tmax(a: Tensor, axis: int, keepdims=False) -> Tensor:
    """Max along one axis; gradient routes to the first argmax."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out_data = np.squeeze(out_data, axis=axis)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), g, axis=axis)
        a._accum(ga)

    return _node(out_data, (a,), bwd)


# ---- matmul (2-d or identically-batched, with 2-d broadcast on either side) ----


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accum(_unbroadcast(gb, b.shape))

    return _node(out_data, (a, b), bwd)


# ---- gathers ----


def gather_rows(table: Tensor, idx) -> Tensor:
    """table[idx] for a 1-d int index array; backward scatter-adds."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    out_data = table.data[idx]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        table._accum(gt)

    return _node(out_data, (table,), bwd)


def select_columns(a: Tensor, idx) -> Tensor:
    """out[i] = a[i, idx[i]] for a 2-d tensor."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.shape[0])
    out_data = a.data[rows, idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, idx), g)
        a._accum(ga)

    return _node(out_data, (a,), bwd)


def masked_pool_max(points: Tensor, valid: Array) -> Tensor:
    """Max over axis 1 of a (P, M, F) tensor restricted to valid points.

    Rows with no valid point pool to zero; the gradient routes to the first
    argmax among valid points of each group.
    """
    points = as_tensor(points)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != points.shape[:2]:
        raise ValueError("valid mask must be (P, M)")
    filled = np.where(valid[:, :, None], points.data, np.float32(-np.inf))
    idx = np.argmax(filled, axis=1)  # (P, F)
    pooled = np.take_along_axis(filled, idx[:, None, :], axis=1)[:, 0, :]
    nonempty = valid.any(axis=1)
    out_data = np.where(nonempty[:, None], pooled, np.float32(0.0)).astype(np.float32)

    def bwd(g):
        gp = np.zeros_like(points.data)
        rows = np.nonzero(nonempty)[0]
        if rows.size:
            cols = np.arange(points.shape[2])
            # (row, argmax, feature) triples are unique, so fancy += is safe
            gp[rows[:, None], idx[rows], cols[None, :]] += g[rows]
        points._accum(gp)

    return _node(out_data, (points,), bwd)


# ---- composed neural ops ----


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = np.max(a.data, axis=axis, keepdims=True)  # constant shift
    e = texp(add(a, -m))
    return mul(e, pow_scalar(tsum(e, axis=axis, keepdims=True), -1.0))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = add(a, -m)
    return add(shifted, mul(tlog(tsum(texp(shifted), axis=axis, keepdims=True)), -1.0))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = tmean(x, axis=-1, keepdims=True)
    xc = add(x, mul(mu, -1.0))
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    inv = pow_scalar(add(var, eps), -0.5)
    return add(mul(mul(xc, inv), gain), bias)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: Array | None = None) -> Tensor:
    """softmax(q k^T / sqrt(dh) + log(mask)) v for a single (T, dh) head.

    mask is a boolean (T, T) matrix, True = may attend; masked logits get
    -inf so their weights underflow to exactly zero.
    """
    dh = q.shape[-1]
    scores = mul(matmul(q, swap_last(k)), 1.0 / np.sqrt(dh))
    if mask is not None:
        addmask = np.where(mask, np.float32(0.0), np.float32(-np.inf))
        scores = add(scores, addmask)
    return matmul(softmax(scores, axis=-1), v)


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def cross_entropy(logits: Tensor, targets, ignore_mask: Array | None = None) -> Tensor:
    """Mean negative log-softmax of the target class over unmasked rows.

    ignore_mask: boolean rows to EXCLUDE from the mean (True = ignored).
    """
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    if targets.shape != (n,):
        raise ValueError("targets must be one id per logit row")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ValueError("target id out of range")
    keep = np.ones(n, dtype=bool) if ignore_mask is None else ~np.asarray(ignore_mask, dtype=bool)
    count = int(keep.sum())
    if count == 0:
        raise ValueError("cross_entropy: every row is masked out")
    picked = select_columns(log_softmax(logits, axis=-1), targets)
    return mul(tsum(mul(picked, keep.astype(np.float32))), -1.0 / count)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), computed stably as relu(a) + log1p(exp(-|a|))."""
    absa = add(relu(a), relu(mul(a, -1.0)))
    return add(relu(a), tlog(add(texp(mul(absa, -1.0)), 1.0)))


def binary_cross_entropy_with_logits(logits: Tensor, targets: Array) -> Tensor:
    """Mean BCE over all elements; targets is a constant 0/1 array."""
    t = np.asarray(targets, dtype=np.float32)
    per = add(softplus(logits), mul(mul(logits, t), -1.0))
    return tmean(per)


def ste_quantize_bridge(z_cont: Tensor, z_quant: Tensor) -> Tensor:
    """Forward takes z_quant's values; backward passes the gradient to z_cont
    unchanged (straight-through); z_quant gets no gradient through here."""
    if z_cont.shape != z_quant.shape:
        raise ValueError(f"bridge shape mismatch: {z_cont.shape} vs {z_quant.shape}")
    out_data = z_quant.data.copy()

    def bwd(g):
        z_cont._accum(g)

    return _node(out_data, (z_cont,), bwd)


# ---- spatial ops for the decoder ----


def conv2d(x: Tensor, kernels: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero pad 1: (C,H,W) -> (C2,H,W).

    Lowered to an im2col GEMM; backward is two GEMMs plus a col2im scatter.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    c, h, w = x.shape
    c2, ck, kh, kw = kernels.shape
    if ck != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, kernel expects {ck}")
    if (kh, kw) != (3, 3):
        raise ValueError("conv2d supports 3x3 kernels only")
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    cols = np.empty((9 * c, h * w), dtype=np.float32)
    for o, (dy, dx) in enumerate((dy, dx) for dy in range(3) for dx in range(3)):
        cols[o * c : (o + 1) * c] = xp[:, dy : dy + h, dx : dx + w].reshape(c, h * w)
    wmat = kernels.data.transpose(0, 2, 3, 1).reshape(c2, 9 * c)
    out_data = (wmat @ cols).reshape(c2, h, w)

    def bwd(g):
        gflat = g.reshape(c2, h * w)
        if kernels.requires_grad:
            gk = (gflat @ cols.T).reshape(c2, 3, 3, c).transpose(0, 3, 1, 2)
            kernels._accum(np.ascontiguousarray(gk))
        if x.requires_grad:
            gcols = wmat.T @ gflat
            gxp = np.zeros_like(xp)
            for o, (dy, dx) in enumerate((dy, dx) for dy in range(3) for dx in range(3)):
                gxp[:, dy : dy + h, dx : dx + w] += gcols[o * c : (o + 1) * c].reshape(c, h, w)
            x._accum(gxp[:, 1 : h + 1, 1 : w + 1])

    return _node(out_data, (x, kernels), bwd)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor (C,H,W) -> (C,2H,2W); backward sums each 2x2 block."""
    x = as_tensor(x)
    c, h, w = x.shape
    out_data = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def bwd(g):
        x._accum(g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))

    return _node(out_data, (x,), bwd)


# ---- parameter helpers ----


def param(data: Array, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def randn_param(rng: np.random.Generator, shape, scale: float, name: str | None = None) -> Tensor:
    return param(rng.standard_normal(shape).astype(np.float32) * np.float32(scale), name)


def zeros_param(shape, name: str | None = None) -> Tensor:
    return param(np.zeros(shape, dtype=np.float32), name)


def ones_param(shape, name: str | None = None) -> Tensor:
    return param(np.ones(shape, dtype=np.float32), name)
