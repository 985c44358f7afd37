"""Dense float64 tensors with reverse-mode differentiation.

The graph is built eagerly by the op functions below; calling
``Tensor.backward()`` on a scalar walks the tape once.  Tensors are
immutable once they enter a graph: ops never write into their inputs, and
a backward pass owns its tape exclusively, so independent forward passes
can run concurrently.

The plain-ndarray helpers (``np_linear``, ``np_layernorm``, ...) are the
single source of the forward formulas; the gradient-tracking ops and the
cache-based inference path both call them, keeping the два paths
numerically aligned.
"""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-6


class AttentionMaskError(ValueError):
    """A query row with no allowed keys."""

    def __init__(self, row: int):
        self.row = row
        super().__init__(f"attention query row {row} has no allowed keys")


class GradcheckError(RuntimeError):
    pass


def _as_f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = _as_f64(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(g, self.data.shape).copy()
        else:
            self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() is defined for scalar outputs only")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` along the axes broadcasting expanded."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _node(data, inputs, backward) -> Tensor:
    parents = tuple(t for t in inputs if t.requires_grad)
    if not parents:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward=backward)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _node(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(out_data, (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = _coerce(a)
    out_data = a.data * s

    def backward(g):
        a._accumulate(g * s)

    return _node(out_data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.outer(g, b.data)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _node(out_data, (a, b), backward)


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _node(out_data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = _coerce(a)
    out_data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def backward(g):
        a._accumulate(np.transpose(g, inv))

    return _node(out_data, (a,), backward)


def concat_rows(parts, axis: int = -2) -> Tensor:
    """Concatenate along `axis`; backward splits the gradient back."""
    parts = [_coerce(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return _node(out_data, tuple(parts), backward)


def slice_rows(a, start: int, stop: int, axis: int = -2) -> Tensor:
    a = _coerce(a)
    idx = [slice(None)] * a.data.ndim
    ax = axis if axis >= 0 else a.data.ndim + axis
    idx[ax] = slice(start, stop)
    out_data = a.data[tuple(idx)]

    def backward(g):
        full = np.zeros_like(a.data)
        full[tuple(idx)] = g
        a._accumulate(full)

    return _node(out_data, (a,), backward)


def take_rows(a, index) -> Tensor:
    """Gather rows along axis -2: out[..., r, :] = a[..., index[r], :]."""
    a = _coerce(a)
    index = np.asarray(index, dtype=np.int64)
    out_data = np.take(a.data, index, axis=-2)

    def backward(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, -2, 0)
        np.add.at(moved, index, np.moveaxis(g, -2, 0))
        a._accumulate(full)

    return _node(out_data, (a,), backward)


def gather(table, ids) -> Tensor:
    """Embedding lookup: table [V, d], integer ids of any shape -> [*ids, d]."""
    table = _coerce(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(
            f"gather ids out of range [0, {table.data.shape[0]}): "
            f"min={ids.min()} max={ids.max()}"
        )
    out_data = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        table._accumulate(full)

    return _node(out_data, (table,), backward)


def mean(a) -> Tensor:
    a = _coerce(a)
    out_data = np.asarray(a.data.mean())
    n = a.data.size

    def backward(g):
        a._accumulate(np.full_like(a.data, float(g) / n))

    return _node(out_data, (a,), backward)


def total(a) -> Tensor:
    a = _coerce(a)
    out_data = np.asarray(a.data.sum())

    def backward(g):
        a._accumulate(np.full_like(a.data, float(g)))

    return _node(out_data, (a,), backward)


def mse(a, b) -> Tensor:
    """Mean squared difference, averaged over every element."""
    d = sub(a, b)
    return mean(mul(d, d))


# ---------------------------------------------------------------------------
# ndarray-level forward formulas (shared with the inference path)


def np_silu(x: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s


def np_linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w + b


def np_layernorm(x: np.ndarray, eps: float = LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return xc * inv, inv, xc


def np_masked_softmax(logits: np.ndarray, additive: np.ndarray | None,
                      inplace: bool = False):
    if not inplace:
        logits = logits.copy()
    if additive is not None:
        np.add(logits, additive, out=logits)
    m = logits.max(axis=-1, keepdims=True)
    bad = ~np.isfinite(m)
    if bad.any():
        row = int(np.argwhere(bad)[0][-2])
        raise AttentionMaskError(row)
    np.subtract(logits, m, out=logits)
    np.exp(logits, out=logits)
    s = logits.sum(axis=-1, keepdims=True)
    np.divide(logits, s, out=logits)
    return logits


def np_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                 additive: np.ndarray | None = None):
    """Scaled dot-product attention over the last two axes.

    q: [..., nq, d], k/v: [..., nk, d]; additive mask broadcasts against
    the [..., nq, nk] logits (0 where allowed, -inf where masked).
    """
    d = q.shape[-1]
    logits = (q / np.sqrt(d)) @ np.swapaxes(k, -1, -2)
    w = np_masked_softmax(logits, additive, inplace=True)
    return w @ v, w


class PreparedMask:
    """Boolean attendability matrix with its cached additive form."""

    def __init__(self, allowed: np.ndarray):
        allowed = np.asarray(allowed, dtype=bool)
        if allowed.ndim != 2:
            raise ValueError("attention mask must be 2-D [nq, nk]")
        bad = ~allowed.any(axis=1)
        if bad.any():
            raise AttentionMaskError(int(np.argwhere(bad)[0][0]))
        self.allowed = allowed
        self.additive = np.where(allowed, 0.0, -np.inf)

    @property
    def shape(self):
        return self.allowed.shape


def silu(a) -> Tensor:
    a = _coerce(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * sig

    def backward(g):
        a._accumulate(g * (sig * (1.0 + a.data * (1.0 - sig))))

    return _node(out_data, (a,), backward)


def layer_norm(a, eps: float = LN_EPS) -> Tensor:
    a = _coerce(a)
    y, inv, _ = np_layernorm(a.data, eps)

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        a._accumulate(inv * (g - gm - y * gym))

    return _node(y, (a,), backward)


def affine_layer_norm(a, gamma, beta, eps: float = LN_EPS) -> Tensor:
    a, gamma, beta = _coerce(a), _coerce(gamma), _coerce(beta)
    y, inv, _ = np_layernorm(a.data, eps)
    out_data = y * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast(g * y, gamma.data.shape))
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g, beta.data.shape))
        if a.requires_grad:
            gy = g * gamma.data
            gm = gy.mean(axis=-1, keepdims=True)
            gym = (gy * y).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (gy - gm - y * gym))

    return _node(out_data, (a, gamma, beta), backward)


def linear(x, w, b) -> Tensor:
    """x @ w + b with x [..., n, k], w [k, m], b [m]."""
    x, w, b = _coerce(x), _coerce(w), _coerce(b)
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(f"linear shape mismatch: {x.data.shape} @ {w.data.shape}")
    out_data = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            gw = np.tensordot(
                x.data.reshape(-1, x.data.shape[-1]),
                g.reshape(-1, g.shape[-1]),
                axes=(0, 0),
            )
            w._accumulate(gw)
        if b.requires_grad:
            b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _node(out_data, (x, w, b), backward)


def masked_attention(q, k, v, mask) -> Tensor:
    """Attention restricted to `mask`: disallowed keys get exactly zero weight.

    q: [..., nq, d], k/v: [..., nk, d], mask: boolean [nq, nk] (or a
    PreparedMask).  Row i of the output is the softmax over allowed keys of
    (Q_i . K_j)/sqrt(d) applied to V.  Differentiable w.r.t. q, k, v.
    """
    q, k, v = _coerce(q), _coerce(k), _coerce(v)
    if not isinstance(mask, PreparedMask):
        mask = PreparedMask(mask)
    nq, nk = mask.shape
    if q.data.shape[-2] != nq or k.data.shape[-2] != nk or v.data.shape[-2] != nk:
        raise ValueError(
            f"attention/mask shape mismatch: q {q.data.shape}, k {k.data.shape}, "
            f"v {v.data.shape}, mask {mask.shape}"
        )
    if q.data.shape[-1] != k.data.shape[-1] or q.data.shape[-1] <= 0:
        raise ValueError("query/key feature dims must match and be positive")
    d = q.data.shape[-1]
    out_data, w = np_attention(q.data, k.data, v.data, mask.additive)
    inv_sqrt_d = 1.0 / np.sqrt(d)

    def backward(g):
        if v.requires_grad:
            v._accumulate(_unbroadcast(np.swapaxes(w, -1, -2) @ g, v.data.shape))
        if q.requires_grad or k.requires_grad:
            gw = g @ np.swapaxes(v.data, -1, -2)
            tmp = np.einsum("...qk,...qk->...q", gw, w)[..., None]
            np.subtract(gw, tmp, out=gw)
            np.multiply(gw, w, out=gw)   # gw now holds the logit gradient
            if q.requires_grad:
                q._accumulate(_unbroadcast((gw @ k.data) * inv_sqrt_d, q.data.shape))
            if k.requires_grad:
                gk = np.swapaxes(gw, -1, -2) @ q.data
                k._accumulate(_unbroadcast(gk * inv_sqrt_d, k.data.shape))

    return _node(out_data, (q, k, v), backward)


# ---------------------------------------------------------------------------
# gradient checking


def gradcheck(fn, params: dict, eps: float = 1e-5) -> dict:
    """Compare reverse-mode gradients of the scalar `fn()` against central
    finite differences for every element of every tensor in `params`.

    Returns {name: max relative error}, with errors measured relative to
    max(|analytic|, |numeric|, 1).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params.values():
        p.zero_grad()
    loss = fn()
    if not np.isfinite(loss.data):
        raise GradcheckError(
            f"non-finite loss {loss.data} for parameter set {sorted(params)}"
        )
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    report = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_hi = float(fn().data)
            flat[i] = orig - eps
            f_lo = float(fn().data)
            flat[i] = orig
            if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
                raise GradcheckError(
                    f"non-finite loss while perturbing {name}[{i}]"
                )
            numeric = (f_hi - f_lo) / (2.0 * eps)
            denom = max(abs(a_flat[i]), abs(numeric), 1.0)
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
        report[name] = worst
    return report
