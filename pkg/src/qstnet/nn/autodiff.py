"""A small tape-based reverse-mode differentiation engine over numpy arrays.

Usage::

    w = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = sum_(w * w)
    grads = backward(tape, loss)      # grads[w] == 2 * w.data

Operations executed while a :class:`Tape` is active record themselves (with a
closure computing their vector-Jacobian product) whenever at least one input
requires a gradient.  Because nodes are appended in execution order, replaying
the tape in reverse is a valid topological order.
"""
from __future__ import annotations

import threading

import numpy as np

from ..exceptions import ShapeError

DTYPE = np.float64

_state = threading.local()


def _current_tape():
    return getattr(_state, "tape", None)


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes = []
        self._prev = None

    def __enter__(self):
        self._prev = _current_tape()
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev
        return False

    def __len__(self):
        return len(self.nodes)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "vjp", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self.parents = ()
        self.vjp = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: mul(self, -1.0)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents, vjp, name=None):
    """Wrap an op result; attach it to the active tape if it needs a gradient."""
    out = Tensor(data, name=name)
    tape = _current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.vjp = vjp
        tape.nodes.append(out)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(name, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def abs_(a):
    a = as_tensor(a)
    return _record(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return _record(x.data * scale, (x,), lambda g: (g * scale,))


# --------------------------------------------------------------------------
# shape manipulation and reductions


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x):
    """Swap the last two axes."""
    x = as_tensor(x)
    return _record(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(out, (x,), vjp)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(x, axis, keepdims), 1.0 / count)


def select(x, index):
    """Basic (non-fancy) indexing, e.g. ``select(t, (slice(None), 0))``."""
    x = as_tensor(x)

    def vjp(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        full[index] = g
        return (full,)

    return _record(x.data[index], (x,), vjp)


# --------------------------------------------------------------------------
# linear algebra and layers


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(a.data @ b.data, (a, b), vjp)


def dense(x, weight, bias=None):
    """``x @ weight + bias`` with ``weight`` of shape ``(in, out)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weight {weight.shape}")
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def _im2col(x, kh, kw, stride, pad):
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    return cols, ho, wo


def conv2d(x, weight, bias=None, stride=1, padding=None):
    """2-d cross-correlation, NCHW layout, weight ``(out, in, kh, kw)``.

    ``padding=None`` means "same"-style padding ``kh // 2``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    o, c, kh, kw = weight.shape
    pad = kh // 2 if padding is None else padding
    bsz, _, h, w = x.shape
    cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    wmat = weight.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(bsz, ho, wo, o).transpose(0, 3, 1, 2)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape(1, o, 1, 1)
        parents = parents + (bias,)

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ wmat).reshape(bsz, ho, wo, c, kh, kw)
        gxp = np.zeros((bsz, c, h + 2 * pad, w + 2 * pad), dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        grads = (gx, gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 2, 3)),)
        return grads

    return _record(out, parents, vjp)


def dropout(x, rate, rng, training):
    x = as_tensor(x)
    if not training or rate == 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record(x.data * keep, (x,), lambda g: (g * keep,))


def gaussian_noise(x, sigma, rng, training):
    x = as_tensor(x)
    if not training or sigma == 0:
        return x
    noise = sigma * rng.standard_normal(x.shape)
    return _record(x.data + noise, (x,), lambda g: (g,))


def batch_norm(x, gamma, beta, eps=1e-5, stats=None):
    """Per-channel normalisation of an NCHW tensor.

    ``stats=None`` normalises with the batch statistics (training mode) and
    returns ``(out, (mean, var))``; otherwise ``stats`` holds running
    ``(mean, var)`` which are treated as constants.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != gamma.shape:
        raise ShapeError(f"batch_norm: input {x.shape} with gamma {gamma.shape}, beta {beta.shape}")
    axes = (0, 2, 3)
    shp = (1, -1, 1, 1)
    if stats is None:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        batch = True
    else:
        mu, var = stats
        batch = False
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shp)) * inv.reshape(shp)
    out = gamma.data.reshape(shp) * xhat + beta.data.reshape(shp)

    def vjp(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        gxhat = g * gamma.data.reshape(shp)
        if batch:
            m = x.size / x.shape[1]
            gx = (
                inv.reshape(shp)
                / m
                * (
                    m * gxhat
                    - gxhat.sum(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
                )
            )
        else:
            gx = gxhat * inv.reshape(shp)
        return gx, ggamma, gbeta

    result = _record(out, (x, gamma, beta), vjp)
    return (result, (mu, var)) if batch else result


# --------------------------------------------------------------------------
# losses


def mean_abs_error(a, b):
    return mean(abs_(sub(a, b)))


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.size:
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(labels.size)
    loss = -logp[rows, labels].mean()

    def vjp(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (g * p / labels.size,)

    return _record(loss, (logits,), vjp)


# --------------------------------------------------------------------------


def backward(tape, loss, params=None):
    """Reverse sweep over ``tape`` from scalar ``loss``.

    Returns a dict mapping every leaf tensor that requires a gradient (or every
    tensor in ``params`` when given) to its gradient array.  Leaves also get
    their ``.grad`` attribute set.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads = {loss: np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(tape.nodes):
        g = grads.pop(node, None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            if parent in grads:
                grads[parent] = grads[parent] + pg
            else:
                grads[parent] = pg
    for t, g in grads.items():
        if t.vjp is None and t.requires_grad:
            leaves[t] = g
    if loss.vjp is None and loss.requires_grad and loss not in leaves:
        leaves[loss] = np.ones_like(loss.data)
    if params is not None:
        leaves = {p: leaves.get(p, np.zeros_like(p.data)) for p in params}
    for t, g in leaves.items():
        t.grad = g
    return leaves
