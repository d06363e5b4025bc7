"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

A Tensor is both the value container and the computation-graph node: ops
record their parents and a backward closure, and backward() replays the
graph in reverse topological order. Complex values are carried as paired
(real, imaginary) tensors; the Fourier ops treat the transform as a linear
map with its exact adjoint, so gradients flow through frequency-domain code
the same way they flow through a matmul.

There is no implicit broadcasting: shapes must match exactly except for the
documented bias add (a vector added along the last axis) and batched matmul
with a shared right-hand matrix.
"""

from __future__ import annotations

import numpy as np

from .fourier import fft_along


class Tensor:
    """Value plus gradient bookkeeping. Treat data as immutable once built."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def const(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.array(g)
    else:
        t.grad = t.grad + g


def _node(data, parents, backward) -> Tensor:
    tracked = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=tracked, parents=parents if tracked else (),
                  backward=backward if tracked else None)


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


def backward(loss: Tensor):
    """Accumulate d(loss)/d(t) into t.grad for every tensor reachable from loss.

    loss must be a scalar. Grads add onto whatever is already stored, so zero
    parameter grads between optimization steps, not between samples of a batch.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    topo = []
    seen = set()
    stack = [(loss, False)]
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

    loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and structural ops

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch: {a.data.shape} vs {b.data.shape}")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.data * b.data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bw(g):
        _accum(a, g * s)

    return _node(a.data * s, (a,), bw)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b a vector broadcast along the last axis (the one documented
    broadcast in this module)."""
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"bias shape {b.data.shape} does not fit {x.data.shape}")

    def bw(g):
        _accum(x, g)
        _accum(b, g.reshape(-1, b.data.shape[0]).sum(axis=0))

    return _node(x.data + b.data, (x, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")

        def bw(g):
            _accum(a, g @ bd.T)
            _accum(b, ad.T @ g)

    elif ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise ValueError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")

        def bw(g):
            _accum(a, g @ bd.transpose(0, 2, 1))
            _accum(b, ad.transpose(0, 2, 1) @ g)

    elif ad.ndim == 3 and bd.ndim == 2:
        if ad.shape[2] != bd.shape[0]:
            raise ValueError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")

        def bw(g):
            _accum(a, g @ bd.T)
            _accum(b, ad.reshape(-1, ad.shape[2]).T @ g.reshape(-1, g.shape[2]))

    else:
        raise ValueError(f"unsupported matmul ranks: {ad.ndim} @ {bd.ndim}")

    return _node(ad @ bd, (a, b), bw)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = np.argsort(axes)

    def bw(g):
        _accum(a, g.transpose(inverse))

    return _node(a.data.transpose(axes), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def bw(g):
        _accum(a, g.reshape(old))

    return _node(a.data.reshape(shape), (a,), bw)


def concat(parts, axis: int) -> Tensor:
    parts = list(parts)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(p, g[tuple(idx)])

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw)


def slice_axis(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    if start < 0 or start + length > a.data.shape[axis]:
        raise ValueError(f"slice [{start}:{start + length}] outside axis of size {a.data.shape[axis]}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _node(a.data[idx].copy(), (a,), bw)


# ---------------------------------------------------------------------------
# nonlinear ops

def relu(a: Tensor) -> Tensor:
    keep = a.data > 0

    def bw(g):
        _accum(a, g * keep)

    return _node(np.where(keep, a.data, 0.0), (a,), bw)


def softmax(a: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Softmax along axis. mask, if given, is a boolean array (True = valid)
    of the same shape; invalid positions get probability exactly 0."""
    x = a.data
    if not np.isfinite(x).all():
        raise ValueError("softmax over non-finite input")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ValueError(f"mask shape {mask.shape} != input shape {x.shape}")
        if not mask.any(axis=axis).all():
            raise ValueError("softmax row with every position masked")
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, out * (g - inner))

    return _node(out, (a,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5, axis: int = -1) -> Tensor:
    """(x - mean) / sqrt(var + eps) along axis, then per-position gain and bias."""
    d = x.data.shape[axis]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError("layer_norm gain/bias must be vectors matching the normalized axis")
    if not np.isfinite(x.data).all():
        raise ValueError("layer_norm over non-finite input")

    xv = np.moveaxis(x.data, axis, -1)
    mean = xv.mean(axis=-1, keepdims=True)
    var = xv.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mean) * inv
    out = np.moveaxis(gain.data * xhat + bias.data, -1, axis)

    def bw(g):
        gv = np.moveaxis(g, axis, -1)
        _accum(bias, gv.reshape(-1, d).sum(axis=0))
        _accum(gain, (gv * xhat).reshape(-1, d).sum(axis=0))
        gx = gv * gain.data
        term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        _accum(x, np.moveaxis(term * inv, -1, axis))

    return _node(out, (x, gain, bias), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add_bias(out, b)


def mean_pool(x: Tensor, axis: int = 0) -> Tensor:
    n = x.data.shape[axis]

    def bw(g):
        _accum(x, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return _node(x.data.mean(axis=axis), (x,), bw)


def sum_all(x: Tensor) -> Tensor:
    def bw(g):
        _accum(x, np.full_like(x.data, float(g)))

    return _node(x.data.sum(), (x,), bw)


def cross_entropy(logits: Tensor, targets, class_weights=None) -> Tensor:
    """Mean negative log-likelihood, each sample weighted by its class weight
    and the mean taken over total weight. logits: (n_classes,) with an int
    target, or (batch, n_classes) with a sequence of ints."""
    x = logits.data
    if not np.isfinite(x).all():
        raise ValueError("cross_entropy over non-finite logits")
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
        targets = [int(targets)]
    targets = np.asarray(targets, dtype=np.intp)
    if targets.shape[0] != x.shape[0]:
        raise ValueError("one target per logits row required")
    n, c = x.shape
    if class_weights is None:
        w = np.ones(n)
    else:
        class_weights = np.asarray(class_weights, dtype=np.float64)
        if class_weights.shape != (c,):
            raise ValueError(f"class_weights must have shape ({c},)")
        w = class_weights[targets]
    wsum = w.sum()

    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    nll = lse - x[np.arange(n), targets]
    loss = float((w * nll).sum() / wsum)

    probs = np.exp(x - m)
    probs /= probs.sum(axis=1, keepdims=True)

    def bw(g):
        gx = probs.copy()
        gx[np.arange(n), targets] -= 1.0
        gx *= (g * w / wsum)[:, None]
        _accum(logits, gx[0] if squeeze else gx)

    return _node(loss, (logits,), bw)


# ---------------------------------------------------------------------------
# Fourier ops (complex values carried as paired real tensors)

def fft_pair(re: Tensor, im: Tensor | None, axis: int, inverse: bool = False):
    """Differentiable DFT along one axis of (real, imaginary) tensor pairs.

    im may be None for purely real inputs. Forward is unnormalized, inverse
    scaled by 1/n, matching fourier.fft_along. The backward pass applies the
    Hermitian adjoint of the transform, which is again a fast transform.
    """
    z = re.data.astype(np.complex128)
    if im is not None:
        if im.data.shape != re.data.shape:
            raise ValueError("real/imaginary parts must share a shape")
        z = z + 1j * im.data
    out = fft_along(z, axis=axis, inverse=inverse)
    n = re.data.shape[axis]
    parents = (re,) if im is None else (re, im)

    # With F = C - iS (symmetric per-axis kernel), a grad G on the output
    # pulls back through C and S products, both recoverable from one forward
    # transform of G: F G = C G - i S G.
    def pull(g):
        fg = fft_along(g, axis=axis, inverse=False)
        return fg.real, -fg.imag  # (C g, S g)

    if not inverse:
        def bw_re(g):
            cg, sg = pull(g)
            _accum(re, cg)
            if im is not None:
                _accum(im, sg)

        def bw_im(g):
            cg, sg = pull(g)
            _accum(re, -sg)
            if im is not None:
                _accum(im, cg)
    else:
        def bw_re(g):
            cg, sg = pull(g)
            _accum(re, cg / n)
            if im is not None:
                _accum(im, -sg / n)

        def bw_im(g):
            cg, sg = pull(g)
            _accum(re, sg / n)
            if im is not None:
                _accum(im, cg / n)

    out_re = _node(out.real.copy(), parents, bw_re)
    out_im = _node(out.imag.copy(), parents, bw_im)
    return out_re, out_im
