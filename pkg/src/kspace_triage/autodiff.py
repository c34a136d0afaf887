"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` records the op that produced it and a closure mapping the
output gradient to gradients for each parent. :func:`backward` walks the
recorded graph in reverse topological order and returns a fresh gradient map,
so repeated calls on one graph give identical results.

Complex quantities are carried as real arrays with a trailing axis of length
two (real, imag); ``complex_mul`` and ``dft2`` operate on that layout.
"""

import contextlib

import numpy as np

from . import spectral
from .errors import ShapeError

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


class Tensor:
    """Real n-D array that may participate in a gradient graph."""

    __slots__ = ("value", "parents", "backward_fn", "requires_grad", "op", "name", "__weakref__")

    def __init__(self, value, requires_grad=False, name=None, parents=(), backward_fn=None, op="leaf"):
        self.value = np.asarray(value)
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self):
        return not self.parents

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor({self.op}{label}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def parameter(value, name=None):
    return Tensor(np.array(value), requires_grad=True, name=name)


def constant(value):
    return Tensor(value, requires_grad=False, op="const")


def _wrap(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None and arr.dtype.kind in "fiu" and arr.ndim == 0:
        arr = arr.astype(dtype)
    return constant(arr)


def _node(value, parents, backward_fn, op):
    needs = _GRAD_ENABLED[0] and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn, op=op)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """Gradients of a scalar ``loss`` w.r.t. every leaf tensor that requires them.

    Returns a dict keyed by the leaf :class:`Tensor` objects. Gradients take the
    dtype of the tensor they belong to.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads = {id(loss): np.ones_like(loss.value)}
    leaves = {}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.is_leaf:
            leaves[node] = grad
            continue
        parent_grads = node.backward_fn(grad)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.value.dtype)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves


def gradient_check(fn, inputs, eps=1e-6, max_coords=None, rng=None):
    """Largest relative gap between analytic and central-difference gradients.

    ``fn`` maps the list of input tensors to a scalar tensor. Inputs are
    promoted to float64 for the check. The error for one coordinate is
    ``|a - n| / (|a| + |n| + 1e-8)``. ``max_coords`` caps the number of probed
    coordinates per input (chosen at random with ``rng``).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    tensors = [Tensor(np.array(t.value if isinstance(t, Tensor) else t, dtype=np.float64),
                      requires_grad=True) for t in inputs]
    loss = fn(tensors)
    grads = backward(loss)
    worst = 0.0
    for t in tensors:
        analytic = grads.get(t, np.zeros_like(t.value)).ravel()
        flat = t.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        with no_grad():
            for i in coords:
                saved = flat[i]
                flat[i] = saved + eps
                up = float(fn(tensors).value)
                flat[i] = saved - eps
                down = float(fn(tensors).value)
                flat[i] = saved
                numeric = (up - down) / (2 * eps)
                err = abs(analytic[i] - numeric) / (abs(analytic[i]) + abs(numeric) + 1e-8)
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = _wrap(a), _wrap(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), back, "add")


def neg(a):
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = _wrap(a), _wrap(b)

    def back(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _node(a.value * b.value, (a, b), back, "mul")


def relu(a):
    mask = a.value > 0
    return _node(a.value * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a):
    out = _stable_sigmoid(a.value)
    return _node(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def _stable_sigmoid(x):
    return np.exp(-np.logaddexp(0, -x)).astype(x.dtype, copy=False)


# ---------------------------------------------------------------- reductions / shape


def tsum(a, axis=None):
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(np.sum(a.value, axis=axis), (a,), back, "sum")


def mean(a, axis=None):
    count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis), 1.0 / count)


def reshape(a, shape):
    old = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes):
    inverse = np.argsort(axes)
    return _node(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def concat(tensors, axis):
    tensors = [_wrap(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors), back, "concat")


def zero_pad(a, pad_width):
    """Pad with zeros; ``pad_width`` as for ``np.pad``."""
    slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
    return _node(np.pad(a.value, pad_width), (a,), lambda g: (g[slices],), "pad")


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)

    def back(g):
        return g @ b.value.T, a.value.T @ g

    return _node(a.value @ b.value, (a, b), back, "matmul")


def dense(x, weight, bias=None):
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# ---------------------------------------------------------------- complex (paired-real)


def _as_complex(a):
    a = np.ascontiguousarray(a)
    ctype = np.complex64 if a.dtype == np.float32 else np.complex128
    return a.astype(a.dtype, copy=False).view(ctype)[..., 0]


def _as_paired(c):
    return np.stack([c.real, c.imag], axis=-1)


def complex_mul(a, b):
    """Complex product of paired-real tensors, (ac - bd, ad + bc), with broadcasting."""
    a, b = _wrap(a), _wrap(b)
    ca, cb = _as_complex(a.value), _as_complex(b.value)

    def back(g):
        cg = _as_complex(g)
        ga = _as_paired(cg * np.conj(cb)) if a.requires_grad else None
        gb = _as_paired(cg * np.conj(ca)) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _node(_as_paired(ca * cb), (a, b), back, "complex_mul")


def dft2(a, inverse=False):
    """Unitary 2-D DFT of a paired-real tensor over the two axes before the pair axis.

    The unitary transform's adjoint is its inverse, which gives the backward rule.
    """
    fwd = "inverse" if inverse else "forward"
    adj = "forward" if inverse else "inverse"
    out = _as_paired(spectral.dft2(_as_complex(a.value), fwd))
    return _node(out, (a,), lambda g: (_as_paired(spectral.dft2(_as_complex(g), adj)),), "dft2")


def spectral_conv(x, kernels, columns=None):
    """Fused k-space convolution producing backbone channels.

    ``x`` is a constant complex array (batch, rows, cols) in standard DFT
    layout; ``kernels`` a paired-real tensor (p, k, k, 2). Computes
    h_j = F^-1(x o F(pad(z_j))) with an unnormalized kernel transform and
    returns (batch, 2p, rows, cols) with channels Re h_0, Im h_0, Re h_1, ...

    ``columns`` lists the only columns where ``x`` may be nonzero; the
    transforms then touch just those columns.
    """
    x = np.asarray(x)
    batch, rows, cols = x.shape
    zv = kernels.value
    p, k = zv.shape[:2]
    real = zv.dtype
    ctype = np.complex64 if real == np.float32 else np.complex128
    x = x.astype(ctype, copy=False)
    zpad = np.zeros((p, rows, cols), dtype=ctype)
    zpad[:, :k, :k] = zv[..., 0] + 1j * zv[..., 1]
    scale = real.type(np.sqrt(rows * cols))
    zf = spectral.dft2(zpad) * scale
    if columns is None:
        h = spectral.dft2(x[:, None] * zf[None], "inverse")
    else:
        columns = np.asarray(columns)
        # inverse DFT along rows for sampled columns, then a dense synthesis along cols
        synth = (np.exp(2j * np.pi * np.outer(columns, np.arange(cols)) / cols) / np.sqrt(cols)).astype(ctype)
        partial = spectral.fft(x[:, None][..., columns] * zf[..., columns], axis=-2, inverse=True)
        h = (partial * real.type(1 / np.sqrt(rows))) @ synth
    out = np.empty((batch, p, 2, rows, cols), dtype=real)
    out[:, :, 0] = h.real
    out[:, :, 1] = h.imag

    def back(g):
        g = g.reshape(batch, p, 2, rows, cols)
        gc = g[:, :, 0] + 1j * g[:, :, 1]
        if columns is None:
            gzf = np.einsum("brc,bprc->prc", np.conj(x), spectral.dft2(gc.astype(ctype)))
        else:
            gh = spectral.fft(gc.astype(ctype) @ np.conj(synth).T, axis=-2) * real.type(1 / np.sqrt(rows))
            gzf = np.zeros((p, rows, cols), dtype=ctype)
            gzf[..., columns] = np.einsum("brc,bprc->prc", np.conj(x[..., columns]), gh)
        gz = (spectral.dft2(gzf, "inverse") * scale)[:, :k, :k]
        return (np.stack([gz.real, gz.imag], axis=-1),)

    return _node(out.reshape(batch, 2 * p, rows, cols), (kernels,), back, "spectral_conv")


# ---------------------------------------------------------------- convolutional layers


def _windows(xp, kh, kw, stride):
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation, NCHW input, (out, in, kh, kw) weights."""
    xv, wv = x.value, weight.value
    if xv.shape[1] != wv.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {xv.shape}, weight {wv.shape}")
    kh, kw = wv.shape[2:]
    xp = np.pad(xv, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xv
    win = _windows(xp, kh, kw, stride)
    batch, _, ho, wo = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(batch * ho * wo, -1)
    wmat = wv.reshape(wv.shape[0], -1)
    out = (cols @ wmat.T).reshape(batch, ho, wo, -1).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.value.reshape(1, -1, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(batch * ho * wo, -1)
        gw = (gmat.T @ cols).reshape(wv.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(batch, ho, wo, xv.shape[1], kh, kw)
            gxp = np.zeros(xp.shape, dtype=xv.dtype)
            if stride == kh == kw:
                # non-overlapping windows: col2im is a reshape
                tiles = gcols.transpose(0, 3, 1, 4, 2, 5).reshape(batch, -1, ho * kh, wo * kw)
                gxp[:, :, :ho * kh, :wo * kw] = tiles
            else:
                gcols = np.ascontiguousarray(gcols.transpose(0, 3, 4, 5, 1, 2))
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + xv.shape[2], padding:padding + xv.shape[3]] if padding else gxp
        grads = (gx, gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 2, 3)),)
        return grads

    return _node(np.ascontiguousarray(out), parents, back, "conv2d")


def group_norm(x, gamma, beta, groups, eps=1e-5):
    """Group normalization over (channels/groups, H, W) with per-channel affine."""
    xv = x.value
    batch, channels, height, width = xv.shape
    if channels % groups:
        raise ShapeError(f"{channels} channels not divisible into {groups} groups")
    xg = xv.reshape(batch, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    centered = xg - mu
    var = (centered * centered).mean(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (centered * inv_std).reshape(xv.shape)
    gv = gamma.value.reshape(1, -1, 1, 1)
    out = xhat * gv + beta.value.reshape(1, -1, 1, 1)
    n = xg.shape[2]

    def back(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = (g * gv).reshape(batch, groups, -1)
        xh = xhat.reshape(batch, groups, -1)
        gx = inv_std / n * (n * gxhat - gxhat.sum(axis=2, keepdims=True)
                            - xh * (gxhat * xh).sum(axis=2, keepdims=True))
        return gx.reshape(xv.shape), ggamma, gbeta

    return _node(out.astype(xv.dtype, copy=False), (x, gamma, beta), back, "group_norm")


def avg_pool2d(x, size):
    """Non-overlapping average pooling with a square window (H, W divisible by size)."""
    xv = x.value
    batch, channels, height, width = xv.shape
    if height % size or width % size:
        raise ShapeError(f"pool size {size} does not divide {height}x{width}")
    out = xv.reshape(batch, channels, height // size, size, width // size, size).mean(axis=(3, 5))

    def back(g):
        up = np.repeat(np.repeat(g, size, axis=2), size, axis=3)
        return (up / (size * size),)

    return _node(out, (x,), back, "avg_pool")


def global_avg_pool(x):
    """(B, C, H, W) -> (B, C)."""
    return mean(x, axis=(2, 3))


# ---------------------------------------------------------------- losses


def sigmoid_bce(logits, targets, pos_weight=None):
    """Mean binary cross-entropy on logits, fused for stability.

    ``pos_weight`` scales the positive-class term (one value or one per column).
    """
    z = logits.value
    y = np.asarray(targets, dtype=z.dtype)
    w = 1.0 if pos_weight is None else np.asarray(pos_weight, dtype=z.dtype)
    # -[w*y*log s(z) + (1-y)*log(1-s(z))]
    log_p = -np.logaddexp(0, -z)
    log_1mp = -np.logaddexp(0, z)
    per = -(w * y * log_p + (1 - y) * log_1mp)
    value = np.asarray(per.mean(), dtype=z.dtype)
    p = _stable_sigmoid(z)

    def back(g):
        grad = (w * y * (p - 1) + (1 - y) * p) / z.size
        return (g * grad,)

    return _node(value, (logits,), back, "sigmoid_bce")
