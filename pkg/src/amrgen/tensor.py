"""Small dense-tensor library with tape-based reverse-mode differentiation.

Values are numpy arrays (float64 unless ``AMRGEN_FLOAT32=1`` is set in the
environment).  Operations only record themselves when a :class:`Tape` is
active and at least one input requires a gradient, so inference code runs
without any bookkeeping.

    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = total(matmul(w, w))
    >>> tape.backward(loss)
"""
from __future__ import annotations

import os

import numpy as np

DTYPE = np.float32 if os.environ.get("AMRGEN_FLOAT32") == "1" else np.float64

# stand-in for -inf in masked log-probabilities; keeps everything finite
NEG_INF = -1e9
LN_EPS = 1e-5


class ShapeError(ValueError):
    pass


class MaskError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Tape:
    """Ordered record of the differentiable operations executed under it.

    Tapes nest; an operation is recorded on the innermost active tape.
    """

    _active: list["Tape"] = []

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        Tape._active.append(self)
        return self

    def __exit__(self, *exc):
        Tape._active.pop()
        return False

    def backward(self, loss: Tensor):
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        # reverse execution order is a valid topological order
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        # free intermediate buffers, keep leaf gradients
        for node in self.nodes:
            node.grad = None
            node._backward = None
            node._parents = ()
        self.nodes = []


def _tracking():
    return Tape._active[-1] if Tape._active else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    elif t.grad.shape == np.shape(g):
        t.grad += g
    else:
        t.grad = t.grad + g


def _node(data, parents, backward):
    out = Tensor(data)
    tape = _tracking()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        tape.nodes.append(out)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ----------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward)


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        _accum(x, g * (1.0 - y * y))

    return _node(y, (x,), backward)


def _sigmoid(v):
    return 0.5 * (np.tanh(0.5 * v) + 1.0)


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid(x.data)

    def backward(g):
        _accum(x, g * y * (1.0 - y))

    return _node(y, (x,), backward)


def log(x):
    x = as_tensor(x)

    def backward(g):
        _accum(x, g / x.data)

    return _node(np.log(x.data), (x,), backward)


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)

    def backward(g):
        _accum(x, g * y)

    return _node(y, (x,), backward)


def where(mask, a, b):
    """Select ``a`` where ``mask`` is true, else ``b``; mask broadcasts."""
    a, b = as_tensor(a), as_tensor(b)
    m = np.asarray(mask, dtype=bool)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.where(m, g, 0.0), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.where(m, 0.0, g), b.shape))

    return _node(np.where(m, a.data, b.data), (a, b), backward)


# ------------------------------------------------------------------ structural

def matmul(a, b):
    """``a[..., k] @ b[k, n]``; leading dimensions of ``a`` are batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            k = a.shape[-1]
            _accum(b, a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))

    return _node(a.data @ b.data, (a, b), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                _accum(t, np.take(g, np.arange(lo, hi), axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                _accum(t, np.take(g, i, axis=axis))

    return _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, slice, type(None), type(Ellipsis))) for p in parts)


def getitem(x, idx):
    x = as_tensor(x)
    basic = _is_basic(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _accum(x, full)

    return _node(x.data[idx], (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)

    def backward(g):
        _accum(x, g.reshape(x.shape))

    return _node(x.data.reshape(shape), (x,), backward)


def total(x, axis=None):
    x = as_tensor(x)

    def backward(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.shape))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return _node(np.sum(x.data, axis=axis), (x,), backward)


def embedding(weight, ids):
    """Rows of ``weight`` selected by integer array ``ids`` (any shape)."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        _accum(weight, full)

    return _node(weight.data[ids], (weight,), backward)


def pick(x, ids):
    """``x[..., ids]`` elementwise: one entry per row of the last axis."""
    x = as_tensor(x)
    ids = np.asarray(ids, dtype=np.int64)
    lead = np.indices(ids.shape)
    index = tuple(lead) + (ids,)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        _accum(x, full)

    return _node(x.data[index], (x,), backward)


def scatter_add(src, ids, size):
    """Sum ``src[..., i]`` into slot ``ids[..., i]`` of a new last axis of ``size``.

    ``ids`` may have fewer leading dims than ``src``; it is broadcast.
    """
    src = as_tensor(src)
    ids = np.broadcast_to(np.asarray(ids, dtype=np.int64), src.shape)
    lead = np.indices(src.shape)[:-1]
    index = tuple(lead) + (ids,)
    out = np.zeros(src.shape[:-1] + (size,), dtype=DTYPE)
    np.add.at(out, index, src.data)

    def backward(g):
        _accum(src, g[index])

    return _node(out, (src,), backward)


def bmv(mat, vec):
    """Batched matrix-vector product: ``[B, n, d] x [B, d] -> [B, n]``."""
    mat, vec = as_tensor(mat), as_tensor(vec)

    def backward(g):
        if mat.requires_grad:
            _accum(mat, g[:, :, None] * vec.data[:, None, :])
        if vec.requires_grad:
            _accum(vec, np.einsum("bn,bnd->bd", g, mat.data))

    return _node(np.einsum("bnd,bd->bn", mat.data, vec.data), (mat, vec), backward)


def weighted_sum(weights, mat):
    """``[B, n] x [B, n, d] -> [B, d]``: sum of rows of ``mat`` under ``weights``."""
    weights, mat = as_tensor(weights), as_tensor(mat)

    def backward(g):
        if weights.requires_grad:
            _accum(weights, np.einsum("bnd,bd->bn", mat.data, g))
        if mat.requires_grad:
            _accum(mat, weights.data[:, :, None] * g[:, None, :])

    return _node(np.einsum("bn,bnd->bd", weights.data, mat.data), (weights, mat), backward)


# ------------------------------------------------------------- normalisations

def _check_mask(mask, shape):
    if mask is None:
        return None
    m = np.broadcast_to(np.asarray(mask, dtype=bool), shape)
    if not m.any(axis=-1).all():
        raise MaskError("softmax: every position of a row is masked")
    return m


def softmax(x, mask=None):
    """Softmax over the last axis; masked-out positions get probability exactly 0."""
    x = as_tensor(x)
    m = _check_mask(mask, x.shape)
    z = x.data if m is None else np.where(m, x.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        _accum(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _node(y, (x,), backward)


def log_softmax(x, mask=None):
    """Log-softmax over the last axis; masked positions hold ``NEG_INF`` and get no gradient."""
    x = as_tensor(x)
    m = _check_mask(mask, x.shape)
    z = x.data if m is None else np.where(m, x.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    if m is not None:
        y = np.where(m, y, NEG_INF)
    p = np.exp(y)

    def backward(g):
        if m is not None:
            g = np.where(m, g, 0.0)
        _accum(x, g - p * g.sum(axis=-1, keepdims=True))

    return _node(y, (x,), backward)


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Normalise over the last axis, then scale by ``gain`` and shift by ``bias``.

    ``gain``/``bias`` match the trailing dims of ``x`` (e.g. ``[4, H]`` for
    per-gate normalisation of an ``[B, 4, H]`` block).
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        if gain.requires_grad:
            _accum(gain, _unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.shape))
        if x.requires_grad:
            _accum(x, _layer_norm_backward(g * gain.data, xhat, inv))

    return _node(xhat * gain.data + bias.data, (x, gain, bias), backward)


def _layer_norm_backward(dxhat, xhat, inv):
    return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                  - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


def lstm_cell(x, h_prev, c_prev, weight, gain, bias):
    """One layer-normalised LSTM step.

    ``weight`` is ``[dx + H, 4H]`` acting on ``[x; h_prev]``; the four gate
    blocks (input, forget, output, candidate) are each layer-normalised with
    ``gain``/``bias`` of shape ``[4, H]``.  Returns ``(h, c)``.
    """
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    weight, gain, bias = as_tensor(weight), as_tensor(gain), as_tensor(bias)
    H = c_prev.shape[-1]
    if weight.shape != (x.shape[-1] + H, 4 * H) or gain.shape != (4, H):
        raise ShapeError(
            f"lstm_cell: x {x.shape}, h {h_prev.shape}, weight {weight.shape}, gain {gain.shape}")
    B = x.shape[0]
    xh = np.concatenate([x.data, h_prev.data], axis=-1)
    z = (xh @ weight.data).reshape(B, 4, H)
    zc = z - z.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((zc * zc).mean(axis=-1, keepdims=True) + LN_EPS)
    zhat = zc * inv
    a = zhat * gain.data + bias.data
    sig = _sigmoid(a[:, :3])
    i, f, o = sig[:, 0], sig[:, 1], sig[:, 2]
    cand = np.tanh(a[:, 3])
    c = f * c_prev.data + i * cand
    tc = np.tanh(c)
    h = o * tc
    out = np.stack([h, c], axis=1)

    def backward(g):
        gh, gc = g[:, 0], g[:, 1]
        dc = gc + gh * o * (1.0 - tc * tc)
        da = np.empty_like(a)
        da[:, 0] = dc * cand * i * (1.0 - i)
        da[:, 1] = dc * c_prev.data * f * (1.0 - f)
        da[:, 2] = gh * tc * o * (1.0 - o)
        da[:, 3] = dc * i * (1.0 - cand * cand)
        if gain.requires_grad:
            _accum(gain, (da * zhat).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, da.sum(axis=0))
        _accum(c_prev, dc * f)
        dz = _layer_norm_backward(da * gain.data, zhat, inv).reshape(B, 4 * H)
        if weight.requires_grad:
            _accum(weight, xh.T @ dz)
        dxh = dz @ weight.data.T
        _accum(x, dxh[:, : x.shape[-1]])
        _accum(h_prev, dxh[:, x.shape[-1]:])

    both = _node(out, (x, h_prev, c_prev, weight, gain, bias), backward)
    return getitem(both, (slice(None), 0)), getitem(both, (slice(None), 1))


def lstm_layer(x, mask, weight, gain, bias, reverse=False, rec_mask=None):
    """Run :func:`lstm_cell` over a padded sequence as one recorded operation.

    ``x`` is ``[B, n, dx]`` and ``mask`` ``[B, n]``; at masked steps the state
    is carried over unchanged.  ``rec_mask`` (``[B, H]``, already scaled) is a
    dropout mask applied to the recurrent input at every step.  Returns
    ``(outputs [B, n, H], final_h [B, H])``.
    """
    x, weight, gain, bias = as_tensor(x), as_tensor(weight), as_tensor(gain), as_tensor(bias)
    B, n, dx = x.shape
    H = weight.shape[1] // 4
    if weight.shape != (dx + H, 4 * H) or gain.shape != (4, H):
        raise ShapeError(f"lstm_layer: x {x.shape}, weight {weight.shape}, gain {gain.shape}")
    W = weight.data
    mask = np.asarray(mask, dtype=bool)
    zx = (x.data.reshape(B * n, dx) @ W[:dx]).reshape(B, n, 4 * H)
    Wh = W[dx:]
    steps = range(n - 1, -1, -1) if reverse else range(n)
    h = np.zeros((B, H), dtype=DTYPE)
    c = np.zeros((B, H), dtype=DTYPE)
    out = np.zeros((B, n, H), dtype=DTYPE)
    cache = {}
    for t in steps:
        h_in = h if rec_mask is None else h * rec_mask
        z = (zx[:, t] + h_in @ Wh).reshape(B, 4, H)
        zc = z - z.mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt((zc * zc).mean(axis=-1, keepdims=True) + LN_EPS)
        zhat = zc * inv
        a = zhat * gain.data + bias.data
        sig = _sigmoid(a[:, :3])
        cand = np.tanh(a[:, 3])
        c_new = sig[:, 1] * c + sig[:, 0] * cand
        tc = np.tanh(c_new)
        h_new = sig[:, 2] * tc
        m = mask[:, t:t + 1]
        cache[t] = (h_in, c, zhat, inv, sig, cand, tc, m)
        h = np.where(m, h_new, h)
        c = np.where(m, c_new, c)
        out[:, t] = h
    final = h

    def backward(g_out, g_final):
        dh = np.zeros((B, H), dtype=DTYPE) if g_final is None else g_final.copy()
        dc = np.zeros((B, H), dtype=DTYPE)
        dz_all = np.zeros((B, n, 4 * H), dtype=DTYPE)
        h_ins = np.zeros((B, n, H), dtype=DTYPE)
        dgain = np.zeros((4, H), dtype=DTYPE)
        dbias = np.zeros((4, H), dtype=DTYPE)
        for t in reversed(list(steps)):
            h_in, c_prev, zhat, inv, sig, cand, tc, m = cache[t]
            if g_out is not None:
                dh = dh + g_out[:, t]
            i, f, o = sig[:, 0], sig[:, 1], sig[:, 2]
            dh_new, dc_new = dh * m, dc * m
            dct = dc_new + dh_new * o * (1.0 - tc * tc)
            da = np.empty((B, 4, H), dtype=DTYPE)
            da[:, 0] = dct * cand * i * (1.0 - i)
            da[:, 1] = dct * c_prev * f * (1.0 - f)
            da[:, 2] = dh_new * tc * o * (1.0 - o)
            da[:, 3] = dct * i * (1.0 - cand * cand)
            dgain += (da * zhat).sum(axis=0)
            dbias += da.sum(axis=0)
            dz = _layer_norm_backward(da * gain.data, zhat, inv).reshape(B, 4 * H)
            dz_all[:, t] = dz
            h_ins[:, t] = h_in
            dh_in = dz @ Wh.T
            if rec_mask is not None:
                dh_in = dh_in * rec_mask
            dh = dh_in + dh * ~m
            dc = dct * f + dc * ~m
        flat_dz = dz_all.reshape(B * n, 4 * H)
        if weight.requires_grad:
            gw = np.empty_like(W)
            gw[:dx] = x.data.reshape(B * n, dx).T @ flat_dz
            gw[dx:] = h_ins.reshape(B * n, H).T @ flat_dz
            _accum(weight, gw)
        _accum(gain, dgain)
        _accum(bias, dbias)
        if x.requires_grad:
            _accum(x, (flat_dz @ W[:dx].T).reshape(B, n, dx))

    both = np.concatenate([out, final[:, None, :]], axis=1)
    node = _node(both, (x, weight, gain, bias), lambda g: backward(g[:, :n], g[:, n]))
    return getitem(node, (slice(None), slice(0, n))), getitem(node, (slice(None), n))


# --------------------------------------------------------------- regularisers

class ConfigError(ValueError):
    pass


def dropout_mask(shape, rate, rng):
    """Inverted-dropout mask: kept units carry ``1/(1-rate)``, dropped ones 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=DTYPE)
    keep = rng.random(shape) >= rate
    return keep.astype(DTYPE) / (1.0 - rate)


def dropout(x, rate, mask_source=None):
    """Apply inverted dropout.

    ``mask_source`` is either a numpy ``Generator`` (fresh mask) or a fixed
    0/1 keep-mask, which is scaled here so one mask can be reused across
    timesteps.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return as_tensor(x)
    if isinstance(mask_source, np.random.Generator):
        mask = dropout_mask(as_tensor(x).shape, rate, mask_source)
    else:
        mask = np.asarray(mask_source, dtype=DTYPE) / (1.0 - rate)
    return mul(x, mask)


# ------------------------------------------------------------------- optimiser

class AdamState:
    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected ADAM update of ``params`` (name -> Tensor) in place.

    Missing entries in ``grads`` count as zero gradients.
    """
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


def clip_grad_norm(grads, max_norm):
    """Rescale ``grads`` (name -> array) so their global L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm
