"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor


def analytic_grads(fn, tensors):
    """Gradients of the scalar ``fn()`` with respect to each tensor, via the tape."""
    for t in tensors:
        t.requires_grad = True
        t.zero_grad()
    with Tape() as tape:
        out = fn()
    if out.data.size != 1:
        raise ValueError(f"gradient check needs a scalar output, got shape {out.shape}")
    tape.backward(out)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def numeric_grads(fn, tensors, step=1e-4, entries=None):
    """Central differences ``(f(x+h) - f(x-h)) / 2h``.

    ``entries`` optionally lists, per tensor, the flat indices to difference;
    other entries are left at 0.
    """
    out = []
    for k, t in enumerate(tensors):
        g = np.zeros_like(t.data)
        flat, gflat = t.data.reshape(-1), g.reshape(-1)
        for i in (range(flat.size) if entries is None else entries[k]):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(fn().data.sum())
            flat[i] = orig - step
            lo = float(fn().data.sum())
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        out.append(g)
    return out


def max_relative_error(a, b, floor=1e-7):
    """Largest ``|a-b| / max(|a|, |b|)``, ignoring entries where both are below ``floor``."""
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(np.abs(a), np.abs(b))
    keep = scale > floor
    if not keep.any():
        return 0.0
    return float((np.abs(a - b)[keep] / scale[keep]).max())


def sample_entries(tensors, per_tensor, rng):
    """Up to ``per_tensor`` random flat indices of each tensor."""
    return [np.sort(rng.choice(t.data.size, min(per_tensor, t.data.size), replace=False))
            for t in tensors]


def check_gradients(fn, tensors, step=1e-4, rtol=1e-4, floor=1e-7, entries=None):
    """Compare tape and finite-difference gradients.

    Returns ``(ok, worst_relative_error)``.  Entries where both gradients are
    smaller than ``floor`` in magnitude must agree to within ``floor``.  With
    ``entries`` only the listed flat indices of each tensor are compared.
    """
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    ana = analytic_grads(fn, tensors)
    num = numeric_grads(fn, tensors, step, entries)
    if entries is not None:
        ana = [a.reshape(-1)[e] for a, e in zip(ana, entries)]
        num = [n.reshape(-1)[e] for n, e in zip(num, entries)]
    worst = 0.0
    ok = True
    for a, n in zip(ana, num):
        worst = max(worst, max_relative_error(a, n, floor))
        small = np.maximum(np.abs(a), np.abs(n)) <= floor
        if np.any(np.abs(a - n)[small] > floor):
            ok = False
    return ok and worst <= rtol, worst
