"""Dense and segmented primitives with their reverse-mode rules.

Segments follow CSR conventions: ``offsets`` has one more entry than
there are segments and pair ``p`` belongs to segment ``s`` when
``offsets[s] <= p < offsets[s + 1]``.

Every reduction accepts ``strict``. Strict reductions accumulate pairs
one at a time in pair order (``np.add.at`` / ``np.bincount``), which is
bitwise identical to a plain Python loop. The default path multiplies by
a sparse selection matrix instead, which is much faster on large graphs.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .errors import ContractViolation


def _same_shape(*arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ContractViolation(f"shape mismatch: {shape} vs {a.shape}")


def _check_offsets(offsets, n):
    offsets = np.asarray(offsets, dtype=np.int64)
    if offsets.ndim != 1 or len(offsets) == 0 or offsets[0] != 0 or offsets[-1] != n:
        raise ContractViolation(f"offsets do not describe {n} entries")
    return offsets


def segment_ids(offsets) -> np.ndarray:
    """Segment id of every pair."""
    offsets = np.asarray(offsets, dtype=np.int64)
    return np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))


def hadamard(a, b):
    a, b = np.asarray(a), np.asarray(b)
    _same_shape(a, b)
    return a * b


def hadamard_backward(grad, a, b):
    """Gradients of ``a * b`` with respect to ``a`` and ``b``."""
    grad, a, b = np.asarray(grad), np.asarray(a), np.asarray(b)
    _same_shape(grad, a, b)
    return grad * b, grad * a


def distmult_score(head, rel, tail):
    """Trilinear score ``sum_m head[m] * rel[m] * tail[m]``.

    Works row-wise on stacked inputs: ``(..., d)`` arrays give a ``(...)``
    array of scores.
    """
    head, rel, tail = np.asarray(head), np.asarray(rel), np.asarray(tail)
    _same_shape(head, rel, tail)
    return np.einsum("...m,...m,...m->...", head, rel, tail)


def distmult_score_backward(grad, head, rel, tail):
    head, rel, tail = np.asarray(head), np.asarray(rel), np.asarray(tail)
    _same_shape(head, rel, tail)
    g = np.asarray(grad)[..., None]
    return g * rel * tail, g * head * tail, g * head * rel


def segment_softmax(logits, offsets, strict=False):
    """Softmax inside each segment, shifted by the segment max.

    Empty segments contribute nothing; the result has one weight per pair.
    """
    logits = np.asarray(logits)
    if logits.ndim != 1:
        raise ContractViolation("segment_softmax expects one logit per pair")
    offsets = _check_offsets(offsets, len(logits))
    if len(logits) == 0:
        return logits.copy()
    starts = offsets[:-1]
    nonempty = starts[offsets[1:] > starts]
    seg_max = np.maximum.reduceat(logits, nonempty)
    counts = np.diff(offsets)
    shifted = logits - np.repeat(seg_max, counts[counts > 0])
    ex = np.exp(shifted)
    seg = segment_ids(offsets)
    denom = np.bincount(seg, weights=ex, minlength=len(offsets) - 1).astype(logits.dtype)
    return ex / denom[seg]


def segment_softmax_backward(weights, grad, offsets):
    """``dL/dx_p = y_p * (g_p - sum_q y_q g_q)`` within each segment."""
    weights, grad = np.asarray(weights), np.asarray(grad)
    _same_shape(weights, grad)
    offsets = _check_offsets(offsets, len(weights))
    seg = segment_ids(offsets)
    inner = np.bincount(seg, weights=weights * grad, minlength=len(offsets) - 1)
    return weights * (grad - inner.astype(weights.dtype)[seg])


def scatter_add(index, values, n, strict=False):
    """``out[index[p]] += values[p]`` for every ``p``, into ``n`` rows."""
    index = np.asarray(index, dtype=np.int64)
    values = np.asarray(values)
    if len(index) != len(values):
        raise ContractViolation("index and values differ in length")
    out = np.zeros((n,) + values.shape[1:], dtype=values.dtype)
    if len(index) == 0:
        return out
    if strict:
        np.add.at(out, index, values)
        return out
    if values.ndim == 1:
        return np.bincount(index, weights=values, minlength=n).astype(values.dtype)
    sel = sparse.csr_matrix((np.ones(len(index), dtype=values.dtype),
                             (index, np.arange(len(index)))), shape=(n, len(index)))
    return np.asarray(sel @ values.reshape(len(index), -1)).reshape(out.shape)


def segment_weighted_sum(weights, messages, offsets, strict=False):
    """``out[s] = sum_{p in s} weights[p] * messages[p]``; empty segments give zeros."""
    weights, messages = np.asarray(weights), np.asarray(messages)
    if weights.ndim != 1 or messages.ndim != 2 or len(weights) != len(messages):
        raise ContractViolation("weights/messages do not share a segment structure")
    offsets = _check_offsets(offsets, len(weights))
    nseg = len(offsets) - 1
    if strict:
        return scatter_add(segment_ids(offsets), weights[:, None] * messages, nseg, strict=True)
    mat = sparse.csr_matrix((weights, np.arange(len(weights)), offsets),
                            shape=(nseg, len(weights)))
    return np.asarray(mat @ messages).astype(messages.dtype, copy=False)


def segment_weighted_sum_backward(grad_out, weights, messages, offsets):
    """Gradients of :func:`segment_weighted_sum` w.r.t. weights and messages."""
    weights, messages, grad_out = np.asarray(weights), np.asarray(messages), np.asarray(grad_out)
    offsets = _check_offsets(offsets, len(weights))
    if grad_out.shape != (len(offsets) - 1, messages.shape[1]):
        raise ContractViolation("upstream gradient has the wrong shape")
    g = grad_out[segment_ids(offsets)]
    return np.einsum("pm,pm->p", g, messages), weights[:, None] * g
