"""Pure numpy implementations of the hot kernels.

Same signatures as the compiled ``_ckernels`` module; used when the
extension is not built or ``KINN_PURE_PYTHON`` is set.
"""

import numpy as np


def _check_kinloss(pred, target, t_f):
    if t_f < 2:
        raise ValueError("kinematic loss needs T_f >= 2")
    width = 2 * t_f - 1
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.shape[-1] != width:
        raise ValueError(f"expected last dimension {width} for T_f={t_f}, got {pred.shape[-1]}")


def kinloss(pred, target, t_f, weight=1.0, velocity_supervision=False, want_grad=True):
    """Batch-mean kinematic loss and, optionally, its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_kinloss(pred, target, t_f)
    p2 = pred.reshape(-1, pred.shape[-1])
    y2 = target.reshape(-1, target.shape[-1])
    rows = p2.shape[0]

    v, e = p2[:, :t_f], p2[:, t_f:]
    dv = v - y2[:, :t_f]
    cons = v[:, 1:] - v[:, :-1] - e
    per_row = (dv**2).sum(axis=1) / t_f + weight * (cons**2).sum(axis=1) / (t_f - 1)
    if velocity_supervision:
        de = e - y2[:, t_f:]
        per_row = per_row + (de**2).sum(axis=1) / (t_f - 1)
    loss = per_row.sum() / rows
    if not want_grad:
        return loss, None

    grad = np.zeros_like(p2)
    c = 2.0 * weight * cons / (t_f - 1)
    grad[:, :t_f] = 2.0 * dv / t_f
    grad[:, 1:t_f] += c
    grad[:, : t_f - 1] -= c
    grad[:, t_f:] = -c
    if velocity_supervision:
        grad[:, t_f:] += 2.0 * de / (t_f - 1)
    grad /= rows
    return loss, grad.reshape(pred.shape)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, t):
    """In-place bias-corrected adam update of ``param`` (any shape, contiguous)."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def signed_rank_counts(doubled_ranks):
    """Number of sign assignments reaching each doubled positive-rank sum.

    ``doubled_ranks`` are 2x the (possibly tied, half-integer) ranks so every
    entry is an integer. Entry ``k`` of the result counts the subsets whose
    doubled rank sum equals ``k``.
    """
    ranks = np.asarray(doubled_ranks, dtype=np.int64)
    if np.any(ranks < 0):
        raise ValueError("ranks must be non-negative")
    total = int(ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    reach = 0
    for r in ranks:
        r = int(r)
        if r:
            counts[r : reach + r + 1] += counts[: reach + 1].copy()
        else:
            counts *= 2.0
        reach += r
    return counts
