"""Vectorised numpy kernels for the fuzzy layers.

These are the pure-Python fallback for ``_ckernels`` and also the path used
by the finite-difference oracle, so every function here preserves the input
float dtype (float64 or longdouble).

Shapes: N samples, D subnetworks / P rules, ``da`` antecedent and ``dc``
consequent input dimensions. Two-sided Gaussians take the left deviation when
``x <= c``; a plain Gaussian is the case ``sl == sr``.
"""

import numpy as np

NAME = "numpy"


def sfls_forward(z, c, sl, sr, a, a0, eps):
    """Outputs (N, D) of D independent single-input TSK systems."""
    d = z[:, :, None] - c[None]
    s = np.where(d <= 0, sl[None], sr[None])
    mu = np.exp(-(d * d) / (2 * s * s))
    y = a[None] * z[:, :, None] + a0[None]
    return (mu * y).sum(axis=2) / (mu.sum(axis=2) + eps)


def _spread(y, mu, S, eps):
    """``y_p - out`` without cancelling ``out`` against the dominant ``y_p``."""
    dy = y[..., :, None] - y[..., None, :]
    return ((mu[..., None, :] * dy).sum(axis=-1) + eps * y) / S[..., None]


def sfls_backward(z, c, sl, sr, a, a0, eps, dout):
    """Gradients given ``dout`` = dL/d(output), shape (N, D).

    Returns (g_z, g_c, g_sl, g_sr, g_a, g_a0).
    """
    d = z[:, :, None] - c[None]
    left = d <= 0
    s = np.where(left, sl[None], sr[None])
    inv_s2 = 1 / (s * s)
    mu = np.exp(-(d * d) * inv_s2 / 2)
    y = a[None] * z[:, :, None] + a0[None]
    S = mu.sum(axis=2) + eps

    w = (dout / S)[:, :, None]
    g_y = w * mu
    t = w * _spread(y, mu, S, eps) * mu  # dL/dmu * mu
    g_c = (t * d * inv_s2).sum(axis=0)
    gs = t * d * d * inv_s2 / s
    g_sl = np.where(left, gs, 0).sum(axis=0)
    g_sr = np.where(left, 0, gs).sum(axis=0)
    g_a = (g_y * z[:, :, None]).sum(axis=0)
    g_a0 = g_y.sum(axis=0)
    g_z = (g_y * a[None] - t * d * inv_s2).sum(axis=2)
    return g_z, g_c, g_sl, g_sr, g_a, g_a0


def _mfls_terms(u, c, sl, sr):
    d = u[:, None, :] - c[None]
    left = d <= 0
    s = np.where(left, sl[None], sr[None])
    inv_s2 = 1 / (s * s)
    logf = -((d * d) * inv_s2).sum(axis=2) / 2
    # rescale by the largest firing strength; only the eps guard sees the shift
    f = np.exp(logf - logf.max(axis=1, keepdims=True))
    return d, left, s, inv_s2, f


def mfls_forward(u, v, c, sl, sr, A, a0, eps):
    """Output (N,) of a multi-input TSK rule base with product t-norm.

    Antecedents see ``u`` (N, da); linear consequents see ``v`` (N, dc).
    """
    f = _mfls_terms(u, c, sl, sr)[-1]
    y = v @ A.T + a0[None]
    return (f * y).sum(axis=1) / (f.sum(axis=1) + eps)


def mfls_backward(u, v, c, sl, sr, A, a0, eps, dout):
    """Returns (g_u, g_v, g_c, g_sl, g_sr, g_A, g_a0) for ``dout`` of shape (N,)."""
    d, left, s, inv_s2, f = _mfls_terms(u, c, sl, sr)
    y = v @ A.T + a0[None]
    S = f.sum(axis=1) + eps

    w = (dout / S)[:, None]
    g_y = w * f
    t = w * _spread(y, f, S, eps) * f  # dL/dlog f
    # the top rule's shifted strength is pinned at 1, so moving it only
    # rescales the others
    rows, top = np.arange(len(f)), np.argmax(f, axis=1)
    t[rows, top] = 0
    t[rows, top] = -t.sum(axis=1)
    t = t[:, :, None]
    g_c = (t * d * inv_s2).sum(axis=0)
    gs = t * d * d * inv_s2 / s
    g_sl = np.where(left, gs, 0).sum(axis=0)
    g_sr = np.where(left, 0, gs).sum(axis=0)
    g_A = g_y.T @ v
    g_a0 = g_y.sum(axis=0)
    g_v = g_y @ A
    g_u = -(t * d * inv_s2).sum(axis=1)
    return g_u, g_v, g_c, g_sl, g_sr, g_A, g_a0
