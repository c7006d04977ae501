"""Forward and backward passes of the SPD network layers.

Each ``*_forward`` returns its output together with a cache that the matching
``*_backward`` consumes. Matrix arguments may be single ``(n, n)`` arrays or
stacks ``(batch, n, n)``; weight gradients are summed over the stack.

Gradients of matrix-valued inputs are expressed with respect to all entries
of the (symmetric) input, so a symmetric cotangent ``dy`` always maps to a
symmetric ``dx``.
"""

from typing import NamedTuple

import numpy as np

from .errors import BadLabel, DimensionMismatch, NotSpd
from .spd import EigDecomposition, loewner, spectral_apply, sym, sym_eig

__all__ = [
    "BiMapCache",
    "SpectralCache",
    "HeadCache",
    "bimap_forward",
    "bimap_backward",
    "reeig_forward",
    "reeig_backward",
    "logeig_forward",
    "logeig_backward",
    "shortcut_add",
    "shortcut_backward",
    "head_forward",
    "head_backward",
    "softmax",
]


class BiMapCache(NamedTuple):
    x: np.ndarray
    w: np.ndarray


class SpectralCache(NamedTuple):
    eig: EigDecomposition
    kind: str
    eps: float = 0.0


class HeadCache(NamedTuple):
    p: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    labels: np.ndarray
    dim: int


def _t(a):
    return np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------- BiMap


def bimap_forward(w, x):
    """Bilinear map ``Y = W^T X W``.

    Parameters
    ----------
    w : ndarray, shape (d_in, d_out)
        Semi-orthogonal weight. Tall (``d_out <= d_in``) for encoders, wide
        for decoders.
    x : ndarray, shape (..., d_in, d_in)

    Returns
    -------
    y : ndarray, shape (..., d_out, d_out)
    cache : BiMapCache
    """
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or x.shape[-2] != w.shape[0]:
        raise DimensionMismatch(f"bimap: weight {w.shape} vs input {x.shape}")
    return sym(w.T @ x @ w), BiMapCache(x, w)


def bimap_backward(w, cache, dy):
    """Backward of :func:`bimap_forward`.

    Returns
    -------
    dx : ndarray, shape (..., d_in, d_in)
        ``W dY W^T``.
    dw : ndarray, shape (d_in, d_out)
        ``X W dY + X^T W dY^T`` summed over any leading stack axes.
    """
    dy = np.asarray(dy, dtype=np.float64)
    x = cache.x
    if dy.shape[-1] != w.shape[1] or dy.shape[:-2] != x.shape[:-2]:
        raise DimensionMismatch(f"bimap backward: cotangent {dy.shape} vs weight {w.shape}")
    dx = w @ dy @ w.T
    dw = x @ w @ dy + _t(x) @ w @ _t(dy)
    if dw.ndim > 2:
        dw = dw.reshape(-1, *w.shape).sum(axis=0)
    return sym(dx), dw


# ---------------------------------------------------------------- spectral layers


def _reeig_g(eps):
    return (lambda t: np.maximum(eps, t)), (lambda t: (t > eps).astype(np.float64))


def _spectral_backward(cache, dy):
    s, u = cache.eig
    if cache.kind == "reeig":
        g, gp = _reeig_g(cache.eps)
    else:
        g, gp = np.log, np.reciprocal
    lw = loewner(s, g, gp)
    inner = _t(u) @ sym(dy) @ u
    return sym(u @ (lw * inner) @ _t(u))


def reeig_forward(x, eps, eig=None):
    """Eigenvalue rectification ``U max(eps I, S) U^T``.

    ``eig`` may supply an already known eigendecomposition of ``x``.
    """
    if eps <= 0:
        raise ValueError("ReEig threshold must be positive")
    if eig is None:
        eig = sym_eig(x)
    return spectral_apply(eig, lambda s: np.maximum(eps, s)), SpectralCache(eig, "reeig", eps)


def reeig_backward(cache, dy):
    """Backward of :func:`reeig_forward` through the Loewner kernel of ``max(eps, .)``.

    The derivative at an eigenvalue exactly equal to ``eps`` is taken as 0.
    """
    return _spectral_backward(cache, dy)


def logeig_forward(x, eig=None):
    """Matrix logarithm ``U log(S) U^T`` of SPD input.

    ``eig`` may supply an already known eigendecomposition of ``x``.
    """
    if eig is None:
        eig = sym_eig(x)
    if np.any(eig.eigenvalues <= 0):
        raise NotSpd(f"LogEig input has eigenvalue {np.min(eig.eigenvalues):.3e}")
    return spectral_apply(eig, np.log), SpectralCache(eig, "logeig")


def logeig_backward(cache, dy):
    return _spectral_backward(cache, dy)


# ---------------------------------------------------------------- shortcut


def shortcut_add(h, skip):
    h = np.asarray(h, dtype=np.float64)
    skip = np.asarray(skip, dtype=np.float64)
    if h.shape != skip.shape:
        raise DimensionMismatch(f"shortcut: {h.shape} vs {skip.shape}")
    return h + skip


def shortcut_backward(dy):
    """Both summands receive the upstream gradient unchanged."""
    return dy, dy


# ---------------------------------------------------------------- FC + softmax + CE


def softmax(logits):
    """Max-shifted softmax along the last axis."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def head_forward(p, x, label):
    """Fully connected layer on the row-major vectorization of ``x`` plus cross-entropy.

    Parameters
    ----------
    p : ndarray, shape (c, d*d)
        Projection matrix, one row per class.
    x : ndarray, shape (..., d, d)
    label : int or ndarray of int, shape x.shape[:-2]

    Returns
    -------
    loss : float or ndarray
        ``-log softmax(P vec(x))[label]`` per sample.
    probs : ndarray, shape (..., c)
    cache : HeadCache
    """
    p = np.asarray(p, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if x.shape[-2] != d or p.ndim != 2 or p.shape[1] != d * d:
        raise DimensionMismatch(f"head: projection {p.shape} vs input {x.shape}")
    labels = np.asarray(label)
    if labels.shape != x.shape[:-2] or not np.issubdtype(labels.dtype, np.integer):
        raise BadLabel(f"labels must be integers of shape {x.shape[:-2]}")
    c = p.shape[0]
    if np.any(labels < 0) or np.any(labels >= c):
        raise BadLabel(f"label outside [0, {c})")
    v = x.reshape(*x.shape[:-2], d * d)
    logits = v @ p.T
    shift = np.max(logits, axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(logits - shift), axis=-1)) + shift[..., 0]
    true = np.take_along_axis(logits, labels[..., None], axis=-1)[..., 0]
    loss = lse - true
    probs = softmax(logits)
    return loss, probs, HeadCache(p, v, probs, labels, d)


def head_backward(cache, dloss=1.0):
    """Backward of :func:`head_forward`.

    Parameters
    ----------
    cache : HeadCache
    dloss : float or ndarray
        Upstream gradient of each sample's loss (e.g. ``1 / batch``).

    Returns
    -------
    dp : ndarray, shape (c, d*d)
        Summed over samples.
    dx : ndarray, shape (..., d, d)
        Symmetrized input gradient.
    """
    c = cache.p.shape[0]
    onehot = np.eye(c)[cache.labels]
    dlogits = (cache.probs - onehot) * np.asarray(dloss, dtype=np.float64)[..., None]
    dp = dlogits.reshape(-1, c).T @ cache.v.reshape(-1, cache.v.shape[-1])
    dv = dlogits @ cache.p
    dx = dv.reshape(*dv.shape[:-1], cache.dim, cache.dim)
    return dp, sym(dx)
