"""Dense symmetric-matrix kernel.

Every function accepts a single matrix of shape ``(n, n)`` or a stack of
matrices of shape ``(..., n, n)`` unless stated otherwise. All arithmetic is
carried out in float64.
"""

from typing import Callable, NamedTuple

import numpy as np

from .errors import ConvergenceFailure, DegenerateSet, DimensionMismatch, NonFinite, NotSpd

__all__ = [
    "EigDecomposition",
    "sym",
    "sym_eig",
    "spectral_apply",
    "loewner",
    "covariance_descriptor",
    "frobenius_dist2",
    "lem_dist2",
    "logm",
    "is_spd",
    "nuclear_norm",
]

REGULARIZATION_RATIO = 1e-3
DEGENERATE_TRACE = 1e-12


class EigDecomposition(NamedTuple):
    """Ascending eigenvalues and matching orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def sym(a):
    """Return the symmetric part ``(A + A^T) / 2`` of (stacked) square matrices."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionMismatch(f"expected square matrices, got shape {a.shape}")
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def sym_eig(x):
    """Deterministic symmetric eigendecomposition.

    Parameters
    ----------
    x : ndarray, shape (..., n, n)
        Symmetric matrices. Only the symmetric part is used.

    Returns
    -------
    EigDecomposition
        Eigenvalues in ascending order, shape (..., n), and eigenvectors,
        shape (..., n, n), with column ``i`` paired with eigenvalue ``i``. Each
        eigenvector is sign-fixed so that its entry of largest magnitude is
        non-negative.

    Raises
    ------
    NonFinite
        If ``x`` holds NaN or infinite entries.
    ConvergenceFailure
        If LAPACK fails to converge.
    """
    x = sym(x)
    if not np.all(np.isfinite(x)):
        raise NonFinite("sym_eig received non-finite entries")
    try:
        s, u = np.linalg.eigh(x)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ConvergenceFailure(str(exc)) from exc
    idx = np.argmax(np.abs(u), axis=-2)
    pivots = np.take_along_axis(u, idx[..., None, :], axis=-2)
    signs = np.where(pivots < 0, -1.0, 1.0)
    return EigDecomposition(s, u * signs)


def spectral_apply(eig, fn):
    """Rebuild ``U diag(fn(s)) U^T`` from an eigendecomposition."""
    s, u = eig
    return sym((u * fn(s)[..., None, :]) @ np.swapaxes(u, -1, -2))


def loewner(eigenvalues, g: Callable, g_prime: Callable):
    """Divided-difference (Loewner) matrix of a scalar function.

    ``L[i, j] = (g(s_i) - g(s_j)) / (s_i - s_j)`` for well-separated
    eigenvalues and ``g'((s_i + s_j) / 2)`` when
    ``|s_i - s_j| <= 1e-10 * max(1, max|s|)``.

    Parameters
    ----------
    eigenvalues : ndarray, shape (..., n)
    g, g_prime : callable
        Vectorized scalar function and its derivative.

    Returns
    -------
    L : ndarray, shape (..., n, n)
        Symmetric kernel.
    """
    s = np.asarray(eigenvalues, dtype=np.float64)
    gs = g(s)
    diff = s[..., :, None] - s[..., None, :]
    gdiff = gs[..., :, None] - gs[..., None, :]
    delta = 1e-10 * np.maximum(1.0, np.max(np.abs(s), axis=-1))
    close = np.abs(diff) <= delta[..., None, None]
    mid = 0.5 * (s[..., :, None] + s[..., None, :])
    safe = np.where(close, 1.0, diff)
    out = np.where(close, g_prime(mid), gdiff / safe)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def covariance_descriptor(frames):
    """Regularized covariance of a set of vectorized frames.

    Parameters
    ----------
    frames : ndarray, shape (n_frames, dim)
        One vectorized frame per row; ``n_frames >= 2``.

    Returns
    -------
    X : ndarray, shape (dim, dim)
        ``C + trace(C) * 1e-3 * I`` where ``C`` is the unbiased sample
        covariance.

    Raises
    ------
    DimensionMismatch
        If ``frames`` is not 2-D or holds fewer than two frames.
    DegenerateSet
        If ``trace(C) <= 1e-12`` (all frames identical).
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 2:
        raise DimensionMismatch(f"need a (n_frames>=2, dim) array, got {frames.shape}")
    centered = frames - frames.mean(axis=0)
    cov = sym(centered.T @ centered / (frames.shape[0] - 1))
    tr = np.trace(cov)
    if tr <= DEGENERATE_TRACE:
        raise DegenerateSet(f"covariance trace {tr:.3e} is too small to regularize")
    return cov + REGULARIZATION_RATIO * tr * np.eye(cov.shape[0])


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-2:] != b.shape[-2:]:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    return a, b


def frobenius_dist2(a, b):
    """Squared Frobenius distance ``||A - B||_F^2`` (per matrix for stacks)."""
    a, b = _check_pair(a, b)
    d = a - b
    return np.sum(d * d, axis=(-2, -1))


def logm(a):
    """Matrix logarithm of SPD matrices via :func:`sym_eig`.

    Raises
    ------
    NotSpd
        If any eigenvalue is non-positive.
    """
    eig = sym_eig(a)
    if np.any(eig.eigenvalues <= 0):
        raise NotSpd(f"smallest eigenvalue {np.min(eig.eigenvalues):.3e} <= 0")
    return spectral_apply(eig, np.log)


def lem_dist2(a, b):
    """Squared Log-Euclidean distance ``||log(A) - log(B)||_F^2``."""
    a, b = _check_pair(a, b)
    return frobenius_dist2(logm(a), logm(b))


def is_spd(a, tol=0.0):
    """Return True iff every matrix has smallest eigenvalue strictly above ``tol``."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        return False
    s = np.linalg.eigvalsh(sym(a))
    return bool(np.all(s[..., 0] > tol))


def nuclear_norm(a):
    """Sum of absolute eigenvalues of symmetric matrices."""
    s = np.linalg.eigvalsh(sym(a))
    return np.sum(np.abs(s), axis=-1)
