"""Riemannian SGD on the Stiefel manifold plus plain SGD for dense weights.

Stiefel points are stored tall, ``W`` of shape ``(n, p)`` with ``n >= p`` and
``W^T W = I``. Wide weights are kept as their transpose by the caller.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import BadShape, RankDeficient

__all__ = [
    "OptimState",
    "qf",
    "init_semi_orthogonal",
    "stiefel_project",
    "stiefel_retract",
    "gram_residual",
    "sgd_step",
]


@dataclass
class OptimState:
    """Learning-rate schedule and step counter.

    With ``decay_factor`` and ``decay_period`` set, the rate is multiplied by
    ``decay_factor`` once every ``decay_period`` epochs, where an epoch spans
    ``steps_per_epoch`` optimizer steps.
    """

    lr: float = 0.01
    decay_factor: float | None = None
    decay_period: int | None = None
    steps_per_epoch: int = 1
    step: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if (self.decay_factor is None) != (self.decay_period is None):
            raise ValueError("decay_factor and decay_period must be given together")
        if self.decay_period is not None and self.decay_period < 1:
            raise ValueError("decay_period must be >= 1")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")

    @property
    def current_lr(self):
        if self.decay_factor is None:
            return self.lr
        epochs = self.step // self.steps_per_epoch
        return self.lr * self.decay_factor ** (epochs // self.decay_period)


def qf(a, tol=1e-12):
    """Q factor of the thin QR decomposition with a non-negative R diagonal."""
    a = np.asarray(a, dtype=np.float64)
    q, r = np.linalg.qr(a)
    d = np.diag(r)
    scale = max(1.0, float(np.max(np.abs(d)))) if d.size else 1.0
    if np.any(np.abs(d) <= tol * scale):
        raise RankDeficient("QR retraction hit a (numerically) zero R diagonal")
    return q * np.where(d < 0, -1.0, 1.0)


def init_semi_orthogonal(n, p, seed):
    """Random ``n x p`` matrix with orthonormal columns.

    Parameters
    ----------
    n, p : int
        Shape, ``n >= p``.
    seed : int or numpy.random.Generator

    Returns
    -------
    W : ndarray, shape (n, p)
    """
    if not (n >= p >= 1):
        raise BadShape(f"need n >= p >= 1, got ({n}, {p})")
    rng = np.random.default_rng(seed)
    return qf(rng.standard_normal((n, p)))


def _check_tall(w, g=None):
    if w.ndim != 2 or w.shape[0] < w.shape[1]:
        raise BadShape(f"Stiefel point must be tall, got {w.shape}")
    if g is not None and g.shape != w.shape:
        raise BadShape(f"gradient {g.shape} does not match point {w.shape}")


def stiefel_project(w, g):
    """Project a Euclidean gradient onto the tangent space at ``w``: ``G - W sym(W^T G)``."""
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    _check_tall(w, g)
    wtg = w.T @ g
    return g - w @ (0.5 * (wtg + wtg.T))


def stiefel_retract(w, direction, lr):
    """QR retraction ``qf(W - lr * direction)``."""
    w = np.asarray(w, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    _check_tall(w, direction)
    return qf(w - lr * direction)


def gram_residual(w):
    """``||W^T W - I||_F`` on the thin side of ``w``."""
    w = np.asarray(w)
    gram = w.T @ w if w.shape[0] >= w.shape[1] else w @ w.T
    return float(np.linalg.norm(gram - np.eye(gram.shape[0])))


def sgd_step(model, grads, state):
    """One optimizer step.

    Stiefel weights move by project-then-retract, every other parameter by
    ``W - lr * dW``. Parameters missing from ``grads`` are left untouched.

    Returns a new model; ``state.step`` is incremented in place.
    """
    lr = state.current_lr
    params = {}
    for name, w in model.params.items():
        g = grads.get(name)
        if g is None:
            params[name] = w
            continue
        if g.shape != w.shape:
            raise BadShape(f"{name}: gradient {g.shape} vs parameter {w.shape}")
        if name in model.stiefel_names:
            params[name] = stiefel_retract(w, stiefel_project(w, g), lr)
        else:
            params[name] = w - lr * g
    state.step += 1
    return dataclasses.replace(model, params=params)
