"""Central finite-difference checks of every backward pass.

The numeric side only ever evaluates forward functions.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import NonFinite
from .network import ModelConfig, build, forward, loss_and_grads
from .optim import init_semi_orthogonal
from .spd import covariance_descriptor, sym

__all__ = [
    "CheckReport",
    "LAYERS",
    "DEFAULT_TOL",
    "finite_diff",
    "relative_error",
    "check_layer",
    "check_model",
    "TINY_CONFIG",
]

LAYERS = ("bimap", "reeig", "logeig", "shortcut", "head")
DEFAULT_TOL = {"bimap": 1e-7, "reeig": 1e-6, "logeig": 1e-6, "shortcut": 1e-12, "head": 1e-7}
TINY_CONFIG = ModelConfig(backbone_dims=(8, 6, 4), num_rae=2, rae_hidden_dim=4, num_classes=3)

EIGENGAP = 0.1
KINK_MARGIN = 1e-3


@dataclass
class CheckReport:
    """Per-block relative errors of one check run."""

    name: str
    tol: float
    h: float
    errors: dict = field(default_factory=dict)

    def add(self, block, err):
        self.errors[block] = max(err, self.errors.get(block, 0.0))

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return all(e <= self.tol for e in self.errors.values())

    @property
    def failures(self):
        return {b: e for b, e in self.errors.items() if e > self.tol}

    def lines(self):
        out = []
        for block, err in self.errors.items():
            status = "PASS" if err <= self.tol else "FAIL"
            out.append(f"{self.name:<10} {block:<14} {err:10.3e}  tol={self.tol:.0e}  {status}")
        return out


def relative_error(analytic, numeric):
    """``||a - n||_F / max(1e-12, ||a||_F + ||n||_F)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.linalg.norm(a - n) / max(1e-12, np.linalg.norm(a) + np.linalg.norm(n)))


def _pow2(h):
    # power-of-two steps keep x +/- h exact for dyadic x
    return 2.0 ** round(math.log2(h))


def finite_diff(f, x, h=1e-5, symmetric=False):
    """Central-difference gradient of a scalar function.

    Parameters
    ----------
    f : callable
        Maps an array shaped like ``x`` to a scalar.
    x : ndarray
    h : float
        Step, rounded to the nearest power of two.
    symmetric : bool
        Treat ``x`` as a symmetric matrix: entries ``(i, j)`` and ``(j, i)``
        move together and the pair's derivative is split evenly between them,
        which matches the gradient convention of the layer backward passes.

    Returns
    -------
    ndarray, shape of ``x``
    """
    x = np.array(x, dtype=np.float64)
    h = _pow2(h)
    grad = np.zeros_like(x)

    def central(direction):
        fp = f(x + h * direction)
        fm = f(x - h * direction)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFinite("function not finite near the evaluation point")
        return (fp - fm) / (2.0 * h)

    if symmetric:
        n = x.shape[-1]
        for i in range(n):
            for j in range(i, n):
                e = np.zeros_like(x)
                e[..., i, j] = 1.0
                e[..., j, i] = 1.0
                d = central(e)
                if i == j:
                    grad[..., i, i] = d
                else:
                    grad[..., i, j] = grad[..., j, i] = 0.5 * d
        return grad
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = 1.0
        grad[idx] = central(e)
    return grad


# ---------------------------------------------------------------- random instances


def _rand_orth(rng, n):
    return init_semi_orthogonal(n, n, rng)


def _spaced_eigenvalues(rng, n, low, high, avoid=None):
    while True:
        s = np.sort(rng.uniform(low, high, n))
        if n > 1 and np.min(np.diff(s)) < EIGENGAP:
            continue
        if avoid is not None and np.min(np.abs(s - avoid)) < KINK_MARGIN:
            continue
        return s


def _sym_with_spectrum(rng, s):
    u = _rand_orth(rng, len(s))
    return sym((u * s) @ u.T)


def _rand_sym(rng, n):
    return sym(rng.standard_normal((n, n)))


def _rand_spd(rng, n):
    frames = rng.standard_normal((3 * n, n))
    return covariance_descriptor(frames)


def _trial_bimap(rng, h, report):
    d_in = int(rng.integers(2, 11))
    d_out = int(rng.integers(1, d_in + 1))
    w = init_semi_orthogonal(d_in, d_out, rng)
    x = _rand_spd(rng, d_in)
    dy = _rand_sym(rng, d_out)
    dx, dw = layers.bimap_backward(w, layers.bimap_forward(w, x)[1], dy)
    nx = finite_diff(lambda xx: np.sum(dy * layers.bimap_forward(w, xx)[0]), x, h, symmetric=True)
    nw = finite_diff(lambda ww: np.sum(dy * layers.bimap_forward(ww, x)[0]), w, h)
    report.add("dx", relative_error(dx, nx))
    report.add("dw", relative_error(dw, nw))


def _trial_reeig(rng, h, report):
    n = int(rng.integers(2, 9))
    eps = float(rng.choice([1e-4, 0.25, 0.5]))
    s = _spaced_eigenvalues(rng, n, -1.0, 2.0, avoid=eps)
    while s[-1] < eps:  # an all-clamped spectrum has an identically zero gradient
        s = _spaced_eigenvalues(rng, n, -1.0, 2.0, avoid=eps)
    x = _sym_with_spectrum(rng, s)
    dy = _rand_sym(rng, n)
    dx = layers.reeig_backward(layers.reeig_forward(x, eps)[1], dy)
    nx = finite_diff(lambda xx: np.sum(dy * layers.reeig_forward(xx, eps)[0]), x, h, symmetric=True)
    report.add("dx", relative_error(dx, nx))


def _trial_logeig(rng, h, report):
    n = int(rng.integers(2, 9))
    s = _spaced_eigenvalues(rng, n, 0.2, 3.0)
    x = _sym_with_spectrum(rng, s)
    dy = _rand_sym(rng, n)
    dx = layers.logeig_backward(layers.logeig_forward(x)[1], dy)
    nx = finite_diff(lambda xx: np.sum(dy * layers.logeig_forward(xx)[0]), x, h, symmetric=True)
    report.add("dx", relative_error(dx, nx))


def _trial_shortcut(rng, h, report):
    n = int(rng.integers(2, 11))

    def dyadic():
        return sym(rng.integers(-16, 17, (n, n)) / 8.0)

    a, b, dy = dyadic(), dyadic(), dyadic()
    da, db = layers.shortcut_backward(dy)
    na = finite_diff(lambda aa: np.sum(dy * layers.shortcut_add(aa, b)), a, h, symmetric=True)
    nb = finite_diff(lambda bb: np.sum(dy * layers.shortcut_add(a, bb)), b, h, symmetric=True)
    report.add("dh", relative_error(da, na))
    report.add("dskip", relative_error(db, nb))


def _trial_head(rng, h, report):
    d = int(rng.integers(2, 6))
    c = int(rng.integers(2, 6))
    p = rng.standard_normal((c, d * d)) / d
    x = _rand_sym(rng, d)
    label = int(rng.integers(c))
    _, _, cache = layers.head_forward(p, x, label)
    dp, dx = layers.head_backward(cache)
    npp = finite_diff(lambda pp: layers.head_forward(pp, x, label)[0], p, h)
    nx = finite_diff(lambda xx: layers.head_forward(p, xx, label)[0], x, h, symmetric=True)
    report.add("dp", relative_error(dp, npp))
    report.add("dx", relative_error(dx, nx))


_TRIALS = {
    "bimap": _trial_bimap,
    "reeig": _trial_reeig,
    "logeig": _trial_logeig,
    "shortcut": _trial_shortcut,
    "head": _trial_head,
}


def check_layer(layer, trials=20, tol=None, h=1e-5, seed=0):
    """Finite-difference check of one layer on ``trials`` seeded random instances.

    Random spectra keep every eigengap at least 0.1 and every ReEig
    eigenvalue at least 1e-3 away from the threshold.

    Returns
    -------
    CheckReport
        Worst relative error per gradient block over all trials.
    """
    if layer not in _TRIALS:
        raise ValueError(f"unknown layer {layer!r}; choose from {LAYERS}")
    tol = DEFAULT_TOL[layer] if tol is None else tol
    report = CheckReport(layer, tol, h)
    for t in range(trials):
        _TRIALS[layer](np.random.default_rng([seed, t]), h, report)
    return report


def check_model(config=TINY_CONFIG, batch_size=2, tol=1e-4, h=1e-5, seed=0, lambda_rt=None):
    """Finite-difference check of every parameter entry of the full objective."""
    model = build(config)
    rng = np.random.default_rng(seed)
    n = config.backbone_dims[0]
    x = np.stack([_rand_spd(rng, n) for _ in range(batch_size)])
    labels = rng.integers(0, config.num_classes, batch_size)
    _, grads, _ = loss_and_grads(model, x, labels, lambda_rt)
    report = CheckReport("model", tol, h)
    for name, w in model.params.items():

        def f(ww, name=name):
            params = dict(model.params)
            params[name] = ww
            return forward(type(model)(model.config, params), x, labels, lambda_rt).total

        report.add(name, relative_error(grads[name], finite_diff(f, w, h)))
    return report
