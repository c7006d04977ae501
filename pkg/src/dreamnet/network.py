"""DreamNet: SPDNet backbone, stacked Riemannian autoencoders, per-stage heads.

Data flow for one sample ``X`` (``r`` is ReEig, ``b(W, .)`` is BiMap)::

    Z        = backbone(X)                  BiMap (ReEig BiMap)*, no trailing ReEig
    M_1      = Z,  M_e = Hhat_{e-1}
    H_e      = b(W_e1, r(M_e))
    S_e      = H_e + H_1        (e == 2, shortcuts on)
             = H_e + Ht_{e-1}   (e >= 3, shortcuts on)
             = H_e              (otherwise)
    Ht_e     = r(S_e)
    Hhat_e   = b(W_e2, Ht_e)
    loss_e   = CE(P_e vec(log Ht_e), label)

The per-sample objective is ``sum_e loss_e + lambda_rt * RT`` with
``RT = dist(Z, Hhat_E)`` (or summed over every stage when ``rt_mode='all'``);
batches use the mean over samples.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import layers
from .errors import BadConfig, DimensionMismatch
from .optim import gram_residual, init_semi_orthogonal
from .spd import EigDecomposition, frobenius_dist2, nuclear_norm

__all__ = [
    "ModelConfig",
    "Model",
    "StageTrace",
    "ForwardTrace",
    "PRESETS",
    "preset",
    "build",
    "forward",
    "loss_and_grads",
    "predict_vote",
    "feature_stats",
    "truncate",
]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and objective settings.

    Parameters
    ----------
    backbone_dims : tuple of int
        Strictly decreasing dimensions; ``len - 1`` BiMap layers.
    num_rae : int
        Number of stacked autoencoder stages ``E``.
    rae_hidden_dim : int
        Hidden dimension shared by every stage, at most ``backbone_dims[-1]``.
    num_classes : int
    eps : float
        ReEig threshold.
    lambda_rt : float
        Weight of the reconstruction term.
    shortcuts : bool
        Residual additions between adjacent stages.
    heads : {'all', 'final'}
        One classifier per stage, or only on the last one.
    rt_mode : {'final', 'all'}
        Reconstruction term on the last stage only, or summed over stages.
    rt_metric : {'euclidean', 'log-euclidean'}
    seed : int
    """

    backbone_dims: tuple = (20, 16, 12)
    num_rae: int = 3
    rae_hidden_dim: int = 12
    num_classes: int = 3
    eps: float = 1e-4
    lambda_rt: float = 1e-4
    shortcuts: bool = True
    heads: str = "all"
    rt_mode: str = "final"
    rt_metric: str = "euclidean"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "backbone_dims", tuple(int(d) for d in self.backbone_dims))

    def validate(self):
        dims = self.backbone_dims
        if len(dims) < 2:
            raise BadConfig("backbone_dims needs at least two entries")
        if any(d < 1 for d in dims):
            raise BadConfig("backbone_dims must be positive")
        if any(a <= b for a, b in zip(dims, dims[1:])):
            raise BadConfig(f"backbone_dims must be strictly decreasing, got {dims}")
        if self.num_rae < 1:
            raise BadConfig("num_rae must be >= 1")
        if not (1 <= self.rae_hidden_dim <= dims[-1]):
            raise BadConfig(
                f"rae_hidden_dim must be in [1, {dims[-1]}], got {self.rae_hidden_dim}"
            )
        if self.num_classes < 2:
            raise BadConfig("num_classes must be >= 2")
        if not self.eps > 0:
            raise BadConfig("eps must be positive")
        if not self.lambda_rt >= 0:
            raise BadConfig("lambda_rt must be non-negative")
        if self.heads not in ("all", "final"):
            raise BadConfig(f"heads must be 'all' or 'final', got {self.heads!r}")
        if self.rt_mode not in ("final", "all"):
            raise BadConfig(f"rt_mode must be 'final' or 'all', got {self.rt_mode!r}")
        if self.rt_metric not in ("euclidean", "log-euclidean"):
            raise BadConfig(f"unknown rt_metric {self.rt_metric!r}")
        if self.rt_metric == "log-euclidean" and self.rae_hidden_dim != dims[-1]:
            # a rank-deficient reconstruction has no matrix logarithm
            raise BadConfig("rt_metric='log-euclidean' requires rae_hidden_dim == backbone_dims[-1]")
        return self

    @property
    def head_stages(self):
        return list(range(1, self.num_rae + 1)) if self.heads == "all" else [self.num_rae]

    @property
    def rt_stages(self):
        return list(range(1, self.num_rae + 1)) if self.rt_mode == "all" else [self.num_rae]

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["backbone_dims"] = list(self.backbone_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise BadConfig(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# The third backbone filter listed for each dataset coincides with the first
# autoencoder's encoder (same shape), so it is not duplicated here.
PRESETS = {
    "afew": dict(backbone_dims=(400, 200, 100), rae_hidden_dim=50, num_classes=7, eps=1e-4),
    "fpha": dict(backbone_dims=(63, 53, 43), rae_hidden_dim=33, num_classes=45, eps=1e-4),
    "uav": dict(backbone_dims=(51, 43, 37), rae_hidden_dim=31, num_classes=155, eps=1e-5),
    "reference": dict(backbone_dims=(20, 16, 12), rae_hidden_dim=12, num_classes=3, eps=1e-4),
}

# Decoders within this Gram residual count as orthogonal when reusing the
# eigendecomposition of Ht_e for the next stage's input.
ROTATION_REUSE_TOL = 1e-10

# network depth names used for the three depths studied
DEPTH_NAMES = {27: 3, 47: 5, 92: 10}


def preset(name, **overrides):
    """Configuration for a named dataset setting, e.g. ``preset('fpha', num_rae=5)``."""
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise BadConfig(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return ModelConfig(**base).validate()


@dataclass(frozen=True)
class Model:
    """Instantiated parameters.

    ``params`` maps names to arrays:

    - ``backbone.k``: ``(d_k, d_{k+1})`` BiMap weights
    - ``enc.e``: ``(d, d_e)`` encoder weight ``W_e1``
    - ``dec.e``: ``(d, d_e)`` decoder weight stored as ``W_e2^T``
    - ``head.e``: ``(c, d_e**2)`` classifier projection
    """

    config: ModelConfig
    params: dict = field(default_factory=dict)

    @property
    def stiefel_names(self):
        return frozenset(n for n in self.params if not n.startswith("head."))

    def decoder(self, e):
        """Decoder weight ``W_e2`` in its native wide orientation."""
        return self.params[f"dec.{e}"].T

    def expected_shapes(self):
        return _param_shapes(self.config)

    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))


def _param_shapes(config):
    dims = config.backbone_dims
    d, de = dims[-1], config.rae_hidden_dim
    shapes = {}
    for k in range(len(dims) - 1):
        shapes[f"backbone.{k}"] = (dims[k], dims[k + 1])
    for e in range(1, config.num_rae + 1):
        shapes[f"enc.{e}"] = (d, de)
        shapes[f"dec.{e}"] = (d, de)
    for e in config.head_stages:
        shapes[f"head.{e}"] = (config.num_classes, de * de)
    return shapes


def build(config):
    """Draw a model from ``config``: semi-orthogonal BiMap weights, normal heads.

    Head entries are i.i.d. normal with standard deviation ``1 / rae_hidden_dim``.
    The result is a deterministic function of ``config`` (including its seed).
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in _param_shapes(config).items():
        if name.startswith("head."):
            params[name] = rng.standard_normal(shape) / config.rae_hidden_dim
        else:
            params[name] = init_semi_orthogonal(*shape, rng)
    return Model(config, params)


def truncate(model, num_rae):
    """Model made of the first ``num_rae`` stages of ``model`` (same weights)."""
    cfg = dataclasses.replace(model.config, num_rae=num_rae).validate()
    missing = [n for n in _param_shapes(cfg) if n not in model.params]
    if missing:
        raise BadConfig(f"cannot truncate: model lacks {missing}")
    return Model(cfg, {n: model.params[n] for n in _param_shapes(cfg)})


# ---------------------------------------------------------------- forward


@dataclass
class StageTrace:
    h: np.ndarray
    h_tilde: np.ndarray
    h_hat: np.ndarray
    probs: np.ndarray | None = None
    loss: np.ndarray | None = None
    cache: dict = field(default_factory=dict, repr=False)


@dataclass
class ForwardTrace:
    """Intermediate features and losses of one forward pass.

    Array fields keep the input's leading batch axes. ``total`` is the batch
    mean of ``ce + lambda_rt * rt``; ``ce_mean`` and ``rt_mean`` are the means
    of the two terms.
    """

    z: np.ndarray
    stages: list
    ce: np.ndarray | None
    rt: np.ndarray
    ce_mean: float | None
    rt_mean: float
    lambda_rt: float
    total: float | None
    backbone_cache: list = field(default_factory=list, repr=False)
    rt_cache: dict = field(default_factory=dict, repr=False)

    def head_probs(self, config):
        return [self.stages[e - 1].probs for e in config.head_stages]


def _rt_distance(config, z, h_hat, e, cache):
    if config.rt_metric == "euclidean":
        return frobenius_dist2(z, h_hat)
    if "log_z" not in cache:
        cache["log_z"] = layers.logeig_forward(z)
    log_z, _ = cache["log_z"]
    cache[e] = layers.logeig_forward(h_hat)
    return frobenius_dist2(log_z, cache[e][0])


def forward(model, x, labels=None, lambda_rt=None):
    """Run the network on one matrix ``(n, n)`` or a batch ``(B, n, n)``.

    Parameters
    ----------
    model : Model
    x : ndarray
    labels : int or ndarray of int, optional
        Without labels only class probabilities are produced.
    lambda_rt : float, optional
        Overrides ``model.config.lambda_rt``.

    Returns
    -------
    ForwardTrace
    """
    cfg = model.config
    lam = cfg.lambda_rt if lambda_rt is None else float(lambda_rt)
    x = np.asarray(x, dtype=np.float64)
    n0 = cfg.backbone_dims[0]
    if x.shape[-2:] != (n0, n0):
        raise DimensionMismatch(f"input of shape {x.shape[-2:]}, model expects ({n0}, {n0})")
    lead = x.shape[:-2]
    have_labels = labels is not None
    lab = np.asarray(labels) if have_labels else np.zeros(lead, dtype=np.int64)

    # backbone
    bcache = []
    nb = len(cfg.backbone_dims) - 1
    out = x
    for k in range(nb):
        if k > 0:
            out, c = layers.reeig_forward(out, cfg.eps)
            bcache.append(("reeig", c))
        out, c = layers.bimap_forward(model.params[f"backbone.{k}"], out)
        bcache.append(("bimap", c))
    z = out

    heads = set(cfg.head_stages)
    square = cfg.rae_hidden_dim == cfg.backbone_dims[-1]
    stages = []
    m, m_eig = z, None
    ce = np.zeros(lead)
    for e in range(1, cfg.num_rae + 1):
        cache = {}
        r, cache["reeig_in"] = layers.reeig_forward(m, cfg.eps, m_eig)
        h, cache["enc"] = layers.bimap_forward(model.params[f"enc.{e}"], r)
        if cfg.shortcuts and e >= 2:
            skip = stages[0].h if e == 2 else stages[-1].h_tilde
            s = layers.shortcut_add(h, skip)
        else:
            s = h
        ht, cache["reeig_out"] = layers.reeig_forward(s, cfg.eps)
        s_eig = cache["reeig_out"].eig
        ht_eig = EigDecomposition(np.maximum(cfg.eps, s_eig.eigenvalues), s_eig.eigenvectors)
        hh, cache["dec"] = layers.bimap_forward(model.decoder(e), ht)
        st = StageTrace(h=h, h_tilde=ht, h_hat=hh, cache=cache)
        if e in heads:
            logh, cache["logeig"] = layers.logeig_forward(ht, ht_eig)
            loss, probs, cache["head"] = layers.head_forward(model.params[f"head.{e}"], logh, lab)
            st.probs = probs
            if have_labels:
                st.loss = loss
                ce = ce + loss
        stages.append(st)
        m = hh
        # an orthogonal decoder rotates the known spectrum of Ht_e onto Hhat_e
        dec = model.params[f"dec.{e}"]
        if square and gram_residual(dec) <= ROTATION_REUSE_TOL:
            m_eig = EigDecomposition(ht_eig.eigenvalues, dec @ ht_eig.eigenvectors)
        else:
            m_eig = None

    rt_cache = {}
    rt = np.zeros(lead)
    for e in cfg.rt_stages:
        rt = rt + _rt_distance(cfg, z, stages[e - 1].h_hat, e, rt_cache)
    rt_mean = float(np.mean(rt))
    if have_labels:
        ce_mean = float(np.mean(ce))
        total = ce_mean + lam * rt_mean
    else:
        ce, ce_mean, total = None, None, None
    return ForwardTrace(
        z=z,
        stages=stages,
        ce=ce,
        rt=rt,
        ce_mean=ce_mean,
        rt_mean=rt_mean,
        lambda_rt=lam,
        total=total,
        backbone_cache=bcache,
        rt_cache=rt_cache,
    )


# ---------------------------------------------------------------- backward


def _batch_size(x):
    lead = np.shape(x)[:-2]
    return int(np.prod(lead)) if lead else 1


def loss_and_grads(model, x, labels, lambda_rt=None):
    """Batch-mean objective and its Euclidean gradient for every parameter.

    Returns
    -------
    loss : float
    grads : dict
        Same keys and shapes as ``model.params``; decoder gradients are with
        respect to the stored (transposed) decoder weight.
    trace : ForwardTrace
    """
    cfg = model.config
    trace = forward(model, x, labels, lambda_rt)
    scale = 1.0 / _batch_size(x)
    lam = trace.lambda_rt
    E = cfg.num_rae
    zeros = np.zeros_like
    grads = {}

    d_z = zeros(trace.z)
    d_hhat = [zeros(st.h_hat) for st in trace.stages]
    d_ht = [zeros(st.h_tilde) for st in trace.stages]
    d_h = [zeros(st.h) for st in trace.stages]

    # reconstruction term
    w_rt = 2.0 * lam * scale
    for e in cfg.rt_stages:
        hh = trace.stages[e - 1].h_hat
        if cfg.rt_metric == "euclidean":
            diff = w_rt * (trace.z - hh)
            d_z += diff
            d_hhat[e - 1] -= diff
        else:
            log_z, cz = trace.rt_cache["log_z"]
            log_h, ch = trace.rt_cache[e]
            diff = w_rt * (log_z - log_h)
            d_z += layers.logeig_backward(cz, diff)
            d_hhat[e - 1] -= layers.logeig_backward(ch, diff)

    for e in range(E, 0, -1):
        st = trace.stages[e - 1]
        c = st.cache
        i = e - 1
        if "head" in c:
            dp, dlog = layers.head_backward(c["head"], scale)
            grads[f"head.{e}"] = dp
            d_ht[i] += layers.logeig_backward(c["logeig"], dlog)
        d_ht_dec, dw2 = layers.bimap_backward(model.decoder(e), c["dec"], d_hhat[i])
        grads[f"dec.{e}"] = dw2.T
        d_ht[i] += d_ht_dec
        d_s = layers.reeig_backward(c["reeig_out"], d_ht[i])
        if cfg.shortcuts and e >= 2:
            d_add, d_skip = layers.shortcut_backward(d_s)
            d_h[i] += d_add
            if e == 2:
                d_h[0] += d_skip
            else:
                d_ht[i - 1] += d_skip
        else:
            d_h[i] += d_s
        d_r, dw1 = layers.bimap_backward(model.params[f"enc.{e}"], c["enc"], d_h[i])
        grads[f"enc.{e}"] = dw1
        d_m = layers.reeig_backward(c["reeig_in"], d_r)
        if e == 1:
            d_z += d_m
        else:
            d_hhat[i - 1] += d_m

    g = d_z
    nb = len(cfg.backbone_dims) - 1
    k = nb - 1
    for kind, c in reversed(trace.backbone_cache):
        if kind == "bimap":
            g, dw = layers.bimap_backward(model.params[f"backbone.{k}"], c, g)
            grads[f"backbone.{k}"] = dw
            k -= 1
        else:
            g = layers.reeig_backward(c, g)
    return trace.total, grads, trace


# ---------------------------------------------------------------- inference


def vote(head_labels, head_probs, num_classes):
    """Majority vote over heads.

    Ties go to the class with the largest summed probability among the tied
    classes, then to the smallest class index.

    Parameters
    ----------
    head_labels : ndarray of int, shape (B, H)
    head_probs : ndarray, shape (B, H, c)

    Returns
    -------
    ndarray of int, shape (B,)
    """
    head_labels = np.asarray(head_labels)
    counts = np.zeros((head_labels.shape[0], num_classes), dtype=np.int64)
    np.add.at(counts, (np.arange(head_labels.shape[0])[:, None], head_labels), 1)
    top = counts == counts.max(axis=1, keepdims=True)
    score = np.where(top, np.asarray(head_probs).sum(axis=1), -np.inf)
    return np.argmax(score, axis=1)


def predict_vote(model, x):
    """Voted prediction.

    Returns
    -------
    label : int or ndarray of int
    head_labels : ndarray of int, shape (..., H)
    head_probs : ndarray, shape (..., H, c)
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    xb = x[None] if single else x
    trace = forward(model, xb)
    probs = np.stack(trace.head_probs(model.config), axis=1)
    head_labels = np.argmax(probs, axis=-1)
    label = vote(head_labels, probs, model.config.num_classes)
    if single:
        return int(label[0]), head_labels[0], probs[0]
    return label, head_labels, probs


def feature_tags(config):
    return ["z"] + [f"h_tilde_{e}" for e in range(1, config.num_rae + 1)] + [f"h_hat_{config.num_rae}"]


def feature_stats(model, x):
    """Nuclear norms of the backbone output, every ``Ht_e`` and the final reconstruction.

    Returns
    -------
    list of (str, float or ndarray)
    """
    trace = forward(model, x)
    feats = [trace.z] + [st.h_tilde for st in trace.stages] + [trace.stages[-1].h_hat]
    return [(tag, nuclear_norm(f)) for tag, f in zip(feature_tags(model.config), feats)]
