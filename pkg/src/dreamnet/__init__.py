"""Deep networks on symmetric positive definite matrices.

An SPDNet-style backbone (BiMap / ReEig layers) feeds a stack of Riemannian
autoencoder stages joined by shortcut additions; every stage carries a
LogEig + softmax classifier and the stages vote on the final label. BiMap
weights live on the Stiefel manifold and are trained by projected SGD with
a QR retraction.
"""

from . import gradcheck, layers, optim, spd
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SampleSet, SynthSpec, load_dataset, save_dataset, split, synth_generate
from .errors import *  # noqa: F401,F403
from .network import (
    PRESETS,
    Model,
    ModelConfig,
    build,
    feature_stats,
    forward,
    loss_and_grads,
    predict_vote,
    preset,
    truncate,
    vote,
)
from .optim import OptimState, sgd_step
from .train import evaluate, fit

__version__ = "0.1.0"
