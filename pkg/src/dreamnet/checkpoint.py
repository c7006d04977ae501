"""Model checkpoints.

A checkpoint is a zip container with fixed timestamps (byte-reproducible)::

    FORMAT          "dreamnet-checkpoint 1"
    config.json     ModelConfig echo
    meta.json       parameter names/shapes in storage order + caller metadata
    params/<name>   raw row-major little-endian float64 values
"""

import json
import zipfile

import numpy as np

from .errors import ShapeError
from .network import Model, ModelConfig
from .optim import gram_residual

__all__ = ["FORMAT_TAG", "save_checkpoint", "load_checkpoint"]

FORMAT_TAG = "dreamnet-checkpoint 1"
_EPOCH = (1980, 1, 1, 0, 0, 0)
ORTHO_TOL = 1e-10


def _write(zf, name, data):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, model, meta=None):
    """Write ``model`` (and JSON-serializable ``meta``) to ``path``."""
    names = list(model.params)
    body = {
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "meta": meta or {},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _write(zf, "FORMAT", FORMAT_TAG)
        _write(zf, "config.json", json.dumps(model.config.to_dict(), sort_keys=True, indent=1))
        _write(zf, "meta.json", json.dumps(body, sort_keys=True, indent=1))
        for n in names:
            _write(zf, f"params/{n}", np.ascontiguousarray(model.params[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns ``(model, meta)``.

    Raises
    ------
    ShapeError
        Wrong format tag, parameter set or shapes inconsistent with the
        stored config, or a Stiefel weight off its constraint by more than
        1e-10.
    """
    with zipfile.ZipFile(path) as zf:
        tag = zf.read("FORMAT").decode()
        if tag != FORMAT_TAG:
            raise ShapeError(f"{path}: unsupported checkpoint format {tag!r}")
        config = ModelConfig.from_dict(json.loads(zf.read("config.json"))).validate()
        body = json.loads(zf.read("meta.json"))
        params = {}
        for entry in body["params"]:
            raw = zf.read(f"params/{entry['name']}")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
    model = Model(config, params)
    expected = model.expected_shapes()
    if set(expected) != set(params):
        raise ShapeError(f"{path}: parameters {sorted(params)} do not match config {sorted(expected)}")
    for name, shape in expected.items():
        if params[name].shape != tuple(shape):
            raise ShapeError(f"{path}: {name} has shape {params[name].shape}, config implies {shape}")
        if name in model.stiefel_names and gram_residual(params[name]) > ORTHO_TOL:
            raise ShapeError(f"{path}: {name} is not semi-orthogonal")
    return model, body["meta"]
