"""Sample sets of SPD descriptors: on-disk manifests, synthetic data, splits, batches.

Manifest layout (text, one record per line)::

    mode: matrix            # or: frames
    dim: 20
    classes: 3
    provenance: synthetic   # optional
    samples/s00000.bin,0
    samples/s00001.bin,2
    ...

Paths are relative to the manifest's directory. Sample files hold raw
row-major little-endian float64 values: ``dim * dim`` of them in matrix mode;
in frames mode an unsigned little-endian 8-byte frame count ``n`` followed by
``n * dim`` values, which are turned into a covariance descriptor on load.
"""

import math
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateSet, NotSpd, ParseError, ShapeError, TooFew
from .spd import covariance_descriptor, is_spd

__all__ = [
    "SampleSet",
    "SynthSpec",
    "synth_generate",
    "split",
    "batch_iter",
    "load_dataset",
    "save_dataset",
    "read_frames_file",
    "write_frames_file",
]

_F64 = np.dtype("<f8")
_HEADER = re.compile(r"^([A-Za-z_]+)\s*:\s*(.*)$")


@dataclass
class SampleSet:
    """Labelled SPD matrices sharing one dimension."""

    matrices: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: str = ""
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.labels))]

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.matrices.shape[-1]

    def validate(self):
        m = self.matrices
        if m.ndim != 3 or m.shape[1] != m.shape[2] or len(m) != len(self.labels):
            raise ShapeError(f"matrices {m.shape} / labels {self.labels.shape} are inconsistent")
        if len(self.ids) != len(self.labels):
            raise ShapeError("one id per sample required")
        if np.any(self.labels < 0) or np.any(self.labels >= self.num_classes):
            raise ParseError(f"labels must lie in [0, {self.num_classes})")
        for i, x in enumerate(m):
            if not is_spd(x, 0.0):
                raise NotSpd(f"sample {self.ids[i]} is not SPD")
        return self

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(
            self.matrices[idx],
            self.labels[idx],
            self.num_classes,
            self.provenance,
            [self.ids[i] for i in idx],
        )

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class SynthSpec:
    """Class-conditional Gaussian frame sets.

    Class ``k`` draws frames from ``N(0, B + separation * m * v_k v_k^T)``,
    where ``B`` is a random SPD base shared by all classes, ``m`` its mean
    eigenvalue and ``v_k`` a random unit direction per class.
    """

    dim: int = 20
    num_classes: int = 3
    sets_per_class: int = 100
    frames_per_set: int = 80
    separation: float = 1.0
    seed: int = 42

    def validate(self):
        if min(self.dim, self.num_classes, self.sets_per_class) < 1:
            raise ValueError("dim, num_classes and sets_per_class must be positive")
        if self.frames_per_set < 2:
            raise ValueError("frames_per_set must be >= 2")
        if self.separation < 0:
            raise ValueError("separation must be non-negative")
        return self


def synth_generate(spec=SynthSpec()):
    """Draw a synthetic :class:`SampleSet` (class-major order)."""
    spec.validate()
    d = spec.dim
    rng = np.random.default_rng(spec.seed)
    a = rng.standard_normal((d, d))
    base = a @ a.T / d + 0.5 * np.eye(d)
    mean_eig = np.trace(base) / d
    dirs = rng.standard_normal((spec.num_classes, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    mats, labels = [], []
    for k in range(spec.num_classes):
        cov = base + spec.separation * mean_eig * np.outer(dirs[k], dirs[k])
        chol = np.linalg.cholesky(cov)
        for _ in range(spec.sets_per_class):
            frames = rng.standard_normal((spec.frames_per_set, d)) @ chol.T
            mats.append(covariance_descriptor(frames))
            labels.append(k)
    tag = "null-separation" if spec.separation == 0 else "synthetic"
    ids = [f"s{i:05d}" for i in range(len(labels))]
    return SampleSet(np.stack(mats), np.array(labels), spec.num_classes, tag, ids)


def split(samples, fraction=0.7, seed=0):
    """Stratified random split into (train, test).

    Each class contributes ``round(fraction * n_k)`` samples to the training
    side, clipped so that both sides keep at least one sample of it.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for k in range(samples.num_classes):
        idx = np.flatnonzero(samples.labels == k)
        if len(idx) == 0:
            continue
        if len(idx) < 2:
            raise TooFew(f"class {k} has {len(idx)} sample(s); need at least 2 to split")
        idx = idx[rng.permutation(len(idx))]
        n_train = min(max(math.floor(fraction * len(idx) + 0.5), 1), len(idx) - 1)
        train_idx.extend(idx[:n_train])
        test_idx.extend(idx[n_train:])
    return samples.subset(np.sort(train_idx)), samples.subset(np.sort(test_idx))


def batch_iter(n, batch_size, seed):
    """Yield index arrays covering ``range(n)`` once, in a seeded random order."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if isinstance(n, SampleSet):
        n = len(n)
    perm = np.random.default_rng(seed).permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


# ---------------------------------------------------------------- files


def write_frames_file(path, frames):
    frames = np.ascontiguousarray(frames, dtype=_F64)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", frames.shape[0]))
        fh.write(frames.tobytes())


def read_frames_file(path, dim):
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ShapeError(f"{path}: missing frame count")
    (n,) = struct.unpack("<Q", raw[:8])
    if len(raw) - 8 != n * dim * 8:
        raise ShapeError(f"{path}: {len(raw) - 8} bytes for {n} frames of dim {dim}")
    return np.frombuffer(raw, dtype=_F64, offset=8).reshape(n, dim).astype(np.float64)


def _read_matrix_file(path, dim):
    raw = Path(path).read_bytes()
    if len(raw) != dim * dim * 8:
        raise ShapeError(f"{path}: {len(raw)} bytes, expected {dim * dim * 8}")
    return np.frombuffer(raw, dtype=_F64).reshape(dim, dim).astype(np.float64)


def _parse_manifest(path):
    header, records = {}, []
    lines = Path(path).read_text().splitlines()
    in_header = True
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        m = _HEADER.match(text)
        if in_header and m and "," not in text:
            header[m.group(1).lower()] = m.group(2).strip()
            continue
        in_header = False
        parts = text.rsplit(",", 1)
        if len(parts) != 2 or not parts[0].strip():
            raise ParseError(f"{path}:{lineno}: expected 'path,label', got {line!r}")
        try:
            label = int(parts[1])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: label {parts[1]!r} is not an integer") from None
        records.append((lineno, parts[0].strip(), label))
    for key in ("mode", "dim", "classes"):
        if key not in header:
            raise ParseError(f"{path}: header is missing '{key}:'")
    if header["mode"] not in ("matrix", "frames"):
        raise ParseError(f"{path}: mode must be 'matrix' or 'frames', got {header['mode']!r}")
    try:
        dim, classes = int(header["dim"]), int(header["classes"])
    except ValueError:
        raise ParseError(f"{path}: dim and classes must be integers") from None
    if dim < 1 or classes < 1:
        raise ParseError(f"{path}: dim and classes must be positive")
    return header, dim, classes, records


def load_dataset(manifest):
    """Load the :class:`SampleSet` described by a manifest file.

    Raises
    ------
    ParseError
        Malformed header or record, or a label outside ``[0, classes)``.
    ShapeError
        Sample file size inconsistent with the declared dimension.
    DegenerateSet
        A frame set with identical frames (message names the sample).
    """
    manifest = Path(manifest)
    header, dim, classes, records = _parse_manifest(manifest)
    root = manifest.parent
    mats, labels, ids = [], [], []
    for lineno, rel, label in records:
        if not 0 <= label < classes:
            raise ParseError(f"{manifest}:{lineno}: record {rel!r} has label {label} outside [0, {classes})")
        path = root / rel
        if header["mode"] == "matrix":
            x = _read_matrix_file(path, dim)
        else:
            try:
                x = covariance_descriptor(read_frames_file(path, dim))
            except DegenerateSet as exc:
                raise DegenerateSet(f"sample {rel}: {exc}") from exc
        mats.append(x)
        labels.append(label)
        ids.append(rel)
    mats = np.stack(mats) if mats else np.zeros((0, dim, dim))
    out = SampleSet(mats, np.array(labels, dtype=np.int64), classes, header.get("provenance", ""), ids)
    return out.validate()


def save_dataset(samples, out_dir, manifest_name="manifest.txt"):
    """Write ``samples`` in matrix mode; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    lines = [
        "mode: matrix",
        f"dim: {samples.dim}",
        f"classes: {samples.num_classes}",
    ]
    if samples.provenance:
        lines.append(f"provenance: {samples.provenance}")
    for i, (x, label) in enumerate(zip(samples.matrices, samples.labels)):
        rel = f"samples/{i:05d}.bin"
        (out_dir / rel).write_bytes(np.ascontiguousarray(x, dtype=_F64).tobytes())
        lines.append(f"{rel},{int(label)}")
    path = out_dir / manifest_name
    path.write_text("\n".join(lines) + "\n")
    return os.fspath(path)
