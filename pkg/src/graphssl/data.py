"""Synthetic datasets, feature-vector augmentations and embedding/label files.

Embedding files ("GDEM v1")::

    magic b"GDEM" | u32 version=1 | u64 N | u64 D | N*D float32, row-major

Label sidecars ("GDLB v1")::

    magic b"GDLB" | u32 version=1 | u64 N | u32 class_count | N uint32

All integers and floats are little-endian. Values are stored as float32 and
upcast to float64 on load.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from os import PathLike

import numpy as np

from .errors import BadMagic, BadSpec, FormatError, TruncatedFile, ValidationFailure
from .numerics import as_matrix

GDEM_HEADER = struct.Struct("<4sIQQ")
GDLB_HEADER = struct.Struct("<4sIQI")
VERSION = 1

# stream tags for derive_rng
STREAM_DATA = 1
STREAM_AUGMENT = 2
STREAM_SHUFFLE = 3
STREAM_INIT = 4
STREAM_SAMPLE = 5
STREAM_MATURITY = 6
STREAM_SPLIT = 7


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Philox (counter-based) generator keyed on ``seed`` and an integer path.

    Independent streams for e.g. (epoch, sample) pairs come from distinct paths,
    so per-sample work can run in any order and still reproduce bit for bit.
    """
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(p) for p in path)])
    return np.random.Generator(np.random.Philox(key))


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] < 1:
            raise BadSpec("a dataset needs at least 1 sample")
        if self.labels.shape != (self.features.shape[0],):
            raise BadSpec("one label per row required")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise BadSpec("labels out of range")

    @property
    def n(self) -> int:
        return self.features.shape[0]


def gen_clusters(n_per_class: int, class_count: int, dim: int, spread: float,
                 seed: int) -> LabeledDataset:
    """Isotropic Gaussian blobs (stddev ``spread``) around random unit-norm centers."""
    if min(n_per_class, class_count, dim) < 1:
        raise BadSpec("counts must be >= 1")
    if not spread > 0:
        raise BadSpec("spread must be > 0")
    rng = derive_rng(seed, STREAM_DATA)
    centers = rng.standard_normal((class_count, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = np.repeat(np.arange(class_count), n_per_class)
    features = centers[labels] + spread * rng.standard_normal((labels.size, dim))
    return LabeledDataset(features, labels, class_count)


@dataclass(frozen=True)
class AugmentPolicy:
    gaussian_sigma: float = 0.0
    mask_fraction: float = 0.0
    scale_jitter: float = 0.0

    def __post_init__(self):
        vals = (self.gaussian_sigma, self.mask_fraction, self.scale_jitter)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationFailure("augment policy values must be finite")
        if self.gaussian_sigma < 0 or self.scale_jitter < 0:
            raise ValidationFailure("sigma and scale_jitter must be >= 0")
        if not 0.0 <= self.mask_fraction < 1.0:
            raise ValidationFailure("mask_fraction must be in [0, 1)")


def augment(x, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Scale jitter, then additive Gaussian noise, then zero-mask floor(fraction*D) coords.

    The generator is advanced by the same amount whatever the policy.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    u = rng.uniform(-1.0, 1.0) * policy.scale_jitter
    noise = rng.standard_normal(d) * policy.gaussian_sigma
    order = rng.permutation(d)
    out = x * (1.0 + u) + noise
    out[order[: int(math.floor(policy.mask_fraction * d))]] = 0.0
    return out


# file formats ---------------------------------------------------------------

def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _check_magic(blob: bytes, magic: bytes) -> None:
    if len(blob) < 4 or blob[:4] != magic:
        raise BadMagic(f"expected magic {magic!r}")


def _check_version(version: int) -> None:
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")


def save_embeddings(m, path: str | PathLike) -> None:
    m = as_matrix(m, "embeddings")
    n, d = m.shape
    with open(path, "wb") as fh:
        fh.write(GDEM_HEADER.pack(b"GDEM", VERSION, n, d))
        fh.write(m.astype("<f4").tobytes())


def load_embeddings(path: str | PathLike) -> np.ndarray:
    blob = _read(path)
    _check_magic(blob, b"GDEM")
    if len(blob) < GDEM_HEADER.size:
        raise TruncatedFile("GDEM header truncated")
    _, version, n, d = GDEM_HEADER.unpack_from(blob)
    _check_version(version)
    need = GDEM_HEADER.size + 4 * n * d
    if len(blob) < need:
        raise TruncatedFile(f"GDEM payload needs {need} bytes, file has {len(blob)}")
    if len(blob) > need:
        raise FormatError("trailing bytes after GDEM payload")
    data = np.frombuffer(blob, dtype="<f4", count=n * d, offset=GDEM_HEADER.size)
    return data.astype(np.float64).reshape(n, d)


def save_labels(labels, class_count: int, path: str | PathLike) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    with open(path, "wb") as fh:
        fh.write(GDLB_HEADER.pack(b"GDLB", VERSION, labels.size, class_count))
        fh.write(labels.astype("<u4").tobytes())


def load_labels(path: str | PathLike) -> tuple[np.ndarray, int]:
    blob = _read(path)
    _check_magic(blob, b"GDLB")
    if len(blob) < GDLB_HEADER.size:
        raise TruncatedFile("GDLB header truncated")
    _, version, n, class_count = GDLB_HEADER.unpack_from(blob)
    _check_version(version)
    need = GDLB_HEADER.size + 4 * n
    if len(blob) < need:
        raise TruncatedFile(f"GDLB payload needs {need} bytes, file has {len(blob)}")
    if len(blob) > need:
        raise FormatError("trailing bytes after GDLB payload")
    labels = np.frombuffer(blob, dtype="<u4", count=n, offset=GDLB_HEADER.size)
    labels = labels.astype(np.int64)
    if n and labels.max() >= class_count:
        raise FormatError("label out of range")
    return labels, class_count
