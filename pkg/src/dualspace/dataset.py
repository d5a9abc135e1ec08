"""Paired audio/visual feature sets: data model, on-disk format, generation and splitting.

A dataset directory holds four files::

    manifest.json   {"format_version": 1, "n", "d_a", "d_v", "c", "names"?, "split"?}
    audio.f32       n·d_a little-endian float32, row-major
    visual.f32      n·d_v little-endian float32, row-major
    labels.u32      n little-endian uint32
"""

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    LabelRangeError,
    MissingFileError,
    NonFiniteDataError,
    SizeMismatchError,
    StorageError,
    UnsplittableCategoryError,
    ValidationError,
)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
AUDIO_FILE = "audio.f32"
VISUAL_FILE = "visual.f32"
LABELS_FILE = "labels.u32"

_F32 = np.dtype("<f4")
_U32 = np.dtype("<u4")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    audio: np.ndarray
    visual: np.ndarray
    labels: np.ndarray
    c: int
    names: list = None
    split: dict = None

    def __post_init__(self):
        audio = _frozen(self.audio, np.float64)
        visual = _frozen(self.visual, np.float64)
        labels = _frozen(self.labels, np.int64)
        if audio.ndim != 2 or visual.ndim != 2 or labels.ndim != 1:
            raise DimensionMismatchError("audio/visual must be 2-D and labels 1-D")
        n = labels.size
        if n < 1:
            raise EmptyInputError("a dataset needs at least one sample")
        if audio.shape[0] != n or visual.shape[0] != n:
            raise DimensionMismatchError(
                f"row counts differ: audio {audio.shape[0]}, visual {visual.shape[0]}, labels {n}"
            )
        if self.c < 1:
            raise ValidationError(f"category count must be positive, got {self.c}")
        bad = np.flatnonzero((labels < 0) | (labels >= self.c))
        if bad.size:
            raise LabelRangeError(
                f"label {labels[bad[0]]} at row {bad[0]} is outside [0, {self.c})",
                row=int(bad[0]),
            )
        if self.names is not None and len(self.names) != self.c:
            raise ValidationError(f"expected {self.c} category names, got {len(self.names)}")
        if self.split is not None:
            _check_split(self.split, n)
        object.__setattr__(self, "audio", audio)
        object.__setattr__(self, "visual", visual)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return self.labels.size

    @property
    def d_a(self):
        return self.audio.shape[1]

    @property
    def d_v(self):
        return self.visual.shape[1]

    def one_hot(self):
        return np.eye(self.c)[self.labels]

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.audio[idx], self.visual[idx], self.labels[idx], self.c, self.names)

    def with_split(self, train, test):
        return Dataset(
            self.audio, self.visual, self.labels, self.c, self.names,
            split={"train": [int(i) for i in train], "test": [int(i) for i in test]},
        )

    def train_test(self):
        """Subsets named by the stored split."""
        if self.split is None:
            raise ValidationError("dataset carries no train/test split")
        return self.subset(self.split["train"]), self.subset(self.split["test"])

    def same_as(self, other):
        return (
            self.c == other.c
            and self.names == other.names
            and self.split == other.split
            and np.array_equal(self.audio, other.audio)
            and np.array_equal(self.visual, other.visual)
            and np.array_equal(self.labels, other.labels)
        )


def _check_split(split, n):
    train = np.asarray(split.get("train", []), dtype=np.int64)
    test = np.asarray(split.get("test", []), dtype=np.int64)
    both = np.concatenate([train, test])
    if both.size and (both.min() < 0 or both.max() >= n):
        raise ValidationError(f"split indices must lie in [0, {n})")
    if np.unique(both).size != both.size:
        raise ValidationError("train and test indices overlap or repeat")


@dataclass
class Manifest:
    n: int
    d_a: int
    d_v: int
    c: int
    names: list = None
    split: dict = None
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    def to_json(self):
        d = {"format_version": self.format_version, "n": self.n, "d_a": self.d_a,
             "d_v": self.d_v, "c": self.c}
        if self.names is not None:
            d["names"] = list(self.names)
        if self.split is not None:
            d["split"] = self.split
        d.update(self.extra)
        return json.dumps(d, indent=2)

    @classmethod
    def from_dict(cls, d):
        try:
            known = {k: d[k] for k in ("n", "d_a", "d_v", "c")}
        except KeyError as e:
            raise StorageError(f"manifest is missing field {e.args[0]!r}") from None
        version = d.get("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise StorageError(f"unsupported format_version {version}")
        extra = {k: v for k, v in d.items()
                 if k not in ("n", "d_a", "d_v", "c", "names", "split", "format_version")}
        return cls(**known, names=d.get("names"), split=d.get("split"), extra=extra)


def pool_frames(frames):
    """Average frame-level features over the frame axis into one global vector."""
    f = np.asarray(frames, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    if f.shape[0] == 0:
        raise EmptyInputError("cannot pool zero frames")
    return f.mean(axis=0)


def one_hot(label, c):
    if not 0 <= label < c:
        raise LabelRangeError(f"label {label} is outside [0, {c})")
    v = np.zeros(c)
    v[label] = 1.0
    return v


# -- storage ---------------------------------------------------------------

def atomic_write_bytes(path, data):
    """Write ``data`` to ``path`` through a temporary sibling and rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as e:
        tmp.unlink(missing_ok=True)
        raise StorageError(f"cannot write {path}: {e}") from e


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def save_dataset(dataset, directory, extra=None):
    """Write ``dataset`` into ``directory`` in the binary layout."""
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create {d}: {e}") from e
    atomic_write_bytes(d / AUDIO_FILE, dataset.audio.astype(_F32).tobytes())
    atomic_write_bytes(d / VISUAL_FILE, dataset.visual.astype(_F32).tobytes())
    atomic_write_bytes(d / LABELS_FILE, dataset.labels.astype(_U32).tobytes())
    manifest = Manifest(dataset.n, dataset.d_a, dataset.d_v, dataset.c,
                        names=dataset.names, split=dataset.split, extra=extra or {})
    atomic_write_text(d / MANIFEST, manifest.to_json())
    return manifest


def _read_payload(path, dtype, count):
    if not path.is_file():
        raise MissingFileError(f"missing {path.name} in {path.parent}")
    raw = path.read_bytes()
    expected = count * dtype.itemsize
    if len(raw) != expected:
        raise SizeMismatchError(
            f"{path.name}: expected {expected} bytes, found {len(raw)}",
            expected=expected, found=len(raw),
        )
    return np.frombuffer(raw, dtype=dtype)


def read_manifest(directory):
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise MissingFileError(f"missing {MANIFEST} in {directory}")
    try:
        return Manifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as e:
        raise StorageError(f"{path} is not valid JSON: {e}") from e


def load_dataset(directory):
    """Read a dataset directory, validating sizes, finiteness and label range."""
    d = Path(directory)
    m = read_manifest(d)
    audio = _read_payload(d / AUDIO_FILE, _F32, m.n * m.d_a).reshape(m.n, m.d_a)
    visual = _read_payload(d / VISUAL_FILE, _F32, m.n * m.d_v).reshape(m.n, m.d_v)
    labels = _read_payload(d / LABELS_FILE, _U32, m.n)
    for name, arr in ((AUDIO_FILE, audio), (VISUAL_FILE, visual)):
        bad = ~np.isfinite(arr)
        if bad.any():
            row = int(np.argwhere(bad)[0, 0])
            raise NonFiniteDataError(f"{name} has a non-finite value at row {row}")
    over = np.flatnonzero(labels >= m.c)
    if over.size:
        row = int(over[0])
        raise LabelRangeError(
            f"{LABELS_FILE}: label {labels[row]} at row {row} is not below c={m.c}", row=row
        )
    return Dataset(audio.astype(np.float64), visual.astype(np.float64),
                   labels.astype(np.int64), m.c, m.names, m.split)


# -- generation and splitting ------------------------------------------------

def synth_generate(c=10, per_class=100, d_a=128, d_v=1024, noise=0.5,
                   cross_noise=0.3, seed=0, latent_dim=16):
    """Shared-latent linear model with class structure.

    Each class gets a centroid in a ``latent_dim``-dimensional space. A sample
    is its class centroid plus shared latent noise (``cross_noise``), then each
    modality adds its own latent noise (``noise``) and is mapped to feature
    space through a fixed random linear map.
    """
    for name, val in (("c", c), ("per_class", per_class), ("d_a", d_a), ("d_v", d_v),
                      ("latent_dim", latent_dim)):
        if int(val) < 1:
            raise ValidationError(f"{name} must be at least 1, got {val}")
    if noise < 0 or cross_noise < 0:
        raise ValidationError("noise levels must be non-negative")
    rng = np.random.default_rng(seed)
    centroids = rng.standard_normal((c, latent_dim))
    map_a = rng.standard_normal((latent_dim, d_a)) / np.sqrt(latent_dim)
    map_v = rng.standard_normal((latent_dim, d_v)) / np.sqrt(latent_dim)
    labels = np.repeat(np.arange(c), per_class)
    n = labels.size
    shared = centroids[labels] + cross_noise * rng.standard_normal((n, latent_dim))
    audio = (shared + noise * rng.standard_normal((n, latent_dim))) @ map_a
    visual = (shared + noise * rng.standard_normal((n, latent_dim))) @ map_v
    return Dataset(audio, visual, labels, c)


def split_indices(dataset, train_frac=0.8, seed=0):
    """Category-stratified train/test index lists (each sorted ascending)."""
    if not 0.0 < train_frac < 1.0:
        raise ValidationError(f"train_frac must lie in (0, 1), got {train_frac}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cat in range(dataset.c):
        members = np.flatnonzero(dataset.labels == cat)
        if members.size == 0:
            continue
        if members.size < 2:
            raise UnsplittableCategoryError(
                f"category {cat} has {members.size} sample; at least 2 are needed"
            )
        members = rng.permutation(members)
        n_train = min(max(int(round(train_frac * members.size)), 1), members.size - 1)
        train_idx.append(members[:n_train])
        test_idx.append(members[n_train:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def split(dataset, train_frac=0.8, seed=0):
    """Category-stratified split into ``(train, test)`` datasets."""
    train_idx, test_idx = split_indices(dataset, train_frac, seed)
    return dataset.subset(train_idx), dataset.subset(test_idx)
