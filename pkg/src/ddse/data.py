"""Datasets: IDX (MNIST) parsing, class-proportional subsampling, augmentation,
and synthetic Gaussian clusters for fast tests."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import make_rng

__all__ = [
    "LabeledDataset",
    "AugmentConfig",
    "IdxFormatError",
    "IDX_IMAGE_MAGIC",
    "IDX_LABEL_MAGIC",
    "MNIST_ENV",
    "load_idx",
    "write_idx",
    "load_mnist_dir",
    "subsample",
    "augment",
    "synth_gaussian",
    "stratified_split",
]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
MNIST_ENV = "DDSE_MNIST_DIR"


class IdxFormatError(ValueError):
    """Malformed IDX input; ``kind`` is one of bad-magic, truncated, count-mismatch."""

    def __init__(self, kind, message):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


@dataclass(frozen=True)
class LabeledDataset:
    """Features as an n x t matrix (one sample per column) plus t labels."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if f.ndim != 2:
            raise ValueError("features must be n x t")
        if y.shape != (f.shape[1],):
            raise ValueError(f"{f.shape[1]} samples but {y.size} labels")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise ValueError("label outside [0, class_count)")
        if not np.all(np.isfinite(f)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def size(self):
        return self.features.shape[1]

    def __len__(self):
        return self.size

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.features[:, idx], self.labels[idx], self.class_count)

    def class_histogram(self):
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass(frozen=True)
class AugmentConfig:
    noise_sigma: float = 0.0
    hflip_prob: float = 0.0
    max_shift_px: int = 0
    enabled: bool = False

    def __post_init__(self):
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError("hflip_prob must lie in [0, 1]")
        if self.noise_sigma < 0 or self.max_shift_px < 0:
            raise ValueError("noise_sigma and max_shift_px must be nonnegative")


# -- IDX ----------------------------------------------------------------------

def _read_bytes(path):
    path = Path(path)
    data = path.read_bytes()
    if path.suffix == ".gz":
        data = gzip.decompress(data)
    return data


def _parse_idx(data, expected_magic, what):
    if len(data) < 4:
        raise IdxFormatError("truncated", f"{what} file shorter than its magic number")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise IdxFormatError(
            "bad-magic", f"{what} file has magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError("truncated", f"{what} header is incomplete")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims)) if dims else 0
    if len(data) < header + count:
        raise IdxFormatError(
            "truncated", f"{what} file holds {len(data) - header} bytes, header promises {count}"
        )
    payload = np.frombuffer(data, dtype=np.uint8, count=count, offset=header)
    return dims, payload.reshape(dims)


def load_idx(images_path, labels_path, class_count=10):
    """Parse an IDX image/label pair (optionally gzipped); pixels are scaled by 1/255."""
    img_dims, images = _parse_idx(_read_bytes(images_path), IDX_IMAGE_MAGIC, "image")
    lbl_dims, labels = _parse_idx(_read_bytes(labels_path), IDX_LABEL_MAGIC, "label")
    if img_dims[0] != lbl_dims[0]:
        raise IdxFormatError(
            "count-mismatch", f"{img_dims[0]} images but {lbl_dims[0]} labels"
        )
    t = img_dims[0]
    features = images.reshape(t, -1).T.astype(np.float64) / 255.0
    return LabeledDataset(features, labels.astype(np.int64), class_count)


def write_idx(dataset, images_path, labels_path, shape=None):
    """Write ``dataset`` as an IDX pair, pixels rounded back to bytes.

    ``shape`` is the per-image (rows, cols); defaults to a square side.
    """
    t = dataset.size
    if shape is None:
        side = int(round(np.sqrt(dataset.n)))
        if side * side != dataset.n:
            raise ValueError("feature length is not a perfect square; pass shape")
        shape = (side, side)
    pixels = np.clip(np.rint(dataset.features.T * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, t, *shape))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, t))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


_MNIST_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_mnist_dir(directory=None, split="train"):
    """Load the standard MNIST file pair for ``split`` from ``directory``.

    Falls back to the ``DDSE_MNIST_DIR`` environment variable. Both plain and
    ``.gz`` file names are accepted.
    """
    directory = directory or os.environ.get(MNIST_ENV)
    if not directory:
        raise FileNotFoundError(f"no MNIST directory given and {MNIST_ENV} is unset")
    directory = Path(directory)
    paths = []
    for name in _MNIST_NAMES[split]:
        for candidate in (directory / name, directory / f"{name}.gz"):
            if candidate.exists():
                paths.append(candidate)
                break
        else:
            raise FileNotFoundError(f"{name} not found in {directory}")
    return load_idx(*paths)


# -- subsets ------------------------------------------------------------------

def _largest_remainder(hist, fraction):
    exact = hist * fraction
    counts = np.floor(exact).astype(np.int64)
    leftover = int(round(hist.sum() * fraction)) - int(counts.sum())
    if leftover > 0:
        rema = exact - counts
        order = np.argsort(-rema, kind="stable")
        counts[order[:leftover]] += 1
    return counts


def subsample(data, fraction, rng):
    """Class-proportional subset of ``fraction`` of ``data``.

    Per-class counts are ``floor(fraction * count_c)`` with the remaining
    samples handed to the classes with the largest fractional parts.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    rng = make_rng(rng)
    hist = data.class_histogram()
    counts = _largest_remainder(hist, fraction)
    if np.any((hist > 0) & (counts == 0)):
        raise ValueError(f"fraction {fraction} leaves at least one class empty")
    chosen = []
    for c in range(data.class_count):
        members = np.flatnonzero(data.labels == c)
        if counts[c]:
            chosen.append(rng.permutation(members)[: counts[c]])
    idx = np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64)
    return data.take(idx)


def stratified_split(data, holdout, rng):
    """Split into ``(rest, held_out)`` with ``holdout`` samples drawn class-proportionally."""
    if not 0 < holdout < data.size:
        raise ValueError("holdout must lie strictly between 0 and the dataset size")
    rng = make_rng(rng)
    counts = _largest_remainder(data.class_histogram(), holdout / data.size)
    taken = []
    for c in range(data.class_count):
        members = np.flatnonzero(data.labels == c)
        taken.append(rng.permutation(members)[: counts[c]])
    held = np.sort(np.concatenate(taken))
    rest = np.setdiff1d(np.arange(data.size), held)
    return data.take(rest), data.take(held)


# -- augmentation -------------------------------------------------------------

def augment(data, config, rng):
    """Noise, horizontal flip and integer shift, drawn independently per sample.

    Spatial operations treat each column as a square image. Output values
    stay in [0, 1]; labels are untouched.
    """
    if not config.enabled:
        return data
    rng = make_rng(rng)
    x = data.features.copy()
    t = data.size
    spatial = config.hflip_prob > 0 or config.max_shift_px > 0
    if spatial:
        side = int(round(np.sqrt(data.n)))
        if side * side != data.n:
            raise ValueError("spatial augmentation needs square images")
        imgs = x.T.reshape(t, side, side)
        if config.hflip_prob > 0:
            flip = rng.random(t) < config.hflip_prob
            imgs[flip] = imgs[flip, :, ::-1]
        if config.max_shift_px > 0:
            shifts = rng.integers(-config.max_shift_px, config.max_shift_px + 1, size=(t, 2))
            for i, (dy, dx) in enumerate(shifts):
                if dy or dx:
                    imgs[i] = _shift(imgs[i], dy, dx)
        x = imgs.reshape(t, -1).T.copy()
    if config.noise_sigma > 0:
        x = x + rng.normal(0.0, config.noise_sigma, size=x.shape)
    x = np.clip(x, 0.0, 1.0)
    return LabeledDataset(x, data.labels, data.class_count)


def _shift(img, dy, dx):
    out = np.zeros_like(img)
    h, w = img.shape
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[dst_y, dst_x] = img[src_y, src_x]
    return out


# -- synthetic ----------------------------------------------------------------

def synth_gaussian(classes, n, per_class, separation, rng):
    """Unit-covariance Gaussian clusters with pairwise mean distance ``separation``.

    Means sit on a scaled simplex (``separation / sqrt(2)`` times the first
    ``classes`` basis vectors). The result is min-max scaled to [0, 1] with one
    global affine map, which keeps class geometry intact.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if n < classes:
        raise ValueError("simplex placement needs n >= classes")
    rng = make_rng(rng)
    per_class = np.broadcast_to(np.asarray(per_class, dtype=np.int64), (classes,))
    blocks, labels = [], []
    for c in range(classes):
        mu = np.zeros(n)
        mu[c] = separation / np.sqrt(2.0)
        blocks.append(mu[:, None] + rng.standard_normal((n, per_class[c])))
        labels.append(np.full(per_class[c], c))
    x = np.concatenate(blocks, axis=1)
    y = np.concatenate(labels)
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    return LabeledDataset(x, y, classes)
