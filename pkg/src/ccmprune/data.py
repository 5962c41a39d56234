"""Deterministic four-class synthetic image set (16x16, single channel).

Classes: 0 horizontal bar, 1 vertical bar, 2 diagonal stroke, 3 Gaussian blob.
Each pattern is drawn at a jittered position with intensity 0.9, uniform
noise in ``[0, 0.1)`` is added and the result is clipped to ``[0, 1]``.

All randomness comes from ``numpy.random.default_rng(seed)`` (PCG64), so a
seed fully determines the bytes of the dataset.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError

__all__ = ["SynthDataset", "synth_dataset", "NUM_CLASSES", "IMAGE_SIZE"]

NUM_CLASSES = 4
IMAGE_SIZE = 16
NOISE_AMPLITUDE = 0.1
INTENSITY = 0.9


@dataclass(frozen=True)
class SynthDataset:
    images: np.ndarray
    labels: np.ndarray
    seed: int

    def __len__(self):
        return self.labels.size


def _hbar(rng):
    img = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    r = rng.integers(5, 10)
    c0 = rng.integers(2, 5)
    img[r:r + 2, c0:c0 + 10] = INTENSITY
    return img


def _vbar(rng):
    return _hbar(rng).T.copy()


def _diag(rng):
    img = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    off = rng.integers(-2, 3)
    i = np.arange(IMAGE_SIZE)
    for d in (0, 1):
        j = i + off + d
        ok = (j >= 0) & (j < IMAGE_SIZE) & (i >= 3) & (i < 13)
        img[i[ok], j[ok]] = INTENSITY
    return img


def _blob(rng):
    cy, cx = rng.uniform(6.0, 9.0, size=2)
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    return INTENSITY * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 2.0**2))


_DRAW = (_hbar, _vbar, _diag, _blob)


def synth_dataset(seed, n_samples):
    """Balanced dataset of ``n_samples`` images (``n_samples % 4 == 0``, ``>= 8``)."""
    n_samples = int(n_samples)
    if n_samples < 8 or n_samples % NUM_CLASSES:
        raise ConfigError(f"n_samples must be >= 8 and a multiple of {NUM_CLASSES}, got {n_samples}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n_samples) % NUM_CLASSES)
    images = np.empty((n_samples, 1, IMAGE_SIZE, IMAGE_SIZE))
    for i, lab in enumerate(labels):
        img = _DRAW[lab](rng) + rng.uniform(0.0, NOISE_AMPLITUDE, size=(IMAGE_SIZE, IMAGE_SIZE))
        images[i, 0] = np.clip(img, 0.0, 1.0)
    return SynthDataset(images, labels.astype(np.int64), int(seed))
