"""Classic gray-level co-occurrence counting and gray-level quantization."""
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import InputError
from .validation import check_images

DEFAULT_LEVELS = 16


class Direction(Enum):
    """Co-occurrence direction with its (row, col) pixel offset."""

    DEG0 = (0, 1)
    DEG45 = (-1, 1)
    DEG90 = (-1, 0)
    DEG135 = (-1, -1)

    @property
    def offset(self):
        return self.value

    @property
    def degrees(self):
        return {"DEG0": 0, "DEG45": 45, "DEG90": 90, "DEG135": 135}[self.name]

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower().removeprefix("deg")
        for d in cls:
            if str(d.degrees) == key:
                return d
        raise InputError(f"unknown direction {value!r}")


ALL_DIRECTIONS = tuple(Direction)


def quantize(image, levels=DEFAULT_LEVELS):
    """Map 256-level pixel values onto ``levels`` gray levels by flooring."""
    if levels < 2:
        raise InputError(f"levels must be >= 2, got {levels}")
    image = np.asarray(image, dtype=np.float64)
    q = np.floor(image * levels / 256.0).astype(np.int64)
    return np.clip(q, 0, levels - 1)


def check_quantized(img, levels):
    img = np.asarray(img)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise InputError(f"expected a square image, got shape {img.shape}")
    if img.shape[0] < 2:
        raise InputError("image side must be at least 2")
    if img.min() < 0 or img.max() >= levels:
        raise InputError(f"pixel values must lie in [0, {levels})")
    return img.astype(np.int64)


def pair_views(img, direction):
    """Aligned (reference, neighbor) views of all in-bounds pixel pairs."""
    dr, dc = Direction.parse(direction).offset
    m = img.shape[0]
    r0, r1 = max(0, -dr), m - max(0, dr)
    c0, c1 = max(0, -dc), m - max(0, dc)
    ref = img[r0:r1, c0:c1]
    nbr = img[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
    return ref, nbr


def glcm_count(img, direction=Direction.DEG0, levels=DEFAULT_LEVELS):
    """Count pixel pairs ``(img[p], img[p + offset])`` for every in-bounds ``p``.

    Pairs are counted one way only; the matrix is not symmetrized.
    """
    img = check_quantized(img, levels)
    ref, nbr = pair_views(img, direction)
    flat = ref.ravel() * levels + nbr.ravel()
    return np.bincount(flat, minlength=levels * levels).reshape(levels, levels).astype(np.float64)


def glcm_feature_vector(img, directions=(Direction.DEG0,), levels=DEFAULT_LEVELS, normalize=True):
    parts = []
    for d in directions:
        g = glcm_count(img, d, levels)
        total = g.sum()
        if normalize and total > 0:
            g = g / total
        parts.append(g.ravel())
    return np.concatenate(parts)[None, :]


class GLCMTransformer(TransformerMixin, BaseEstimator):
    """Flattened co-occurrence features for a stack of 256-level images.

    Stateless: ``fit`` only validates input. ``transform`` maps an
    (n, m, m) stack to an (n, len(directions) * levels**2) feature matrix.
    """

    def __init__(self, levels=DEFAULT_LEVELS, directions=("deg0",), normalize=True):
        self.levels = levels
        self.directions = directions
        self.normalize = normalize

    def fit(self, X, y=None):
        X = check_images(X)
        self.n_features_out_ = len(self.directions) * self.levels ** 2
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        X = check_images(X)
        dirs = [Direction.parse(d) for d in self.directions]
        return np.vstack([
            glcm_feature_vector(quantize(im, self.levels), dirs, self.levels, self.normalize)
            for im in X
        ])
