"""Differentiable co-occurrence block.

An image ``A`` (m x m, gray levels as reals) is flattened to ``a``; the
neighbor-difference vector ``b`` holds ``a_i - a_nbr(i)`` for every position
whose neighbor in the chosen direction is inside the image (other positions
are masked to zero, so no pair wraps across a row boundary). With thresholds
``phi_a``, ``phi_b``::

    S_a[k, i] = clip(a_i - phi_a[k], 0, 1) * valid_i
    S_b[l, i] = clip(b_i - phi_b[l], 0, 1) * valid_i
    G = S_a @ S_b.T

The clip subgradient is 1 strictly inside (0, 1) and 0 elsewhere, kinks
included.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, InputError, StateError
from .glcm import DEFAULT_LEVELS, Direction, check_quantized
from .netcore import Layer


@dataclass
class NglcmParams:
    phi_a: np.ndarray
    phi_b: np.ndarray

    def __post_init__(self):
        self.phi_a = np.asarray(self.phi_a, dtype=np.float64).reshape(-1, 1)
        self.phi_b = np.asarray(self.phi_b, dtype=np.float64).reshape(-1, 1)
        if not (np.all(np.isfinite(self.phi_a)) and np.all(np.isfinite(self.phi_b))):
            raise InputError("thresholds must be finite")


def flatten(img):
    """Row-major flattening of one image to a 1 x m^2 row."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got {img.shape}")
    return img.astype(np.float64).reshape(1, -1)


def neighbor_map(m, direction):
    """Flat neighbor index for every position and a validity mask."""
    dr, dc = Direction.parse(direction).offset
    r, c = np.divmod(np.arange(m * m), m)
    nr, nc = r + dr, c + dc
    valid = (nr >= 0) & (nr < m) & (nc >= 0) & (nc < m)
    nbr = np.where(valid, nr * m + nc, 0)
    return nbr, valid


def _side(n):
    m = int(round(np.sqrt(n)))
    if m * m != n or m < 2:
        raise DimensionError(f"length {n} is not the square of a side >= 2")
    return m


def shift_diff(a, direction=Direction.DEG0):
    """Neighbor differences ``b`` (1 x m^2) and the boolean validity mask."""
    a = np.asarray(a, dtype=np.float64).reshape(1, -1)
    nbr, valid = neighbor_map(_side(a.shape[1]), direction)
    b = np.where(valid, a - a[:, nbr], 0.0)
    return b, valid


def threshold_s(v, phi):
    """``out[k, j] = clip(v_j - phi_k, 0, 1)``."""
    v = np.asarray(v, dtype=np.float64).reshape(1, -1)
    phi = np.asarray(phi, dtype=np.float64).reshape(-1, 1)
    return np.clip(v - phi, 0.0, 1.0)


def _forward_batch(a, phi_a, phi_b, nbr, valid):
    """Batched forward pass; ``a`` is (n, P). Returns G (n, La, Lb) and a cache."""
    b = np.where(valid, a - a[:, nbr], 0.0)
    pre_a = a[:, None, :] - phi_a.reshape(1, -1, 1)
    pre_b = b[:, None, :] - phi_b.reshape(1, -1, 1)
    s_a = np.clip(pre_a, 0.0, 1.0) * valid
    s_b = np.clip(pre_b, 0.0, 1.0) * valid
    G = np.matmul(s_a, s_b.transpose(0, 2, 1))
    cache = (pre_a, pre_b, s_a, s_b, nbr, valid)
    return G, cache


def _backward_batch(grad_G, cache):
    pre_a, pre_b, s_a, s_b, nbr, valid = cache
    gs_a = np.matmul(grad_G, s_b)
    gs_b = np.matmul(grad_G.transpose(0, 2, 1), s_a)
    gpre_a = np.where((pre_a > 0) & (pre_a < 1) & valid, gs_a, 0.0)
    gpre_b = np.where((pre_b > 0) & (pre_b < 1) & valid, gs_b, 0.0)
    grad_phi_a = -gpre_a.sum(axis=(0, 2)).reshape(-1, 1)
    grad_phi_b = -gpre_b.sum(axis=(0, 2)).reshape(-1, 1)
    grad_b = gpre_b.sum(axis=1)
    grad_a = gpre_a.sum(axis=1) + grad_b
    # valid neighbor indices are distinct, so fancy-index subtraction is safe
    grad_a[:, nbr[valid]] -= grad_b[:, valid]
    return grad_phi_a, grad_phi_b, grad_a


class NglcmResult:
    """Output of :func:`nglcm_forward`; keeps what the backward pass needs."""

    def __init__(self, G, cache):
        self.G = G
        self._cache = cache

    def backward(self, grad_G):
        return nglcm_backward(grad_G, self)


def nglcm_forward(a, params, direction=Direction.DEG0):
    """Co-occurrence matrix ``S_a S_b^T`` for one flattened image ``a``."""
    a = np.asarray(a, dtype=np.float64).reshape(1, -1)
    nbr, valid = neighbor_map(_side(a.shape[1]), direction)
    G, cache = _forward_batch(a, params.phi_a, params.phi_b, nbr, valid)
    return NglcmResult(G[0], cache)


def nglcm_backward(grad_G, result):
    """Gradients ``(grad_phi_a, grad_phi_b, grad_a)`` for a forward result."""
    if result is None or getattr(result, "_cache", None) is None:
        raise StateError("nglcm_backward called before nglcm_forward")
    grad_G = np.asarray(grad_G, dtype=np.float64)
    if grad_G.shape != result.G.shape:
        raise DimensionError(f"grad_G shape {grad_G.shape} != {result.G.shape}")
    gpa, gpb, ga = _backward_batch(grad_G[None], result._cache)
    return gpa, gpb, ga


def staircase_phi(levels=DEFAULT_LEVELS, epsilon=0.5):
    """Constrained thresholds ``{n - epsilon}`` for pixel and difference levels.

    ``phi_a`` covers the pixel levels 0..levels-1. ``phi_b`` covers the
    2*levels-1 possible neighbor differences -(levels-1)..levels-1, which is
    what an exact pair count over differences needs.
    """
    if not 0.0 < epsilon < 1.0:
        raise InputError(f"epsilon must lie in (0, 1), got {epsilon}")
    levels_a = np.arange(levels, dtype=np.float64)
    levels_b = np.arange(-(levels - 1), levels, dtype=np.float64)
    return NglcmParams(levels_a - epsilon, levels_b - epsilon)


def unstaircase(rows, epsilon, axis=0):
    """Turn staircase threshold rows into exact per-level indicator rows.

    For sorted integer levels ``v_k`` and thresholds ``v_k - epsilon``, row k
    of a thresholded matrix is ``[x > v_k] + epsilon * [x == v_k]``. Working
    down from the top level, ``E_k = (R_k - sum_{j>k} E_j) / epsilon``. The map
    is linear, so it applies equally to S or to a product such as G.
    """
    r = np.moveaxis(np.asarray(rows, dtype=np.float64), axis, 0)
    out = np.empty_like(r)
    above = np.zeros_like(r[0])
    for k in range(r.shape[0] - 1, -1, -1):
        out[k] = (r[k] - above) / epsilon
        above = above + out[k]
    return np.moveaxis(out, 0, axis)


def nglcm_to_glcm(G, levels=DEFAULT_LEVELS, epsilon=0.5):
    """Recover pair counts ``(k, l)`` from a staircase (level, difference) NGLCM."""
    G = np.asarray(G, dtype=np.float64)
    if G.shape != (levels, 2 * levels - 1):
        raise DimensionError(f"expected shape {(levels, 2 * levels - 1)}, got {G.shape}")
    exact = unstaircase(unstaircase(G, epsilon, axis=0), epsilon, axis=1)
    k = np.arange(levels)[:, None]
    l = np.arange(levels)[None, :]
    return exact[k, k - l + levels - 1]


class NGLCM(Layer):
    """NGLCM as a network layer.

    Input is an (n, m, m) stack of gray levels; output is (n, La * Lb) per
    direction, concatenated over directions. ``n_forward`` counts forward
    evaluations.
    """

    kind = "nglcm"

    def __init__(self, levels=DEFAULT_LEVELS, directions=(Direction.DEG0,), rng=None,
                 params=None):
        super().__init__()
        self.levels = levels
        self.directions = tuple(Direction.parse(d) for d in directions)
        if params is None:
            rng = np.random.default_rng() if rng is None else rng
            # thresholds start spread over the range of values they compare
            params = NglcmParams(
                rng.uniform(-0.5, levels - 0.5, size=(levels, 1)),
                rng.uniform(-(levels - 0.5), levels - 0.5, size=(levels, 1)),
            )
        self.params = [params.phi_a, params.phi_b]
        self.grads = [np.zeros_like(params.phi_a), np.zeros_like(params.phi_b)]
        self.n_forward = 0
        self._maps = {}

    @property
    def phi(self):
        return NglcmParams(self.params[0], self.params[1])

    @property
    def n_outputs(self):
        return len(self.directions) * self.params[0].shape[0] * self.params[1].shape[0]

    def _map(self, m, direction):
        key = (m, direction)
        if key not in self._maps:
            self._maps[key] = neighbor_map(m, direction)
        return self._maps[key]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != x.shape[2] or x.shape[1] < 2:
            raise DimensionError(f"nglcm expects (batch, m, m) input, got {x.shape}")
        self.n_forward += 1
        n, m = x.shape[0], x.shape[1]
        a = x.reshape(n, m * m)
        outs, caches = [], []
        for d in self.directions:
            G, cache = _forward_batch(a, self.params[0], self.params[1], *self._map(m, d))
            outs.append(G.reshape(n, -1))
            caches.append((G.shape, cache))
        self.cache = (x.shape, caches)
        return np.concatenate(outs, axis=1)

    def backward(self, grad):
        shape, caches = self._cached()
        grad_a = np.zeros((shape[0], shape[1] * shape[2]))
        start = 0
        for gshape, cache in caches:
            width = gshape[1] * gshape[2]
            gG = grad[:, start:start + width].reshape(gshape)
            start += width
            gpa, gpb, ga = _backward_batch(gG, cache)
            self.grads[0] += gpa
            self.grads[1] += gpb
            grad_a += ga
        return grad_a.reshape(shape)


def nglcm_features(images, params, direction=Direction.DEG0, levels=DEFAULT_LEVELS):
    """Flattened G for every quantized image in a stack (no gradient bookkeeping)."""
    imgs = [check_quantized(im, levels) for im in images]
    layer = NGLCM(levels, (direction,), params=params)
    return layer.forward(np.stack(imgs).astype(np.float64))
