"""Projection head that removes texture-explainable variance from logits.

Given raw-branch features ``h`` and texture-branch features ``g`` (both
column-normalized per minibatch) and a decoder ``f``::

    F_A = f([h, g])    F_G = f([0, g])    F_P = f([h, 0])
    F_L = (I - F_G (F_G^T F_G)^-1 F_G^T) F_A

``F_L`` is the least-squares residual of each column of ``F_A`` regressed on
``F_G``. Training uses ``F_L``; prediction uses ``F_P`` (or ``F_L``).
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import linalg
from .exceptions import DimensionError, InputError, SingularMatrixError, StateError
from .netcore import cross_entropy

NORM_FLOOR = 1e-12
RIDGE_SCALE = 1e-4


class HexMode(Enum):
    HEX = "hex"
    HEX_ADV = "hex_adv"
    HEX_ALL = "hex_all"
    ABLATION_N = "ablation_n"

    @property
    def needs_projection(self):
        return self is not HexMode.ABLATION_N


@dataclass
class HexOutputs:
    F_A: np.ndarray
    F_G: np.ndarray
    F_P: np.ndarray
    F_L: np.ndarray = None
    used_ridge: bool = False


def column_normalize(R):
    """Scale every column to unit L2 norm; columns with norm < 1e-12 become 0."""
    R = linalg.as_matrix(R, "R")
    norms = linalg.column_l2_norms(R)
    safe = norms >= NORM_FLOOR
    return np.where(safe, R / np.where(safe, norms, 1.0), 0.0)


def column_normalize_backward(grad, out, R):
    """Gradient through :func:`column_normalize` given its output ``out``."""
    norms = linalg.column_l2_norms(R)
    safe = norms >= NORM_FLOOR
    radial = np.sum(out * grad, axis=0, keepdims=True)
    return np.where(safe, (grad - out * radial) / np.where(safe, norms, 1.0), 0.0)


def _stack_inputs(h_repr, g_repr):
    h = linalg.as_matrix(h_repr, "h_repr")
    g = linalg.as_matrix(g_repr, "g_repr")
    if h.shape[0] != g.shape[0]:
        raise DimensionError(f"h_repr has {h.shape[0]} rows but g_repr has {g.shape[0]}")
    zh = np.zeros_like(h)
    zg = np.zeros_like(g)
    return np.vstack([np.hstack([h, g]), np.hstack([zh, g]), np.hstack([h, zg])])


def build_outputs(h_repr, g_repr, decoder):
    """Evaluate ``F_A``, ``F_G`` and ``F_P`` with one stacked decoder pass.

    The decoder caches the stacked batch, so a single ``decoder.backward`` on
    the stacked output gradients serves all three outputs.
    """
    z = _stack_inputs(h_repr, g_repr)
    out = decoder.forward(z)
    n = z.shape[0] // 3
    return HexOutputs(F_A=out[:n], F_G=out[n:2 * n], F_P=out[2 * n:])


def _check_pair(F_A, F_G):
    F_A = linalg.as_matrix(F_A, "F_A")
    F_G = linalg.as_matrix(F_G, "F_G")
    if F_A.shape[0] != F_G.shape[0]:
        raise DimensionError(f"F_A has {F_A.shape[0]} rows but F_G has {F_G.shape[0]}")
    return F_A, F_G


def hex_project(F_A, F_G):
    """Exact residual-maker projection of ``F_A`` against the columns of ``F_G``.

    Raises SingularMatrixError when the batch has no more rows than ``F_G``
    has columns or when the Gram matrix fails the Cholesky pivot test.
    """
    return Projection().forward(F_A, F_G, ridge=None)


def hex_project_ridge(F_A, F_G, lam):
    """``F_A - F_G (F_G^T F_G + lam I)^-1 F_G^T F_A``."""
    if not lam > 0:
        raise InputError(f"ridge lambda must be positive, got {lam}")
    return Projection().forward(F_A, F_G, ridge=lam)


def hex_project_kailath(F_A, F_G, lam):
    """Ridge projection evaluated in the batch-sized dual form.

    Uses ``(F_G^T F_G + lam I)^-1 F_G^T = F_G^T (F_G F_G^T + lam I)^-1``, so the
    inverse is taken in the n x n row space rather than the C x C column space.
    """
    if not lam > 0:
        raise InputError(f"ridge lambda must be positive, got {lam}")
    F_A, F_G = _check_pair(F_A, F_G)
    n = F_G.shape[0]
    alpha = linalg.solve_spd(F_G @ F_G.T + lam * np.eye(n), F_A)
    return F_A - F_G @ (F_G.T @ alpha)


def default_ridge(F_G):
    gram_diag = np.sum(F_G * F_G, axis=0)
    mean = float(gram_diag.mean()) if gram_diag.size else 0.0
    return RIDGE_SCALE * mean if mean > 0 else 1.0


class Projection:
    """Projection with a cached forward pass and an exact backward pass.

    ``stop_gradient`` treats the projection matrix as a constant: ``F_A``
    still receives ``(I - H)^T grad`` but ``F_G`` receives nothing.
    """

    def __init__(self, stop_gradient=False):
        self.stop_gradient = stop_gradient
        self.cache = None

    def forward(self, F_A, F_G, ridge=None):
        F_A, F_G = _check_pair(F_A, F_G)
        n, c = F_G.shape
        gram = F_G.T @ F_G
        if ridge is None:
            if n <= c:
                raise SingularMatrixError(
                    f"batch size {n} must exceed the number of columns {c}"
                )
        else:
            gram = gram + ridge * np.eye(c)
        gram_inv = linalg.spd_inverse(gram)
        cross = F_G.T @ F_A
        beta = gram_inv @ cross
        self.cache = (F_A, F_G, gram_inv, cross, beta)
        return F_A - F_G @ beta

    def backward(self, grad_F_L):
        if self.cache is None:
            raise StateError("projection backward called before forward")
        F_A, F_G, gram_inv, cross, beta = self.cache
        grad_F_L = linalg.as_matrix(grad_F_L, "grad_F_L")
        if grad_F_L.shape != F_A.shape:
            raise DimensionError(f"grad_F_L shape {grad_F_L.shape} != {F_A.shape}")
        g_beta = -F_G.T @ grad_F_L
        g_cross = gram_inv.T @ g_beta
        grad_A = grad_F_L + F_G @ g_cross
        if self.stop_gradient:
            return grad_A, np.zeros_like(F_G)
        g_gram = linalg.inverse_backward(gram_inv, g_beta @ cross.T)
        grad_G = -grad_F_L @ beta.T + F_A @ g_cross.T + F_G @ (g_gram + g_gram.T)
        return grad_A, grad_G


def hex_backward(projection, grad_F_L):
    return projection.backward(grad_F_L)


def hex_loss(outputs, labels, mode, lambda_loss=1.0):
    """Training loss for ``mode`` and its gradients with respect to the outputs.

    Returns ``(loss, grads)`` where ``grads`` maps output names (``F_A``,
    ``F_G``, ``F_L``) to gradient arrays.
    """
    mode = HexMode(mode)
    if mode is HexMode.ABLATION_N:
        loss, g = cross_entropy(outputs.F_A, labels)
        return loss, {"F_A": g}
    if outputs.F_L is None:
        raise StateError("F_L has not been computed for these outputs")
    loss, g = cross_entropy(outputs.F_L, labels)
    grads = {"F_L": g}
    if mode is HexMode.HEX_ADV and lambda_loss != 0:
        loss_g, g_g = cross_entropy(outputs.F_G, labels)
        loss += lambda_loss * loss_g
        grads["F_G"] = lambda_loss * g_g
    return loss, grads


def predict(outputs, mode):
    """Row-wise argmax of ``F_L`` for HEX_ALL, of ``F_P`` otherwise (ties -> lowest index)."""
    F = outputs.F_L if HexMode(mode) is HexMode.HEX_ALL else outputs.F_P
    return np.argmax(F, axis=1)


class HexHead:
    """Normalization, decoder, projection and loss for one minibatch step.

    ``decoder`` is any object with ``forward``/``backward`` and ``params``/``grads``
    taking ``[h, g]`` rows. With ``normalize`` both representations are
    column-normalized before concatenation.
    """

    def __init__(self, decoder, mode=HexMode.HEX, lambda_loss=1.0, normalize=True,
                 stop_gradient=False):
        self.decoder = decoder
        self.mode = HexMode(mode)
        self.lambda_loss = lambda_loss
        self.normalize = normalize
        self.projection = Projection(stop_gradient=stop_gradient)
        self.outputs = None
        self._inputs = None

    @property
    def params(self):
        return self.decoder.params

    @property
    def grads(self):
        return self.decoder.grads

    def _norm(self, R):
        return column_normalize(R) if self.normalize else linalg.as_matrix(R)

    def forward(self, h_repr, g_repr, project=None):
        hn, gn = self._norm(h_repr), self._norm(g_repr)
        self._inputs = (h_repr, g_repr, hn, gn)
        out = build_outputs(hn, gn, self.decoder)
        project = self.mode.needs_projection if project is None else project
        if project:
            try:
                out.F_L = self.projection.forward(out.F_A, out.F_G)
            except SingularMatrixError:
                out.F_L = self.projection.forward(out.F_A, out.F_G, ridge=default_ridge(out.F_G))
                out.used_ridge = True
        self.outputs = out
        return out

    def forward_p(self, h_repr, g_width):
        """``F_P`` only; the texture branch is never evaluated."""
        hn = self._norm(h_repr)
        z = np.hstack([hn, np.zeros((hn.shape[0], g_width))])
        return self.decoder.forward(z)

    def loss(self, labels):
        return hex_loss(self.outputs, labels, self.mode, self.lambda_loss)

    def backward(self, grads):
        """Backpropagate output gradients; returns ``(grad_h_repr, grad_g_repr)``.

        ``grads`` maps any of ``F_A``, ``F_G``, ``F_P``, ``F_L`` to arrays.
        """
        if self.outputs is None or self._inputs is None:
            raise StateError("HexHead.backward called before forward")
        out = self.outputs
        gA = np.zeros_like(out.F_A)
        gG = np.zeros_like(out.F_G)
        gP = np.zeros_like(out.F_P)
        if "F_L" in grads:
            pa, pg = self.projection.backward(grads["F_L"])
            gA += pa
            gG += pg
        gA += grads.get("F_A", 0.0)
        gG += grads.get("F_G", 0.0)
        gP += grads.get("F_P", 0.0)
        dz = self.decoder.backward(np.vstack([gA, gG, gP]))
        h_repr, g_repr, hn, gn = self._inputs
        n, hw = hn.shape
        d_hn = dz[:n, :hw] + dz[2 * n:, :hw]
        d_gn = dz[:n, hw:] + dz[n:2 * n, hw:]
        if self.normalize:
            d_hn = column_normalize_backward(d_hn, hn, h_repr)
            d_gn = column_normalize_backward(d_gn, gn, g_repr)
        return d_hn, d_gn
