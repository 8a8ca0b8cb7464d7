"""Finite-difference checks for every differentiable component.

Each check wraps a component as a tiny "model" exposing ``params``, ``grads``
and ``loss_and_backward`` so :func:`netcore.grad_check` can perturb it. Inputs
that the component differentiates with respect to are exposed as parameters.
"""
import numpy as np

from .advhead import GradReversal, make_discriminator, mse_loss
from .hexhead import HexMode, Projection, column_normalize, column_normalize_backward
from .model import HexModel, PlainModel
from .netcore import Conv2D, Dense, Flatten, Network, ReLU, Sigmoid, grad_check
from .nglcm import NGLCM


class FunctionProbe:
    """``loss = sum(weights * f(*inputs))`` with the inputs as parameters.

    ``fn(*inputs)`` returns ``(output, backward)`` where ``backward(grad)``
    returns one gradient per input.
    """

    def __init__(self, fn, inputs, rng):
        self.fn = fn
        self.params = [np.array(x, dtype=np.float64) for x in inputs]
        self.grads = [np.zeros_like(x) for x in self.params]
        out, _ = fn(*self.params)
        self.weights = rng.standard_normal(np.shape(out))

    def loss_and_backward(self, x=None, labels=None):
        out, backward = self.fn(*self.params)
        for g, d in zip(self.grads, backward(self.weights)):
            g[...] = d
        return float(np.sum(self.weights * out))


class LayerWithInput:
    """A network whose input is also a parameter, so input gradients get checked."""

    def __init__(self, net, x):
        self.net = net
        self.x = np.array(x, dtype=np.float64)
        self.gx = np.zeros_like(self.x)

    @property
    def params(self):
        return self.net.params + [self.x]

    @property
    def grads(self):
        return self.net.grads + [self.gx]

    def loss_and_backward(self, _x, labels):
        self.net.zero_grad()
        loss = self.net.loss_and_backward(self.x, labels)
        from .netcore import cross_entropy
        _, g = cross_entropy(self.net.forward(self.x), labels)
        self.net.zero_grad()
        self.gx[...] = self.net.backward(g)
        return loss


def _projection_fn(F_A, F_G):
    proj = Projection()
    out = proj.forward(F_A, F_G)
    return out, proj.backward


def _ridge_projection_fn(F_A, F_G, lam=0.3):
    proj = Projection()
    out = proj.forward(F_A, F_G, ridge=lam)
    return out, proj.backward


def _normalize_fn(R):
    out = column_normalize(R)
    return out, lambda g: (column_normalize_backward(g, out, R),)


def _grl_fn(disc, grl, target):
    def fn(h):
        # the reversal layer's backward computes the gradient of -scale * loss
        pred = disc.forward(grl.forward(h))
        loss, grad = mse_loss(pred, target)
        disc.zero_grad()

        def backward(w):
            return (grl.backward(disc.backward(w * grad)),)
        return -grl.scale * loss, backward
    return fn


def gradcheck_suite(seed=0, entries=20, step=1e-5, tolerance=1e-4, model_step=1e-4):
    """Run every component check; returns ``{name: GradCheckReport}``.

    Components are checked at ``step``. Whole models (keys ``*_model*``) chain
    normalization, a Gram inverse and softmax; roundoff in their loss is
    amplified enough that they use the coarser ``model_step``.
    """
    rng = np.random.default_rng(seed)
    reports = {}
    n, C = 6, 3
    labels = rng.integers(0, C, size=n)

    x = rng.standard_normal((n, 5))
    reports["dense"] = grad_check(LayerWithInput(Network([Dense(5, C, rng)]), x), None, labels,
                                  step, tolerance, entries=entries, rng=rng)
    net = Network([Dense(5, 7, rng), Sigmoid(), Dense(7, C, rng)])
    reports["sigmoid"] = grad_check(LayerWithInput(net, x), None, labels, step, tolerance,
                                    entries=entries, rng=rng)
    net = Network([Dense(5, 7, rng), ReLU(), Dense(7, C, rng)])
    reports["relu"] = grad_check(LayerWithInput(net, x), None, labels, step, tolerance,
                                 entries=entries, rng=rng)
    xc = rng.standard_normal((n, 2, 6, 6))
    net = Network([Conv2D(2, 3, 3, rng), Flatten(), Dense(3 * 4 * 4, C, rng)])
    reports["conv2d"] = grad_check(LayerWithInput(net, xc), None, labels, step, tolerance,
                                   entries=entries, rng=rng)

    # gray levels off the integer grid keep the NGLCM clip kinks away from the probe points
    xg = rng.uniform(0, 7.5, size=(n, 5, 5))
    net = Network([NGLCM(8, ("deg0", "deg45", "deg90", "deg135"), rng), Flatten(),
                   Dense(4 * 64, C, rng)])
    net.layers[-1].params[0] *= 0.05
    reports["nglcm"] = grad_check(LayerWithInput(net, xg), None, labels, step, tolerance,
                                  entries=entries, rng=rng)

    F_A, F_G = rng.standard_normal((16, 4)), rng.standard_normal((16, 4))
    reports["projection"] = grad_check(FunctionProbe(_projection_fn, [F_A, F_G], rng), None,
                                       None, step, tolerance, entries=entries, rng=rng)
    reports["projection_ridge"] = grad_check(
        FunctionProbe(_ridge_projection_fn, [F_A[:3], F_G[:3]], rng), None, None, step,
        tolerance, entries=entries, rng=rng)
    # single-input probes get twice the entries so they reach the same coverage
    reports["column_normalize"] = grad_check(
        FunctionProbe(_normalize_fn, [rng.standard_normal((8, 5))], rng), None, None, step,
        tolerance, entries=2 * entries, rng=rng)

    disc = make_discriminator(4, 3, 8, rng)
    grl = GradReversal(0.7)
    target = rng.standard_normal((2 * n, 3))
    reports["grl_composite"] = grad_check(
        FunctionProbe(_grl_fn(disc, grl, target), [rng.standard_normal((2 * n, 4))], rng),
        None, None, step, tolerance, entries=2 * entries, rng=rng)

    # per-image gray ranges differ so texture features vary across rows; near-identical
    # rows make F_G almost rank one and the loss too ill-conditioned for differencing
    imgs = rng.uniform(0, 1, size=(24, 8, 8)) * rng.uniform(40, 256, size=(24, 1, 1))
    y = rng.integers(0, C, size=24)
    for mode in (HexMode.HEX, HexMode.HEX_ADV, HexMode.ABLATION_N):
        model = HexModel(C, 8, mode=mode, h_width=6, hidden=8, g_width=5, levels=4,
                         activation="sigmoid", rng=rng)
        # raw co-occurrence counts saturate the sigmoid at default scale
        model.texture.layers[1].params[0] *= 0.1
        reports[f"hex_model_{mode.value}"] = grad_check(model, imgs, y, model_step, tolerance,
                                                        entries=entries, rng=rng)
    reports["plain_model"] = grad_check(PlainModel(C, 8, h_width=6, hidden=8, rng=rng), imgs,
                                        y, model_step, tolerance, entries=entries, rng=rng)
    return reports
