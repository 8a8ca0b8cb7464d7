"""Composed models: the plain baseline and the two-branch texture-aware model.

All models take a stack of 256-level images (n, m, m) and share one
interface: ``params``, ``grads``, ``loss_and_backward(X, y)``, ``step(X, y)``
and ``predict(X)``.
"""
import numpy as np

from .glcm import DEFAULT_LEVELS, quantize
from .hexhead import HexHead, HexMode
from .netcore import (AdamState, Conv2D, Dense, Flatten, Network, ReLU, Sigmoid,
                      adam_step, cross_entropy)
from .nglcm import NGLCM

ACTIVATIONS = {"relu": ReLU, "sigmoid": Sigmoid}


def make_encoder(kind, side, h_width=32, hidden=64, conv_channels=(4, 8), kernel_size=5,
                 rng=None):
    """Raw-pixel encoder ``h``: a two-layer MLP or two convolutions plus a dense layer."""
    if kind == "mlp":
        return Network([Flatten(), Dense(side * side, hidden, rng), ReLU(),
                        Dense(hidden, h_width, rng), ReLU()])
    if kind == "cnn":
        c1, c2 = conv_channels
        out_side = side - 2 * (kernel_size - 1)
        return Network([Conv2D(1, c1, kernel_size, rng), ReLU(),
                        Conv2D(c1, c2, kernel_size, rng), ReLU(), Flatten(),
                        Dense(c2 * out_side * out_side, h_width, rng), ReLU()])
    raise ValueError(f"unknown encoder kind {kind!r}")


def make_texture_branch(kind, side, g_width=32, levels=DEFAULT_LEVELS, directions=("deg0",),
                        activation="relu", rng=None):
    """Texture branch ``g``: NGLCM followed by one dense layer, or a one-layer MLP."""
    act = ACTIVATIONS[activation]
    if kind == "nglcm":
        block = NGLCM(levels, directions, rng=rng)
        return Network([block, Dense(block.n_outputs, g_width, rng), act()])
    if kind == "mlp":
        return Network([Flatten(), Dense(side * side, g_width, rng), act()])
    raise ValueError(f"unknown texture branch kind {kind!r}")


def encoder_input(X, kind):
    x = np.asarray(X, dtype=np.float64) / 255.0
    return x[:, None] if kind == "cnn" else x


def texture_input(X, kind, levels=DEFAULT_LEVELS):
    if kind == "nglcm":
        return quantize(X, levels).astype(np.float64)
    return np.asarray(X, dtype=np.float64) / 255.0


class Model:
    """Shared training plumbing; subclasses define the forward/backward wiring."""

    batch_eval = 64

    def __init__(self, lr=5e-4):
        self.lr = lr
        self._opt = None

    def modules(self):
        raise NotImplementedError

    @property
    def params(self):
        return [p for m in self.modules() for p in m.params]

    @property
    def grads(self):
        return [g for m in self.modules() for g in m.grads]

    def zero_grad(self):
        for g in self.grads:
            g.fill(0.0)

    def step(self, X, y):
        """One optimizer step on a minibatch; returns the training loss."""
        if self._opt is None:
            self._opt = AdamState.for_params(self.params, lr=self.lr)
        loss = self.loss_and_backward(X, y)
        adam_step(self.params, self.grads, self._opt)
        return loss

    def decision_function(self, X):
        """Logits used for prediction, evaluated in chunks of ``batch_eval``."""
        X = np.asarray(X)
        out = [self._logits_batch(X[i:i + self.batch_eval])
               for i in range(0, len(X), self.batch_eval)]
        return np.concatenate(out) if out else np.zeros((0, self.n_classes))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def get_state(self):
        return [p.copy() for p in self.params]

    def set_state(self, state):
        for p, s in zip(self.params, state):
            p[...] = s


class PlainModel(Model):
    """Baseline: encoder followed by a dense decoder."""

    def __init__(self, n_classes, side, encoder="mlp", h_width=32, hidden=64,
                 conv_channels=(4, 8), kernel_size=5, lr=5e-4, rng=None):
        super().__init__(lr)
        rng = np.random.default_rng() if rng is None else rng
        self.n_classes = n_classes
        self.encoder_kind = encoder
        self.encoder = make_encoder(encoder, side, h_width, hidden, conv_channels,
                                    kernel_size, rng)
        self.decoder = Dense(h_width, n_classes, rng)

    def modules(self):
        return [self.encoder, self.decoder]

    def logits(self, X):
        return self.decoder.forward(self.encoder.forward(encoder_input(X, self.encoder_kind)))

    def loss_and_backward(self, X, y):
        self.zero_grad()
        loss, grad = cross_entropy(self.logits(X), y)
        self.encoder.backward(self.decoder.backward(grad))
        return loss

    def _logits_batch(self, X):
        return self.logits(X)


class HexModel(Model):
    """Raw-pixel encoder plus texture branch feeding a :class:`HexHead`.

    ``zero_texture`` replaces the texture representation by zeros, which
    reduces the model to a column-normalized baseline (used for ablation).
    """

    def __init__(self, n_classes, side, mode=HexMode.HEX, texture="nglcm", encoder="mlp",
                 h_width=32, hidden=64, g_width=32, conv_channels=(4, 8), kernel_size=5,
                 levels=DEFAULT_LEVELS, directions=("deg0",), activation="relu",
                 lambda_loss=1.0, stop_gradient=False, zero_texture=False, lr=5e-4,
                 rng=None):
        super().__init__(lr)
        rng = np.random.default_rng() if rng is None else rng
        self.n_classes = n_classes
        self.encoder_kind = encoder
        self.texture_kind = texture
        self.levels = levels
        self.g_width = g_width
        self.zero_texture = zero_texture
        self.encoder = make_encoder(encoder, side, h_width, hidden, conv_channels,
                                    kernel_size, rng)
        self.texture = make_texture_branch(texture, side, g_width, levels, directions,
                                           activation, rng)
        self.head = HexHead(Dense(h_width + g_width, n_classes, rng), mode, lambda_loss,
                            normalize=True, stop_gradient=stop_gradient)

    @property
    def mode(self):
        return self.head.mode

    def modules(self):
        return [self.encoder, self.texture, self.head]

    def representations(self, X):
        h = self.encoder.forward(encoder_input(X, self.encoder_kind))
        if self.zero_texture:
            g = np.zeros((h.shape[0], self.g_width))
        else:
            g = self.texture.forward(texture_input(X, self.texture_kind, self.levels))
        return h, g

    def outputs(self, X):
        h, g = self.representations(X)
        return self.head.forward(h, g)

    def loss_and_backward(self, X, y):
        self.zero_grad()
        self.outputs(X)
        loss, grads = self.head.loss(y)
        dh, dg = self.head.backward(grads)
        self.encoder.backward(dh)
        if not self.zero_texture:
            self.texture.backward(dg)
        return loss

    def _logits_batch(self, X):
        if self.mode is HexMode.HEX_ALL:
            return self.outputs(X).F_L
        # F_P only: the texture branch is not evaluated at prediction time
        h = self.encoder.forward(encoder_input(X, self.encoder_kind))
        return self.head.forward_p(h, self.g_width)

    @property
    def nglcm_block(self):
        first = self.texture.layers[0]
        return first if isinstance(first, NGLCM) else None


class BranchClassifier(Model):
    """A texture branch alone with a dense decoder, trained on the labels.

    Used by the probe experiment to compare what the NGLCM branch and a
    one-layer MLP branch pick up when trained for the semantic task.
    """

    def __init__(self, n_classes, side, texture="nglcm", g_width=32, levels=DEFAULT_LEVELS,
                 directions=("deg0",), activation="relu", lr=5e-4, rng=None):
        super().__init__(lr)
        rng = np.random.default_rng() if rng is None else rng
        self.n_classes = n_classes
        self.texture_kind = texture
        self.levels = levels
        self.branch = make_texture_branch(texture, side, g_width, levels, directions,
                                          activation, rng)
        self.decoder = Dense(g_width, n_classes, rng)

    def modules(self):
        return [self.branch, self.decoder]

    def representation(self, X):
        """Branch output for a stack of images, in chunks."""
        X = np.asarray(X)
        out = [self.branch.forward(texture_input(X[i:i + self.batch_eval], self.texture_kind,
                                                 self.levels))
               for i in range(0, len(X), self.batch_eval)]
        return np.concatenate(out)

    def loss_and_backward(self, X, y):
        self.zero_grad()
        g = self.branch.forward(texture_input(X, self.texture_kind, self.levels))
        loss, grad = cross_entropy(self.decoder.forward(g), y)
        self.branch.backward(self.decoder.backward(grad))
        return loss

    def _logits_batch(self, X):
        return self.decoder.forward(
            self.branch.forward(texture_input(X, self.texture_kind, self.levels)))
