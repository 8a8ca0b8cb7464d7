"""Reverse-gradient alternatives to the projection head.

ADV: a discriminator reads the raw-branch logits ``F_P`` and tries to match
the texture-branch class distribution ``softmax(F_G)``; the encoder receives
the reversed gradient so ``F_P`` stops carrying what ``F_G`` knows.

ADVE: a discriminator regresses the texture representation ``g`` from the
raw representation ``h``; again the encoder receives the reversed gradient.

In both variants the texture branch only supplies (detached) targets.
"""
import numpy as np

from .exceptions import DimensionError
from .glcm import DEFAULT_LEVELS
from .hexhead import HexMode, column_normalize_backward
from .model import HexModel
from .netcore import AdamState, Dense, Network, ReLU, adam_step, cross_entropy, log_softmax, softmax


class GradReversal:
    """Identity forward; backward multiplies the gradient by ``-scale``."""

    def __init__(self, scale=1.0):
        if scale < 0:
            raise ValueError("reversal scale must be nonnegative")
        self.scale = scale

    def forward(self, x):
        return x

    def backward(self, grad):
        return -self.scale * grad

    grl_forward = forward
    grl_backward = backward


def make_discriminator(n_in, n_out, width=64, rng=None):
    """One hidden ReLU layer of ``width`` units."""
    return Network([Dense(n_in, width, rng), ReLU(), Dense(width, n_out, rng)])


def mse_loss(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def soft_cross_entropy(logits, target_probs):
    """Mean cross-entropy against soft targets and its gradient."""
    n = logits.shape[0]
    loss = -float(np.sum(target_probs * log_softmax(logits))) / n
    return loss, (softmax(logits) - target_probs) / n


def adve_step(h_repr, g_repr, discriminator, grl):
    """Discriminator regression of ``g_repr`` from ``h_repr``.

    Accumulates the discriminator's own gradients and returns
    ``(disc_loss, grad_h)`` where ``grad_h`` has already passed the reversal.
    ``g_repr`` is a constant target.
    """
    if h_repr.shape[0] != g_repr.shape[0]:
        raise DimensionError("h_repr and g_repr row counts differ")
    pred = discriminator.forward(grl.forward(h_repr))
    loss, grad = mse_loss(pred, g_repr)
    return loss, grl.backward(discriminator.backward(grad))


def adv_step(outputs, labels, discriminator, grl):
    """Task loss on ``F_P`` plus the reversed F_G-matching term.

    Returns ``(loss, grads)`` with ``grads["F_P"]`` ready for the head's
    backward pass; the discriminator's gradients are accumulated.
    """
    task_loss, g_task = cross_entropy(outputs.F_P, labels)
    target = softmax(outputs.F_G)
    pred = discriminator.forward(grl.forward(outputs.F_P))
    disc_loss, g_disc = soft_cross_entropy(pred, target)
    g_rev = grl.backward(discriminator.backward(g_disc))
    return task_loss + disc_loss, {"F_P": g_task + g_rev}


class AdversarialModel(HexModel):
    """Two-branch model trained with ADV (``variant="adv"``) or ADVE (``"adve"``).

    Updates alternate per minibatch: one discriminator step on detached
    inputs, then one main step. The discriminator draws its initial weights
    from its own generator, so ``adv_scale=0`` or ``use_discriminator=False``
    leave the main model's trajectory identical to task-only training.
    """

    def __init__(self, n_classes, side, variant="adv", adv_scale=1.0, disc_width=64,
                 use_discriminator=True, disc_rng=None, texture="nglcm", encoder="mlp",
                 h_width=32, hidden=64, g_width=32, conv_channels=(4, 8), kernel_size=5,
                 levels=DEFAULT_LEVELS, directions=("deg0",), activation="relu", lr=5e-4,
                 rng=None):
        super().__init__(n_classes, side, HexMode.ABLATION_N, texture, encoder, h_width,
                         hidden, g_width, conv_channels, kernel_size, levels, directions,
                         activation, lr=lr, rng=rng)
        if variant not in ("adv", "adve"):
            raise ValueError(f"unknown adversarial variant {variant!r}")
        self.variant = variant
        self.use_discriminator = use_discriminator
        self.grl = GradReversal(adv_scale)
        disc_rng = np.random.default_rng() if disc_rng is None else disc_rng
        if variant == "adv":
            self.discriminator = make_discriminator(n_classes, n_classes, disc_width, disc_rng)
        else:
            self.discriminator = make_discriminator(h_width, g_width, disc_width, disc_rng)
        self._disc_opt = None

    def modules(self):
        # the texture branch is frozen: it only provides targets
        return [self.encoder, self.head]

    def _discriminator_step(self, X):
        if self._disc_opt is None:
            self._disc_opt = AdamState.for_params(self.discriminator.params, lr=self.lr)
        self.discriminator.zero_grad()
        h, g = self.representations(X)
        if self.variant == "adve":
            pred = self.discriminator.forward(self.head._norm(h))
            _, grad = mse_loss(pred, self.head._norm(g))
        else:
            out = self.head.forward(h, g, project=False)
            pred = self.discriminator.forward(out.F_P)
            _, grad = soft_cross_entropy(pred, softmax(out.F_G))
        self.discriminator.backward(grad)
        adam_step(self.discriminator.params, self.discriminator.grads, self._disc_opt)

    def loss_and_backward(self, X, y):
        self.zero_grad()
        h, g = self.representations(X)
        out = self.head.forward(h, g, project=False)
        if not self.use_discriminator:
            loss, g_p = cross_entropy(out.F_P, y)
            dh, _ = self.head.backward({"F_P": g_p})
            self.encoder.backward(dh)
            return loss
        self.discriminator.zero_grad()
        if self.variant == "adv":
            loss, grads = adv_step(out, y, self.discriminator, self.grl)
            dh, _ = self.head.backward(grads)
        else:
            loss, g_p = cross_entropy(out.F_P, y)
            dh, _ = self.head.backward({"F_P": g_p})
            hn, gn = self.head._inputs[2], self.head._inputs[3]
            disc_loss, g_hn = adve_step(hn, gn, self.discriminator, self.grl)
            loss += disc_loss
            # reversed gradient enters at the normalized representation
            dh = dh + column_normalize_backward(g_hn, hn, h)
        self.encoder.backward(dh)
        return loss

    def step(self, X, y):
        if self.use_discriminator:
            self._discriminator_step(X)
        return super().step(X, y)
