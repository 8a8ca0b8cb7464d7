"""Small layer-based network with exact reverse-mode gradients.

The layer set is fixed (dense, conv2d, relu, sigmoid, flatten). Every layer
keeps the activations it needs for ``backward`` in ``cache`` and writes its
parameter gradients into ``grads`` (same shapes as ``params``).
"""
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import DimensionError, FormatError, InputError, StateError


def glorot_uniform(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = []
        self.grads = []
        self.cache = None

    def zero_grad(self):
        for g in self.grads:
            g.fill(0.0)

    def _cached(self):
        if self.cache is None:
            raise StateError(f"{self.kind}: backward called before forward")
        return self.cache

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Dense(Layer):
    """Affine map ``y = x W + b`` on row-major batches."""

    kind = "dense"

    def __init__(self, n_in, n_out, rng=None, weight=None, bias=None):
        super().__init__()
        if weight is None:
            rng = np.random.default_rng() if rng is None else rng
            weight = glorot_uniform(rng, n_in, n_out, (n_in, n_out))
        if bias is None:
            bias = np.zeros((1, n_out))
        weight = np.array(weight, dtype=np.float64)
        bias = np.array(bias, dtype=np.float64).reshape(1, -1)
        if weight.shape != (n_in, n_out) or bias.shape != (1, n_out):
            raise DimensionError("dense weight/bias shapes do not match n_in/n_out")
        self.params = [weight, bias]
        self.grads = [np.zeros_like(weight), np.zeros_like(bias)]

    @property
    def weight(self):
        return self.params[0]

    @property
    def bias(self):
        return self.params[1]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.weight.shape[0]:
            raise DimensionError(
                f"dense expects (batch, {self.weight.shape[0]}), got {x.shape}"
            )
        self.cache = x
        return x @ self.weight + self.bias

    def backward(self, grad):
        x = self._cached()
        self.grads[0] += x.T @ grad
        self.grads[1] += grad.sum(axis=0, keepdims=True)
        return grad @ self.weight.T


class Conv2D(Layer):
    """Valid-padding, stride-1 convolution on (batch, channels, H, W) input.

    The kernel is stored flattened as a (in_ch * k * k, out_ch) matrix so the
    forward pass is a single im2col product.
    """

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size, rng=None):
        super().__init__()
        rng = np.random.default_rng() if rng is None else rng
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        fan_in = in_channels * kernel_size * kernel_size
        fan_out = out_channels * kernel_size * kernel_size
        weight = glorot_uniform(rng, fan_in, fan_out, (fan_in, out_channels))
        bias = np.zeros((1, out_channels))
        self.params = [weight, bias]
        self.grads = [np.zeros_like(weight), np.zeros_like(bias)]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        k = self.kernel_size
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(
                f"conv2d expects (batch, {self.in_channels}, H, W), got {x.shape}"
            )
        n, c, h, w = x.shape
        if h < k or w < k:
            raise DimensionError(f"input {h}x{w} smaller than kernel {k}")
        oh, ow = h - k + 1, w - k + 1
        # (n, c, oh, ow, k, k) -> (n, oh, ow, c, k, k)
        windows = sliding_window_view(x, (k, k), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5)
        cols = windows.reshape(n * oh * ow, c * k * k)
        self.cache = (x.shape, cols)
        out = cols @ self.params[0] + self.params[1]
        return out.reshape(n, oh, ow, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, grad):
        (n, c, h, w), cols = self._cached()
        k = self.kernel_size
        oh, ow = h - k + 1, w - k + 1
        g = grad.transpose(0, 2, 3, 1).reshape(n * oh * ow, self.out_channels)
        self.grads[0] += cols.T @ g
        self.grads[1] += g.sum(axis=0, keepdims=True)
        dcols = (g @ self.params[0].T).reshape(n, oh, ow, c, k, k)
        dx = np.zeros((n, c, h, w))
        for di in range(k):
            for dj in range(k):
                dx[:, :, di:di + oh, dj:dj + ow] += dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        return dx


class ReLU(Layer):
    """Rectifier; the subgradient at exactly 0 is taken as 0."""

    kind = "relu"

    def forward(self, x):
        mask = x > 0
        self.cache = mask
        return np.where(mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._cached(), grad, 0.0)


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        out = 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))
        self.cache = out
        return out

    def backward(self, grad):
        out = self._cached()
        return grad * out * (1.0 - out)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        self.cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._cached())


class Network:
    """A sequence of layers evaluated in order."""

    def __init__(self, layers):
        self.layers = list(layers)

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self):
        return [g for layer in self.layers for g in layer.grads]

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def loss_and_backward(self, x, labels):
        """Cross-entropy loss of the logits; accumulates parameter gradients."""
        self.zero_grad()
        loss, grad = cross_entropy(self.forward(x), labels)
        self.backward(grad)
        return loss

    __call__ = forward


def forward(net, x):
    return net.forward(x)


def backward(net, grad_logits):
    return net.backward(grad_logits)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got {logits.shape}")
    n, c = logits.shape
    if labels.shape != (n,):
        raise InputError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise InputError(f"labels must lie in [0, {c})")
    labels = labels.astype(np.intp)
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


@dataclass
class AdamState:
    """First/second moments for each parameter plus the step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(params, grads, state):
    """Bias-corrected ADAM update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and optimizer state lengths differ")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DimensionError(f"param {p.shape} vs grad {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class GradCheckReport:
    max_rel_error: list
    failures: list
    skipped_kinks: int
    tolerance: float
    n_checked: int = 0

    @property
    def passed(self):
        return not self.failures

    @property
    def worst(self):
        return max(self.max_rel_error, default=0.0)


def grad_check(model, x, labels, step=1e-5, tolerance=1e-4, abs_floor=1e-6,
               entries=None, rng=None, skip_kinks=True, kink_ratio=None):
    """Compare analytic gradients with central differences.

    ``model`` needs ``params``, ``grads`` and ``loss_and_backward(x, labels)``.
    Relative error is ``|a - n| / max(|a|, |n|, abs_floor)``; the floor keeps
    roundoff in the difference quotient (about eps * |loss| / step) from
    dominating for near-zero gradients. An entry whose
    one-sided difference quotients disagree by more than ``kink_ratio`` (by
    default ``2 * tolerance``) of their magnitude is treated as sitting on a
    piecewise-linear kink within ``step`` and skipped (counted in
    ``skipped_kinks``). A kink closer than that moves the central difference
    by at most half the disagreement, so it cannot cause a false failure.
    ``entries`` limits the number of randomly chosen entries per parameter.
    """
    if step <= 0:
        raise InputError("step must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    ratio = 2 * tolerance if kink_ratio is None else kink_ratio
    base = model.loss_and_backward(x, labels)
    analytic = [g.copy() for g in model.grads]
    max_err = []
    failures = []
    skipped = 0
    checked = 0
    for pi, (p, a) in enumerate(zip(model.params, analytic)):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if entries is not None and flat.size > entries:
            idx = rng.choice(flat.size, size=entries, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = model.loss_and_backward(x, labels)
            flat[i] = orig - step
            down = model.loss_and_backward(x, labels)
            flat[i] = orig
            if skip_kinks:
                right = (up - base) / step
                left = (base - down) / step
                if abs(right - left) > ratio * max(abs(right), abs(left), abs_floor):
                    skipped += 1
                    continue
            checked += 1
            numeric = (up - down) / (2 * step)
            ana = a.reshape(-1)[i]
            err = abs(ana - numeric) / max(abs(ana), abs(numeric), abs_floor)
            worst = max(worst, err)
            if err > tolerance:
                failures.append((pi, int(i), float(err)))
        max_err.append(worst)
    model.loss_and_backward(x, labels)
    return GradCheckReport(max_err, failures, skipped, tolerance, checked)


MAGIC = b"HEXPNET1"


def save_params(layers_params, path):
    """Write parameters in a versioned little-endian binary layout.

    ``layers_params`` is a list (one item per layer) of lists of arrays.
    Layout: magic, u32 layer count, then per layer a u32 parameter count and,
    per parameter, u32 ndim, ndim x u32 dims, raw float64 values.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(layers_params)))
        for plist in layers_params:
            fh.write(struct.pack("<I", len(plist)))
            for p in plist:
                p = np.ascontiguousarray(p, dtype="<f8")
                fh.write(struct.pack("<I", p.ndim))
                fh.write(struct.pack(f"<{p.ndim}I", *p.shape))
                fh.write(p.tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise FormatError(f"{path}: truncated at offset {pos}")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    (n_layers,) = take("<I")
    result = []
    for _ in range(n_layers):
        (n_params,) = take("<I")
        plist = []
        for _ in range(n_params):
            (ndim,) = take("<I")
            shape = take(f"<{ndim}I")
            count = int(np.prod(shape))
            if pos + 8 * count > len(data):
                raise FormatError(
                    f"{path}: truncated payload at offset {pos}, need {8 * count} bytes"
                )
            plist.append(np.frombuffer(data, dtype="<f8", count=count, offset=pos)
                         .reshape(shape).astype(np.float64))
            pos += 8 * count
        result.append(plist)
    return result
