"""Small dense feed-forward engine with hand-written backprop and Adam.

Everything downstream (gate heads, window experts, quantile integrand nets)
trains through this module, so the activation menu stays fixed and the
gradients are checked against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError

ACTIVATIONS = ("identity", "tanh", "relu", "softmax", "softplus")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _apply(name, z):
    if name == "identity":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "softplus":
        return np.logaddexp(0.0, z)
    if name == "softmax":
        shifted = z - z.max(axis=-1, keepdims=True)
        ez = np.exp(shifted)
        return ez / ez.sum(axis=-1, keepdims=True)
    raise NumericError(f"unknown activation {name!r}")


def _backprop_activation(name, z, a, grad):
    if name == "identity":
        return grad
    if name == "tanh":
        return grad * (1.0 - a * a)
    if name == "relu":
        return grad * (z > 0.0)
    if name == "softplus":
        return grad * _sigmoid(z)
    if name == "softmax":
        inner = (grad * a).sum(axis=-1, keepdims=True)
        return a * (grad - inner)
    raise NumericError(f"unknown activation {name!r}")


class DenseNet:
    """Fully connected layers with a per-layer activation from the fixed menu.

    Weights start uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)) drawn from the
    supplied generator, so runs are reproducible under a fixed seed.
    """

    def __init__(self, dims, activations, rng=None):
        dims = [int(d) for d in dims]
        if len(dims) < 2:
            raise NumericError("DenseNet needs at least input and output dims")
        if len(activations) != len(dims) - 1:
            raise NumericError("need one activation per layer")
        for act in activations:
            if act not in ACTIVATIONS:
                raise NumericError(f"unknown activation {act!r}")
        if rng is None:
            rng = np.random.default_rng()
        self.dims = tuple(dims)
        self.activations = tuple(activations)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x):
        """Run the net; returns (output, cache) with cache feeding backward()."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite input to forward pass")
        pre = []
        post = [x]
        a = x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = a @ w + b
            a = _apply(act, z)
            pre.append(z)
            post.append(a)
        out = a[0] if squeeze else a
        return out, (pre, post, squeeze)

    def backward(self, cache, grad_out):
        """Gradients of a scalar loss given d(loss)/d(output).

        Returns ([(dW, db), ...] per layer, gradient w.r.t. the input batch).
        """
        pre, post, squeeze = cache
        grad = np.asarray(grad_out, dtype=float)
        if squeeze:
            grad = grad[None, :]
        grads = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            dz = _backprop_activation(self.activations[i], pre[i], post[i + 1], grad)
            dw = post[i].T @ dz
            db = dz.sum(axis=0)
            grads[i] = (dw, db)
            grad = dz @ self.weights[i].T
        if squeeze:
            grad = grad[0]
        return grads, grad

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    def load_parameter_arrays(self, arrays) -> None:
        for i in range(self.n_layers):
            w = np.asarray(arrays[f"w{i}"], dtype=float)
            b = np.asarray(arrays[f"b{i}"], dtype=float)
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise NumericError("checkpoint shapes do not match the architecture")
            self.weights[i] = w.copy()
            self.biases[i] = b.copy()

    def clone(self) -> "DenseNet":
        twin = DenseNet.__new__(DenseNet)
        twin.dims = self.dims
        twin.activations = self.activations
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        return twin


@dataclass
class AdamState:
    """First/second moment accumulators with bias correction."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_state(net: DenseNet, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for w, b in zip(net.weights, net.biases):
        state.m.append((np.zeros_like(w), np.zeros_like(b)))
        state.v.append((np.zeros_like(w), np.zeros_like(b)))
    return state


def adam_step(net: DenseNet, grads, state: AdamState) -> None:
    """One Adam update in place; rejects non-finite gradients."""
    for dw, db in grads:
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise NumericError("non-finite gradient, step rejected")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for i, (dw, db) in enumerate(grads):
        mw, mb = state.m[i]
        vw, vb = state.v[i]
        mw *= b1
        mw += (1.0 - b1) * dw
        mb *= b1
        mb += (1.0 - b1) * db
        vw *= b2
        vw += (1.0 - b2) * dw * dw
        vb *= b2
        vb += (1.0 - b2) * db * db
        net.weights[i] -= state.lr * (mw / bc1) / (np.sqrt(vw / bc2) + state.eps)
        net.biases[i] -= state.lr * (mb / bc1) / (np.sqrt(vb / bc2) + state.eps)


def positive_transform(raw):
    """Map raw net output to a strictly positive value, floored at 1e-3."""
    return np.logaddexp(0.0, np.asarray(raw, dtype=float) + 1e-5) + 1e-3


def positive_transform_grad(raw):
    return _sigmoid(np.asarray(raw, dtype=float) + 1e-5)


@dataclass(frozen=True)
class ZScore:
    """Per-series standardization fitted on the training span only."""

    mean: float
    std: float

    @classmethod
    def fit(cls, values) -> "ZScore":
        x = np.asarray(values, dtype=float)
        if x.size == 0:
            raise NumericError("cannot fit a scaler on an empty span")
        std = float(x.std())
        return cls(mean=float(x.mean()), std=max(std, 1e-8))

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def invert(self, y):
        return np.asarray(y, dtype=float) * self.std + self.mean
