"""Dense feed-forward networks with reverse-mode parameter gradients.

Parameters live in one flat float64 vector. The layout is, layer by layer,
the weight matrix of shape ``(width_out, width_in)`` in row-major order
followed by the bias vector. Hidden layers apply the activation, the output
layer is affine.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

ACTIVATIONS = ("sigmoid", "relu", "tanh")


def _sigmoid(z):
    # tanh form avoids overflow warnings from exp(-z) at large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _activate(name, z):
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_slope(name, z, a):
    """Derivative of the activation, given pre-activation z and output a."""
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(z.dtype)


def param_count(widths):
    return sum(n_in * n_out + n_out for n_in, n_out in zip(widths[:-1], widths[1:]))


@dataclass
class Network:
    """A dense net ``widths[0] -> ... -> widths[-1]``.

    Attributes:
        widths: layer widths, input first.
        activation: hidden-layer activation, one of ``ACTIVATIONS``.
        params: flat parameter vector of length ``param_count(widths)``.
    """

    widths: list
    activation: str
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ConfigError(f"invalid layer widths {self.widths}", "widths")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}", "activation")
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        m = param_count(self.widths)
        if self.params.shape != (m,):
            raise ShapeError(f"expected {m} parameters, got shape {self.params.shape}")

    @property
    def n_params(self):
        return self.params.size

    @property
    def in_dim(self):
        return self.widths[0]

    @property
    def out_dim(self):
        return self.widths[-1]

    def layers(self, params=None):
        """Split a flat vector into ``[(W, b), ...]`` views (no copies)."""
        return unflatten(self.widths, self.params if params is None else params)

    def with_params(self, params):
        return Network(list(self.widths), self.activation, np.array(params, dtype=np.float64))

    def copy(self):
        return self.with_params(self.params.copy())

    def __call__(self, x):
        return forward(self, x)


def unflatten(widths, params):
    layers = []
    offset = 0
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        w = params[offset:offset + n_in * n_out].reshape(n_out, n_in)
        offset += n_in * n_out
        b = params[offset:offset + n_out]
        offset += n_out
        layers.append((w, b))
    return layers


def flatten(layers):
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])


def init_params(widths, activation="sigmoid", rng=None):
    """Glorot-uniform weights, zero biases.

    Each weight of a layer is drawn from U(-a, a) with
    ``a = sqrt(6 / (fan_in + fan_out))``.
    """
    if not widths:
        raise ConfigError("widths must not be empty", "widths")
    if len(widths) < 2:
        raise ConfigError("need at least an input and an output width", "widths")
    rng = np.random.default_rng(rng)
    chunks = []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        a = np.sqrt(6.0 / (n_in + n_out))
        chunks.append(rng.uniform(-a, a, size=n_in * n_out))
        chunks.append(np.zeros(n_out))
    return Network(list(widths), activation, np.concatenate(chunks))


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"network expects inputs of dimension {net.in_dim}, got shape {x.shape}")
    return x, single


def forward_batch(net, x, params=None):
    """Evaluate on a batch ``x`` of shape ``(n, d)``.

    Returns the ``(n, out)`` outputs and a cache for :func:`backward_batch`.
    """
    layers = net.layers(params)
    cache = [x]
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = h @ w.T + b
        if i == last:
            h = z
        else:
            h = _activate(net.activation, z)
            cache.append((z, h))
    return h, cache


def backward_batch(net, cache, cotangent, params=None):
    """Gradient of ``sum_k cotangent[k] . y[k]`` with respect to the parameters.

    ``cotangent`` has the shape of the outputs returned by ``forward_batch``.
    """
    layers = net.layers(params)
    grads = []
    g = np.asarray(cotangent, dtype=np.float64)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        h_prev = cache[0] if i == 0 else cache[i][1]
        grads.append((g.T @ h_prev, g.sum(axis=0)))
        if i > 0:
            z, a = cache[i]
            g = (g @ w) * _activation_slope(net.activation, z, a)
    grads.reverse()
    return flatten(grads)


def forward(net, x):
    """Evaluate the network at one point (1-D input) or a batch (2-D input)."""
    x, single = _as_batch(net, x)
    y, _ = forward_batch(net, x)
    return y[0] if single else y


@dataclass
class GradientRecord:
    """Parameter gradient owned by a network with ``len(grad)`` parameters."""

    grad: np.ndarray

    def __len__(self):
        return self.grad.size


def grad_params(net, x, cotangent):
    """Reverse-mode gradient of ``cotangent . net(x)`` with respect to the parameters.

    Batched inputs are accepted too; the gradient is then summed over the batch.
    """
    x, single = _as_batch(net, x)
    cot = np.asarray(cotangent, dtype=np.float64)
    if single:
        cot = cot.reshape(1, -1)
    if cot.shape != (x.shape[0], net.out_dim):
        raise ShapeError(f"cotangent shape {np.shape(cotangent)} does not match output dimension {net.out_dim}")
    _, cache = forward_batch(net, x)
    return GradientRecord(backward_batch(net, cache, cot))


def to_dict(net):
    return {"widths": list(net.widths), "activation": net.activation, "params": [float(p) for p in net.params]}


def from_dict(data):
    try:
        return Network(list(data["widths"]), str(data["activation"]), np.array(data["params"], dtype=np.float64))
    except KeyError as exc:
        raise ConfigError(f"checkpoint is missing key {exc}") from exc


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(net, path):
    # json writes floats with repr(), the shortest string that round-trips
    atomic_write_text(path, json.dumps(to_dict(net)) + "\n")


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        OSError: the file cannot be read.
        ConfigError: the file is not a valid checkpoint.
    """
    with open(path) as fh:
        text = fh.read()
    try:
        return from_dict(json.loads(text))
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed checkpoint: {exc}", os.fspath(path)) from exc
