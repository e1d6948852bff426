"""Dense ReLU network with hand-written backpropagation and an Adam optimizer.

All parameters of a network live in one flat float64 vector; per-layer weight
and bias arrays are views into it. That keeps the optimizer update and the
target-network copy to a handful of vector operations.
"""
from __future__ import annotations

import json
from typing import Optional, Sequence

import numpy as np

FORMAT_NAME = "momentum_tsc.qnetwork"
FORMAT_VERSION = 1
DEFAULT_LAYERS = (11, 64, 64, 2)


class ShapeError(ValueError):
    pass


def _views(flat: np.ndarray, layer_sizes):
    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        w = flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = flat[offset:offset + fan_out]
        offset += fan_out
        weights.append(w)
        biases.append(b)
    return weights, biases


def n_parameters(layer_sizes) -> int:
    return sum(i * o + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


class QNetwork:
    """``layer_sizes[0]`` inputs, ReLU hidden layers, linear output head."""

    def __init__(self, layer_sizes: Sequence[int] = DEFAULT_LAYERS, seed: Optional[int] = None,
                 params: Optional[np.ndarray] = None):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ShapeError(f"invalid layer sizes {layer_sizes}")
        self.params = np.zeros(n_parameters(self.layer_sizes))
        self.weights, self.biases = _views(self.params, self.layer_sizes)
        if params is not None:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != self.params.shape:
                raise ShapeError(f"expected {self.params.shape} parameters, got {params.shape}")
            self.params[:] = params
        elif seed is not None:
            self.init_glorot(np.random.default_rng(seed))

    def init_glorot(self, rng: np.random.Generator) -> None:
        for w, b in zip(self.weights, self.biases):
            limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
            w[:] = rng.uniform(-limit, limit, size=w.shape)
            b[:] = 0.0

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def zeros_like_params(self) -> np.ndarray:
        return np.zeros_like(self.params)

    def unflatten(self, flat: np.ndarray):
        """(weights, biases) views of a flat vector laid out like ``params``."""
        return _views(flat, self.layer_sizes)

    def clone(self) -> "QNetwork":
        return QNetwork(self.layer_sizes, params=self.params.copy())

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_inputs or x.ndim not in (1, 2):
            raise ShapeError(f"network expects inputs of length {self.n_inputs}, got shape {x.shape}")
        return x

    def _forward(self, x: np.ndarray):
        activations = [x]
        last = len(self.weights) - 1
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            activations.append(h)
        return activations

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)


def forward(net: QNetwork, obs) -> np.ndarray:
    """Action values for one observation (1-D) or a batch (2-D)."""
    x = net._check_input(obs)
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def loss_and_gradient(net: QNetwork, obs, actions, targets):
    """Mean over the batch of ``0.5 * (Q(s, a) - target)**2`` and its flat gradient.

    Only the taken action's output receives an error signal.
    """
    x = net._check_input(obs)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    actions = np.atleast_1d(np.asarray(actions, dtype=np.intp))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    batch = x.shape[0]
    if actions.shape != (batch,) or targets.shape != (batch,):
        raise ShapeError("actions and targets must have one entry per input row")

    acts = net._forward(x)
    rows = np.arange(batch)
    err = acts[-1][rows, actions] - targets
    loss = 0.5 * float(np.mean(err * err))

    grad = net.zeros_like_params()
    gw, gb = net.unflatten(grad)
    delta = np.zeros_like(acts[-1])
    delta[rows, actions] = err / batch
    for i in range(len(net.weights) - 1, -1, -1):
        gw[i][:] = acts[i].T @ delta
        gb[i][:] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0)
    return loss, grad


def backward(net: QNetwork, obs, action, td_target) -> np.ndarray:
    """Flat gradient of ``0.5 * (Q(obs, action) - td_target)**2`` (batch-mean for 2-D input)."""
    return loss_and_gradient(net, obs, action, td_target)[1]


class Adam:
    """Adaptive moment estimation over a network's flat parameter vector."""

    def __init__(self, n_params: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, net: QNetwork, grad: np.ndarray) -> QNetwork:
        if grad.shape != self.m.shape or net.params.shape != self.m.shape:
            raise ShapeError("gradient / optimizer / parameter shapes differ")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * grad
        self.v *= b2
        self.v += (1 - b2) * (grad * grad)
        denom = np.sqrt(self.v / (1 - b2 ** self.t)) + self.eps
        net.params -= (self.lr / (1 - b1 ** self.t)) * self.m / denom
        return net

    def state_dict(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "m": self.m.copy(), "v": self.v.copy(), "t": self.t}


def sgd_step(net: QNetwork, optimizer: Adam, grad: np.ndarray) -> QNetwork:
    return optimizer.step(net, grad)


def copy_parameters(src: QNetwork, dst: QNetwork) -> QNetwork:
    if src.layer_sizes != dst.layer_sizes:
        raise ShapeError(f"architecture mismatch: {src.layer_sizes} vs {dst.layer_sizes}")
    if src is not dst:
        dst.params[:] = src.params
    return dst


def save_network(net: QNetwork, path, metadata: Optional[dict] = None) -> None:
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "layer_sizes": list(net.layer_sizes),
              "activation": "relu", "dtype": "float64", "metadata": metadata or {}}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
                 params=net.params)


def load_network(path):
    """Returns ``(network, metadata)``."""
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != FORMAT_NAME:
            raise ValueError(f"{path}: not a {FORMAT_NAME} file")
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {header.get('version')}")
        net = QNetwork(header["layer_sizes"], params=data["params"])
    return net, header.get("metadata", {})
