"""Minimal dense-network engine on numpy.

Float64 end to end, with exact reverse-mode gradients for both the
parameters and the network input. Enough machinery for small MLPs
trained by Adam, plus Polyak-averaged target copies and versioned npz
checkpoints that restore training bit for bit (RNG state included).

Gradients returned by `backward` are sums over the batch; scale the
upstream gradient if a mean is wanted.
"""

from __future__ import annotations

import json
import math

import numpy as np

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _softplus(x):
    # overflow-safe: log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def mish(x):
    return x * np.tanh(_softplus(x))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mish_grad(x):
    sp = np.tanh(_softplus(x))
    return sp + x * (1.0 - sp * sp) * _sigmoid(x)


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    return (x > 0.0).astype(x.dtype)


_ACTIVATIONS = {
    "mish": (mish, mish_grad),
    "relu": (relu, relu_grad),
}


def time_embedding(t, dim: int = 16) -> np.ndarray:
    """Sinusoidal embedding of (possibly fractional) step indices.

    Returns shape (len(t), dim); frequencies span 1 .. 1/10000
    geometrically over dim/2 bands.
    """
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


# ---------------------------------------------------------------------------
# dense network
# ---------------------------------------------------------------------------

class DenseNet:
    """Fully connected net: affine layers with a hidden activation,
    linear output. Parameters live in self.weights / self.biases and
    are updated in place by the optimizer.
    """

    def __init__(self, layer_sizes, activation: str = "mish", rng=None):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = tuple(int(s) for s in layer_sizes)
        self.activation = activation
        rng = np.random.default_rng(rng)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    # parameters as a flat list [W0, b0, W1, b1, ...]
    @property
    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x)
        return y

    __call__ = forward

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping per-layer pre-activations for backward."""
        act, _ = _ACTIVATIONS[self.activation]
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        a = np.atleast_2d(x)
        inputs, preacts = [a], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            preacts.append(z)
            a = z if i == last else act(z)
            inputs.append(a)
        y = a[0] if squeeze else a
        return y, (inputs, preacts, squeeze)

    def backward(self, cache, grad_out: np.ndarray):
        """Backprop a loss gradient wrt the output.

        Returns (param_grads, grad_input) with param_grads ordered like
        self.params and summed over the batch.
        """
        inputs, preacts, squeeze = cache
        _, dact = _ACTIVATIONS[self.activation]
        g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        grads = [None] * (2 * len(self.weights))
        dz = g
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                dz = dz * dact(preacts[i])
            grads[2 * i] = inputs[i].T @ dz
            grads[2 * i + 1] = dz.sum(axis=0)
            dz = dz @ self.weights[i].T
        grad_in = dz[0] if squeeze else dz
        return grads, grad_in

    def copy(self) -> "DenseNet":
        out = DenseNet.__new__(DenseNet)
        out.sizes = self.sizes
        out.activation = self.activation
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        return out

    def state_dict(self) -> dict:
        d = {"sizes": list(self.sizes), "activation": self.activation}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            d[f"W{i}"] = w
            d[f"b{i}"] = b
        return d

    @staticmethod
    def from_state(d: dict) -> "DenseNet":
        net = DenseNet.__new__(DenseNet)
        net.sizes = tuple(int(s) for s in d["sizes"])
        net.activation = str(d["activation"])
        n = len(net.sizes) - 1
        net.weights = [np.array(d[f"W{i}"], dtype=np.float64) for i in range(n)]
        net.biases = [np.array(d[f"b{i}"], dtype=np.float64) for i in range(n)]
        return net


def soft_update(target: DenseNet, source: DenseNet, rho: float) -> None:
    """Polyak blend: target <- rho * target + (1 - rho) * source.

    rho is the fraction of the target retained per call: rho = 1 leaves
    the target unchanged, rho = 0 copies the online network into it.
    Callers tracking an "update rate" u should pass rho = 1 - u.
    """
    for tp, sp in zip(target.params, source.params):
        tp *= rho
        tp += (1.0 - rho) * sp


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction, updating bound arrays in place."""

    def __init__(self, params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        d = {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
             "eps": self.eps, "t": self.t}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            d[f"m{i}"] = m
            d[f"v{i}"] = v
        return d

    def load_state(self, d: dict) -> None:
        self.lr = float(d["lr"])
        self.beta1, self.beta2 = float(d["beta1"]), float(d["beta2"])
        self.eps = float(d["eps"])
        self.t = int(d["t"])
        self.m = [np.array(d[f"m{i}"], dtype=np.float64)
                  for i in range(len(self.params))]
        self.v = [np.array(d[f"v{i}"], dtype=np.float64)
                  for i in range(len(self.params))]


# ---------------------------------------------------------------------------
# RNG state and checkpoints
# ---------------------------------------------------------------------------

def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def _flatten(prefix: str, obj, arrays: dict, meta: dict) -> None:
    if isinstance(obj, np.ndarray):
        arrays[prefix] = obj
        meta[prefix] = {"__array__": True}
    elif isinstance(obj, dict):
        meta[prefix] = {"__dict__": sorted(obj.keys(), key=str)}
        for k in obj:
            _flatten(f"{prefix}/{k}", obj[k], arrays, meta)
    else:
        meta[prefix] = {"__value__": obj}


def _rebuild(prefix: str, arrays: dict, meta: dict):
    node = meta[prefix]
    if "__array__" in node:
        return arrays[prefix]
    if "__dict__" in node:
        return {k: _rebuild(f"{prefix}/{k}", arrays, meta)
                for k in node["__dict__"]}
    return node["__value__"]


def save_checkpoint(path, payload: dict) -> None:
    """Write a nested dict of arrays / JSON-able values to one npz file.

    The file carries a format version; loads of other versions fail
    loudly instead of silently misreading state.
    """
    arrays, meta = {}, {}
    _flatten("root", payload, arrays, meta)
    blob = json.dumps({"version": CHECKPOINT_VERSION, "meta": meta})
    arrays["__meta__"] = np.frombuffer(blob.encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        blob = json.loads(bytes(z["__meta__"]).decode("utf-8"))
        if blob.get("version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint version {blob.get('version')} unsupported; "
                f"expected {CHECKPOINT_VERSION}")
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    return _rebuild("root", arrays, blob["meta"])
