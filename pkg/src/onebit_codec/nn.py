"""Minimal dense neural-network engine.

Tensors are plain 2-D ``float64`` numpy arrays laid out as ``(batch, features)``.
A :class:`Network` is an ordered list of :class:`Dense` layers; each layer owns
its affine parameters, an optional batch-norm stage (applied after the affine
map, before the activation) and one activation out of ``linear``, ``relu``,
``softmax`` and ``sign``.

The ``sign`` activation has no true gradient.  Its backward pass is selected
per layer by ``ste``: ``None`` (zero gradient), ``"identity"`` or ``"clipped"``
(identity inside ``[-1, 1]``, zero outside).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

LOG_FLOOR = 1e-12
ACTIVATIONS = ("linear", "relu", "softmax", "sign")
STE_MODES = (None, "identity", "clipped")

_MAGIC = b"OBCKPT01"


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class StaleCacheError(RuntimeError):
    pass


def as_tensor(x, cols=None, name="tensor"):
    """Return ``x`` as a finite 2-D float64 array, optionally checking the column count."""
    t = np.asarray(x, dtype=np.float64)
    if t.ndim == 1:
        t = t[None, :]
    if t.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D data, got shape {t.shape}")
    if cols is not None and t.shape[1] != cols:
        raise ShapeError(f"{name}: expected {cols} columns, got {t.shape[1]}")
    if not np.all(np.isfinite(t)):
        raise NonFiniteError(f"{name}: non-finite values")
    return t


@dataclass(frozen=True)
class InitSpec:
    sigma_theta: float = 1.0
    sigma_b: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_theta < 0 or self.sigma_b < 0:
            raise ValueError("standard deviations must be non-negative")


def init_gaussian(shape, sigma, rng):
    """I.i.d. ``Normal(0, sigma**2)`` array; ``rng`` is a Generator or an integer seed."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(rng)
    return sigma * rng.standard_normal(shape)


# ----------------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------------


def relu(z):
    return np.maximum(z, 0.0)


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def sign(z):
    """Elementwise sign with ``sign(0) = +1``."""
    return np.where(z >= 0.0, 1.0, -1.0)


def _activate(kind, z):
    if kind == "linear":
        return z
    if kind == "relu":
        return relu(z)
    if kind == "softmax":
        return softmax(z)
    return sign(z)


def _activation_backward(kind, dout, z, a, ste):
    if kind == "linear":
        return dout
    if kind == "relu":
        return dout * (z > 0.0)
    if kind == "softmax":
        return a * (dout - np.sum(dout * a, axis=1, keepdims=True))
    if ste is None:
        return np.zeros_like(dout)
    if ste == "identity":
        return dout
    return dout * (np.abs(z) <= 1.0)


# ----------------------------------------------------------------------------
# layers
# ----------------------------------------------------------------------------


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    @classmethod
    def fresh(cls, units, momentum=0.1, epsilon=1e-5):
        return cls(
            gamma=np.ones(units),
            beta=np.zeros(units),
            running_mean=np.zeros(units),
            running_var=np.ones(units),
            momentum=momentum,
            epsilon=epsilon,
        )


class Dense:
    """Affine map ``z = x W^T + b`` followed by optional batch norm and an activation.

    ``W`` has shape ``(n_out, n_in)`` and ``b`` has shape ``(n_out, 1)``.
    """

    def __init__(self, n_in, n_out, activation="linear", batch_norm=False,
                 ste=None, rng=None, weight_std=None, bias_std=0.0):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if ste not in STE_MODES:
            raise ValueError(f"unknown STE mode {ste!r}")
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.activation = activation
        self.ste = ste
        rng = np.random.default_rng(rng)
        if weight_std is None:
            weight_std = 1.0 / np.sqrt(n_in)
        self.W = init_gaussian((n_out, n_in), weight_std, rng)
        self.b = init_gaussian((n_out, 1), bias_std, rng)
        self.bn = BatchNormState.fresh(n_out) if batch_norm else None

    def param_names(self):
        names = ["W", "b"]
        if self.bn is not None:
            names += ["gamma", "beta"]
        return names

    def get_param(self, name):
        if name in ("gamma", "beta"):
            return getattr(self.bn, name)
        return getattr(self, name)

    def forward(self, x, train=True):
        z = x @ self.W.T + self.b[:, 0]
        cache = {"x": x}
        if self.bn is not None:
            z, cache["bn"] = self._bn_forward(z, train)
        a = _activate(self.activation, z)
        cache["z"] = z
        cache["a"] = a
        return a, cache

    def _bn_forward(self, z, train):
        bn = self.bn
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * mu
            bn.running_var = (1.0 - bn.momentum) * bn.running_var + bn.momentum * var
        else:
            mu, var = bn.running_mean, bn.running_var
        inv_std = 1.0 / np.sqrt(var + bn.epsilon)
        xhat = (z - mu) * inv_std
        return bn.gamma * xhat + bn.beta, (xhat, inv_std, train)

    def backward(self, dout, cache):
        dz = _activation_backward(self.activation, dout, cache["z"], cache["a"], self.ste)
        grads = {}
        if self.bn is not None:
            xhat, inv_std, train = cache["bn"]
            grads["gamma"] = np.sum(dz * xhat, axis=0)
            grads["beta"] = np.sum(dz, axis=0)
            dxhat = dz * self.bn.gamma
            if train:
                m = dz.shape[0]
                dz = (inv_std / m) * (
                    m * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0)
                )
            else:
                dz = dxhat * inv_std
        x = cache["x"]
        grads["W"] = dz.T @ x
        grads["b"] = dz.sum(axis=0)[:, None]
        dx = dz @ self.W
        return dx, grads


# ----------------------------------------------------------------------------
# network
# ----------------------------------------------------------------------------


@dataclass
class ForwardCache:
    layer_caches: list
    version: int
    mode: str


class Network:
    def __init__(self, layers):
        self.layers = list(layers)
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.n_out != nxt.n_in:
                raise ShapeError(f"layer dims do not chain: {prev.n_out} -> {nxt.n_in}")
        self.version = 0

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    def parameters(self):
        """List of ``(layer_index, name, array)`` in layer order."""
        return [(i, name, layer.get_param(name))
                for i, layer in enumerate(self.layers) for name in layer.param_names()]

    def forward(self, x, mode="train"):
        if mode not in ("train", "eval"):
            raise ValueError(f"unknown mode {mode!r}")
        a = as_tensor(x, cols=self.n_in, name="network input")
        caches = []
        for i, layer in enumerate(self.layers):
            a, cache = layer.forward(a, train=(mode == "train"))
            if not np.all(np.isfinite(a)):
                raise NonFiniteError(f"non-finite activation after layer {i}")
            caches.append(cache)
        return a, ForwardCache(caches, self.version, mode)

    def predict(self, x):
        return self.forward(x, mode="eval")[0]

    def backward(self, cache, dout):
        """Back-propagate ``dout`` (gradient w.r.t. the network output).

        Returns ``(grads, dx)`` where ``grads[i]`` is the dict of parameter
        gradients of layer ``i`` and ``dx`` is the gradient w.r.t. the input.
        """
        if cache.version != self.version or len(cache.layer_caches) != len(self.layers):
            raise StaleCacheError("cache does not belong to the current parameters")
        grads = [None] * len(self.layers)
        d = dout
        for i in range(len(self.layers) - 1, -1, -1):
            d, grads[i] = self.layers[i].backward(d, cache.layer_caches[i])
        return grads, d

    def bump(self):
        self.version += 1

    def checksum(self):
        h = 0.0
        for _, _, p in self.parameters():
            h += float(np.sum(p * np.arange(1, p.size + 1).reshape(p.shape)))
        return h


# ----------------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------------


def loss_mse(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred, target):
    return 2.0 * (pred - target) / pred.size


def loss_cross_entropy(pred, onehot):
    """Mean over rows of ``-log p[true class]`` with the probability floored at 1e-12."""
    pred = np.asarray(pred, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    if pred.shape != onehot.shape:
        raise ShapeError(f"shape mismatch {pred.shape} vs {onehot.shape}")
    p_true = np.sum(pred * onehot, axis=1)
    return float(np.mean(-np.log(np.maximum(p_true, LOG_FLOOR))))


def cross_entropy_grad(pred, onehot):
    return -onehot / np.maximum(pred, LOG_FLOOR) / pred.shape[0]


def onehot(labels, classes):
    out = np.zeros((len(labels), classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


# ----------------------------------------------------------------------------
# optimizers
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class Optimizer:
    """Stateful SGD/Adam over a list of parameter arrays (updated in place)."""

    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads):
        cfg = self.config
        self.t += 1
        for key, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                raise ShapeError(f"param/grad shape mismatch {p.shape} vs {g.shape}")
            if cfg.kind == "sgd":
                p -= cfg.learning_rate * g
                continue
            m = self.m.get(key, np.zeros_like(p))
            v = self.v.get(key, np.zeros_like(p))
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
            self.m[key], self.v[key] = m, v
            mhat = m / (1.0 - cfg.beta1 ** self.t)
            vhat = v / (1.0 - cfg.beta2 ** self.t)
            p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.epsilon)

    def step_network(self, network, grads, trainable=None):
        """Apply one update to ``network``; ``trainable`` restricts the layer indices."""
        params, gs = [], []
        for i, name, p in network.parameters():
            if trainable is not None and i not in trainable:
                continue
            params.append(p)
            gs.append(grads[i][name])
        self.step(params, gs)
        network.bump()


def optimizer_step(params, grads, config, state=None):
    """Functional wrapper: one update of ``params`` (copied) with ``grads``.

    Returns ``(new_params, state)``; pass ``state`` back in for Adam.
    """
    state = state if state is not None else Optimizer(config)
    new = [np.array(p, dtype=np.float64, copy=True) for p in params]
    state.step(new, [np.asarray(g, dtype=np.float64) for g in grads])
    return new, state


# ----------------------------------------------------------------------------
# gradient check
# ----------------------------------------------------------------------------


def gradient_check(network, x, loss_fn, loss_grad, eps=1e-6, mode="train"):
    """Max relative error between backprop and central finite differences.

    Batch-norm running statistics are restored after each probe so the check
    does not drift them.
    """
    out, cache = network.forward(x, mode=mode)
    grads, _ = network.backward(cache, loss_grad(out))
    worst = 0.0
    for i, name, p in network.parameters():
        g = grads[i][name]
        flat = p.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            snapshot = _bn_snapshot(network)
            flat[k] = old + eps
            lp = loss_fn(network.forward(x, mode=mode)[0])
            flat[k] = old - eps
            lm = loss_fn(network.forward(x, mode=mode)[0])
            flat[k] = old
            _bn_restore(network, snapshot)
            num = (lp - lm) / (2 * eps)
            ana = g.reshape(-1)[k]
            denom = max(abs(num) + abs(ana), 1e-8)
            worst = max(worst, abs(num - ana) / denom)
    return worst


def _bn_snapshot(network):
    return [(l.bn.running_mean.copy(), l.bn.running_var.copy()) if l.bn else None
            for l in network.layers]


def _bn_restore(network, snap):
    for layer, s in zip(network.layers, snap):
        if s is not None:
            layer.bn.running_mean, layer.bn.running_var = s


# ----------------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------------


def network_header(network):
    layers = []
    for layer in network.layers:
        entry = {"n_in": layer.n_in, "n_out": layer.n_out,
                 "activation": layer.activation, "ste": layer.ste,
                 "batch_norm": layer.bn is not None}
        if layer.bn is not None:
            entry.update(running_mean=layer.bn.running_mean.tolist(),
                         running_var=layer.bn.running_var.tolist(),
                         momentum=layer.bn.momentum, epsilon=layer.bn.epsilon)
        layers.append(entry)
    return layers


def dump_networks(networks, meta=None):
    """Serialize named networks to bytes.

    Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON
    header, then every parameter as little-endian float64 in layer order
    (``W``, ``b``, ``gamma``, ``beta``) for each network in sorted name order.
    """
    header = {"meta": meta or {}, "networks": {}}
    payload = io.BytesIO()
    for name, net in sorted(networks.items()):
        header["networks"][name] = network_header(net)
        for _, _, p in net.parameters():
            payload.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    head = json.dumps(header, sort_keys=True).encode()
    return _MAGIC + struct.pack("<Q", len(head)) + head + payload.getvalue()


def load_networks(blob):
    if blob[:8] != _MAGIC:
        raise ValueError("not a checkpoint")
    (n,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + n].decode())
    data = np.frombuffer(blob[16 + n:], dtype="<f8")
    pos = 0
    nets = {}
    for name, spec in sorted(header["networks"].items()):
        layers = []
        for e in spec:
            layer = Dense(e["n_in"], e["n_out"], e["activation"], e["batch_norm"], e["ste"], rng=0)
            if layer.bn is not None:
                layer.bn.running_mean = np.array(e["running_mean"])
                layer.bn.running_var = np.array(e["running_var"])
                layer.bn.momentum = e["momentum"]
                layer.bn.epsilon = e["epsilon"]
            for pname in layer.param_names():
                p = layer.get_param(pname)
                p[...] = data[pos:pos + p.size].reshape(p.shape)
                pos += p.size
            layers.append(layer)
        nets[name] = Network(layers)
    if pos != data.size:
        raise ValueError("checkpoint payload size mismatch")
    return nets, header["meta"]
