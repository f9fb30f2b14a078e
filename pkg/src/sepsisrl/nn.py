"""Small dense network engine with explicit reverse-mode gradients.

Everything is float64 so finite-difference checks are meaningful. Layers keep
the activations of their last forward pass and ``backward`` consumes them;
calling ``backward`` without a preceding ``forward`` is a usage error.

Layer order for a hidden block is Dense -> BatchNorm -> activation.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from .errors import OptimizerError, StructuralError, UsageError
from .storage import load_archive, save_archive

CHECKPOINT_VERSION = 1
LEAKY_SLOPE = 0.5
BN_EPS = 1e-5
BN_MOMENTUM = 0.99


def leaky_relu(z):
    """max(z, 0.5 z)."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, LEAKY_SLOPE * z)


def leaky_relu_grad(z):
    # subgradient at 0 is taken as 1
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0.0, 1.0, LEAKY_SLOPE)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def glorot_uniform(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


class Layer:
    """Base layer. Subclasses fill ``params`` and ``grads`` with same-keyed arrays."""

    def __init__(self):
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.grads: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise UsageError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def clear(self):
        self._cache = None


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        w = glorot_uniform(rng, n_out, n_in) if rng is not None else np.zeros((n_out, n_in))
        self.params["W"] = w
        self.params["b"] = np.zeros(n_out)
        self.grads["W"] = np.zeros_like(w)
        self.grads["b"] = np.zeros(n_out)

    def forward(self, x, train):
        self._cache = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dout):
        x = self._need_cache()
        self.grads["W"][...] = dout.T @ x
        self.grads["b"][...] = dout.sum(axis=0)
        return dout @ self.params["W"]


class BatchNorm(Layer):
    """Per-unit batch normalization with a learned gain and shift.

    Train mode normalizes with batch statistics and folds them into the running
    estimates (``running = momentum * running + (1 - momentum) * batch``).
    Eval mode uses the running estimates only and mutates nothing.
    """

    def __init__(self, n: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        super().__init__()
        self.n = n
        self.momentum = momentum
        self.eps = eps
        self.params["gain"] = np.ones(n)
        self.params["shift"] = np.zeros(n)
        self.grads["gain"] = np.zeros(n)
        self.grads["shift"] = np.zeros(n)
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)

    def forward(self, x, train):
        if train:
            if x.shape[0] < 2:
                raise StructuralError("batch norm in train mode needs a batch of at least 2 rows")
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = self.momentum * self.running_mean + (1.0 - self.momentum) * mu
            self.running_var = self.momentum * self.running_var + (1.0 - self.momentum) * var
        else:
            mu, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv_std
        self._cache = (xhat, inv_std, train)
        return self.params["gain"] * xhat + self.params["shift"]

    def backward(self, dout):
        xhat, inv_std, train = self._need_cache()
        self.grads["gain"][...] = (dout * xhat).sum(axis=0)
        self.grads["shift"][...] = dout.sum(axis=0)
        dxhat = dout * self.params["gain"]
        if not train:
            return dxhat * inv_std
        m = dout.shape[0]
        return (inv_std / m) * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))

    def state(self) -> dict:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class LeakyReLU(Layer):
    def forward(self, x, train):
        self._cache = x
        return leaky_relu(x)

    def backward(self, dout):
        return dout * leaky_relu_grad(self._need_cache())


class Sigmoid(Layer):
    def forward(self, x, train):
        y = sigmoid(x)
        self._cache = y
        return y

    def backward(self, dout):
        y = self._need_cache()
        return dout * y * (1.0 - y)


class DuelingHead(Layer):
    """Splits the incoming features into two equal halves: the first feeds a
    scalar value head, the second an advantage head. Output is
    ``V + A - mean(A)`` per row."""

    def __init__(self, n_in: int, n_actions: int, rng: np.random.Generator | None = None):
        super().__init__()
        if n_in % 2:
            raise StructuralError(f"dueling split needs an even width, got {n_in}")
        self.half = n_in // 2
        self.n_actions = n_actions
        self.value = Dense(self.half, 1, rng)
        self.advantage = Dense(self.half, n_actions, rng)
        for prefix, sub in (("value", self.value), ("adv", self.advantage)):
            for k in sub.params:
                self.params[f"{prefix}_{k}"] = sub.params[k]
                self.grads[f"{prefix}_{k}"] = sub.grads[k]

    def streams(self, x, train=False):
        v = self.value.forward(x[:, : self.half], train)
        a = self.advantage.forward(x[:, self.half:], train)
        return v, a

    def forward(self, x, train):
        v, a = self.streams(x, train)
        self._cache = True
        return v + a - a.mean(axis=1, keepdims=True)

    def backward(self, dout):
        self._need_cache()
        dv = dout.sum(axis=1, keepdims=True)
        da = dout - dout.mean(axis=1, keepdims=True)
        return np.hstack([self.value.backward(dv), self.advantage.backward(da)])

    def clear(self):
        super().clear()
        self.value.clear()
        self.advantage.clear()


@dataclass
class NetworkSpec:
    """Architecture description, validated before any allocation."""

    input_dim: int
    hidden: tuple[int, ...] = (128, 128)
    output_dim: int = 25
    activation: str = "leaky_relu"
    batch_norm: bool = True
    head: str = "dueling"
    # batch norm sits before the activation inside each hidden block
    bn_position: str = "pre_activation"

    def validate(self) -> "NetworkSpec":
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise StructuralError(f"layer sizes must be positive: {self}")
        if self.activation not in ("leaky_relu", "sigmoid", "linear"):
            raise StructuralError(f"unknown activation {self.activation!r}")
        if self.head not in ("dueling", "linear"):
            raise StructuralError(f"unknown head {self.head!r}")
        if self.bn_position != "pre_activation":
            raise StructuralError("only pre-activation batch norm is supported")
        if self.head == "dueling":
            if not self.hidden:
                raise StructuralError("dueling head needs at least one hidden layer")
            if self.hidden[-1] % 2:
                raise StructuralError("dueling head needs an even last hidden width")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["hidden"] = tuple(d.get("hidden", ()))
        return cls(**d).validate()


_ACTIVATIONS = {"leaky_relu": LeakyReLU, "sigmoid": Sigmoid}


class Network:
    def __init__(self, spec: NetworkSpec, seed: int | None = 0):
        self.spec = spec.validate()
        rng = np.random.default_rng(seed)
        layers: list[Layer] = []
        width = spec.input_dim
        for h in spec.hidden:
            layers.append(Dense(width, h, rng))
            if spec.batch_norm:
                layers.append(BatchNorm(h))
            if spec.activation != "linear":
                layers.append(_ACTIVATIONS[spec.activation]())
            width = h
        if spec.head == "dueling":
            layers.append(DuelingHead(width, spec.output_dim, rng))
        else:
            layers.append(Dense(width, spec.output_dim, rng))
        self.layers = layers

    # -- parameters -------------------------------------------------------
    def named_params(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                yield f"{i}.{k}", v

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(self.named_params())

    def gradients(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for i, layer in enumerate(self.layers):
            for k, v in layer.grads.items():
                out[f"{i}.{k}"] = v
        return out

    def batchnorms(self) -> list[tuple[int, BatchNorm]]:
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, BatchNorm)]

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters plus batch-norm running statistics."""
        out = OrderedDict((f"param/{k}", v) for k, v in self.named_params())
        for i, bn in self.batchnorms():
            out[f"bn/{i}.running_mean"] = bn.running_mean
            out[f"bn/{i}.running_var"] = bn.running_var
        return out

    def load_state_arrays(self, arrays) -> None:
        params = self.parameters()
        for k, v in params.items():
            src = np.asarray(arrays[f"param/{k}"], dtype=np.float64)
            if src.shape != v.shape:
                raise StructuralError(f"parameter {k}: expected {v.shape}, got {src.shape}")
            v[...] = src
        for i, bn in self.batchnorms():
            bn.running_mean = np.array(arrays[f"bn/{i}.running_mean"], dtype=np.float64)
            bn.running_var = np.array(arrays[f"bn/{i}.running_var"], dtype=np.float64)

    def copy_from(self, other: "Network") -> None:
        self.load_state_arrays(other.state_arrays())

    def clone(self) -> "Network":
        twin = Network(self.spec, seed=None)
        twin.copy_from(self)
        return twin

    # -- passes -----------------------------------------------------------
    def forward(self, x, train: bool = False) -> list[np.ndarray]:
        """Return the output of every layer; the last entry is the network output."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise StructuralError(f"expected batch of width {self.spec.input_dim}, got shape {x.shape}")
        acts = []
        for layer in self.layers:
            x = layer.forward(x, train)
            acts.append(x)
        return acts

    def __call__(self, x, train: bool = False) -> np.ndarray:
        return self.forward(x, train)[-1]

    def backward(self, upstream, inject: dict[int, np.ndarray] | None = None) -> np.ndarray:
        """Backpropagate ``upstream`` (dLoss/dOutput) and fill every layer's
        ``grads``. ``inject`` adds extra gradient to the output of the given layer
        index, for penalties on intermediate activations. Returns dLoss/dInput."""
        g = np.asarray(upstream, dtype=np.float64)
        inject = inject or {}
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            if i != last and i in inject:
                g = g + inject[i]
            g = self.layers[i].backward(g)
        return g


class Adam:
    """Bias-corrected Adam over a named parameter dict (updated in place)."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.epsilon = lr, beta1, beta2, epsilon
        self.step_count = 0
        self.m: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.v: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def step(self, params, grads) -> None:
        for name, g in grads.items():
            if params[name].shape != g.shape:
                raise StructuralError(f"gradient shape mismatch for {name}")
            if not np.all(np.isfinite(g)):
                raise OptimizerError(f"non-finite gradient in parameter block {name!r}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)

    def config(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "epsilon": self.epsilon, "step_count": self.step_count}

    def state_arrays(self) -> dict:
        out = {}
        for k in self.m:
            out[f"adam_m/{k}"] = self.m[k]
            out[f"adam_v/{k}"] = self.v[k]
        return out

    @classmethod
    def from_state(cls, cfg: dict, arrays: dict) -> "Adam":
        opt = cls(cfg["lr"], cfg["beta1"], cfg["beta2"], cfg["epsilon"])
        opt.step_count = int(cfg["step_count"])
        for key, arr in sorted(arrays.items()):
            if key.startswith("adam_m/"):
                name = key[len("adam_m/"):]
                opt.m[name] = np.array(arr, dtype=np.float64)
                opt.v[name] = np.array(arrays[f"adam_v/{name}"], dtype=np.float64)
        return opt


def save_checkpoint(path, net: Network, optimizer: Adam | None = None, extra: dict | None = None,
                    extra_arrays: dict | None = None):
    arrays = dict(net.state_arrays())
    meta = {"format": "sepsisrl-checkpoint", "version": CHECKPOINT_VERSION,
            "spec": net.spec.to_dict(), "bn_eps": BN_EPS, "bn_momentum": BN_MOMENTUM,
            "leaky_slope": LEAKY_SLOPE, "extra": extra or {}}
    if optimizer is not None:
        meta["adam"] = optimizer.config()
        arrays.update(optimizer.state_arrays())
    for k, v in (extra_arrays or {}).items():
        arrays[f"extra/{k}"] = v
    return save_archive(path, arrays, meta)


def load_checkpoint(path) -> tuple[Network, Adam | None, dict, dict]:
    """Returns (network, optimizer or None, extra metadata, extra arrays)."""
    arrays, meta = load_archive(path)
    if meta.get("format") != "sepsisrl-checkpoint":
        raise StructuralError(f"{path} is not a network checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise StructuralError(f"unsupported checkpoint version {meta.get('version')}")
    net = Network(NetworkSpec.from_dict(meta["spec"]), seed=None)
    net.load_state_arrays(arrays)
    opt = Adam.from_state(meta["adam"], arrays) if "adam" in meta else None
    extra_arrays = {k[len("extra/"):]: v for k, v in arrays.items() if k.startswith("extra/")}
    return net, opt, meta.get("extra", {}), extra_arrays
