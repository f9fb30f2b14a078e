"""Single-hidden-layer autoencoder with an optional Bernoulli-KL sparsity penalty.

Encoder: dense + sigmoid (so each hidden unit's mean activation is a
probability). Decoder: dense, linear. ``beta_sparsity = 0`` gives the
ordinary autoencoder.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, StructuralError, TrainingError
from .nn import Adam, Network, NetworkSpec, load_checkpoint, save_checkpoint

KL_CLAMP = 1e-6
LOG_COLUMNS = ("epoch", "total", "reconstruction", "sparsity", "mean_activation")


@dataclass
class SparseAEConfig:
    hidden_dim: int = 32
    rho: float = 0.05
    beta_sparsity: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 256
    seed: int = 0

    def validate(self) -> "SparseAEConfig":
        if not 0.0 < self.rho < 1.0:
            raise ConfigError("rho must lie strictly inside (0, 1)")
        if self.beta_sparsity < 0:
            raise ConfigError("beta_sparsity must be non-negative")
        if self.hidden_dim < 1 or self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ConfigError("hidden_dim, batch_size >= 1, epochs >= 0 and learning_rate > 0 required")
        return self


def _clamp(rho_hat):
    return np.clip(np.asarray(rho_hat, dtype=np.float64), KL_CLAMP, 1.0 - KL_CLAMP)


def kl_sparsity_penalty(rho: float, rho_hat) -> float:
    """Sum over hidden units of KL(Bernoulli(rho) || Bernoulli(rho_hat_j))."""
    q = _clamp(rho_hat)
    return float(np.sum(rho * np.log(rho / q) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - q))))


def kl_sparsity_grad(rho: float, rho_hat) -> np.ndarray:
    """d penalty / d rho_hat_j (zero where the clamp is active)."""
    raw = np.asarray(rho_hat, dtype=np.float64)
    q = _clamp(raw)
    g = -rho / q + (1.0 - rho) / (1.0 - q)
    return np.where(q == raw, g, 0.0)


class Autoencoder:
    """Wraps a 3-layer :class:`Network`: Dense -> Sigmoid -> Dense."""

    HIDDEN = 1  # layer index of the sigmoid output

    def __init__(self, input_dim: int, hidden_dim: int, seed: int = 0, net: Network | None = None):
        if net is None:
            spec = NetworkSpec(input_dim=input_dim, hidden=(hidden_dim,), output_dim=input_dim,
                               activation="sigmoid", batch_norm=False, head="linear")
            net = Network(spec, seed=seed)
        self.net = net

    @property
    def input_dim(self) -> int:
        return self.net.spec.input_dim

    @property
    def hidden_dim(self) -> int:
        return self.net.spec.hidden[0]

    def encode(self, states) -> np.ndarray:
        x = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise StructuralError(f"expected width {self.input_dim}, got {x.shape[1]}")
        h = x
        for layer in self.net.layers[: self.HIDDEN + 1]:
            h = layer.forward(h, False)
        for layer in self.net.layers:
            layer.clear()
        return h

    def reconstruct(self, states) -> np.ndarray:
        return self.net(np.atleast_2d(states), train=False)

    def losses(self, x, cfg: SparseAEConfig):
        """(total, reconstruction loss, sparsity penalty, rho_hat, decoder output) on one batch.
        Leaves the forward caches in place for :meth:`Network.backward`."""
        acts = self.net.forward(x, train=True)
        h, xr = acts[self.HIDDEN], acts[-1]
        rec = float(np.mean((xr - x) ** 2))
        rho_hat = h.mean(axis=0)
        pen = kl_sparsity_penalty(cfg.rho, rho_hat)
        return rec + cfg.beta_sparsity * pen, rec, pen, rho_hat, xr

    def gradient_step(self, x, cfg: SparseAEConfig, opt: Adam):
        total, rec, pen, rho_hat, xr = self.losses(x, cfg)
        if not np.isfinite(total):
            raise TrainingError("non-finite autoencoder loss", snapshot={"reconstruction": rec, "sparsity": pen})
        d_out = 2.0 * (xr - x) / x.size
        d_hidden = np.broadcast_to(cfg.beta_sparsity * kl_sparsity_grad(cfg.rho, rho_hat) / x.shape[0],
                                   (x.shape[0], self.hidden_dim))
        self.net.backward(d_out, inject={self.HIDDEN: d_hidden})
        opt.step(self.net.parameters(), self.net.gradients())
        return total, rec, pen

    def save(self, path, cfg: SparseAEConfig | None = None, opt: Adam | None = None):
        return save_checkpoint(path, self.net, opt, extra={"kind": "sparse-autoencoder",
                                                           "config": asdict(cfg) if cfg else None})

    @classmethod
    def load(cls, path) -> "Autoencoder":
        net, _, _, _ = load_checkpoint(path)
        return cls(net.spec.input_dim, net.spec.hidden[0], net=net)


def train_autoencoder(train_states, cfg: SparseAEConfig) -> tuple[Autoencoder, list[tuple]]:
    """Adam on reconstruction MSE + beta * KL penalty, with rho_hat taken per batch.

    The log has one row per epoch (``LOG_COLUMNS``); the loss columns are
    means over that epoch's batches, and ``mean_activation`` is the mean hidden
    activation over the whole training set at the end of the epoch.
    """
    cfg.validate()
    X = np.asarray(train_states, dtype=np.float64)
    if X.ndim != 2:
        raise StructuralError("training states must be a 2-D array")
    ae = Autoencoder(X.shape[1], cfg.hidden_dim, seed=cfg.seed)
    opt = Adam(lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    log = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(X.shape[0])
        sums = np.zeros(3)
        n_batches = 0
        for a in range(0, X.shape[0], cfg.batch_size):
            batch = X[order[a:a + cfg.batch_size]]
            sums += ae.gradient_step(batch, cfg, opt)
            n_batches += 1
        total, rec, pen = sums / max(n_batches, 1)
        log.append((epoch, total, rec, pen, float(ae.encode(X).mean())))
    ae.opt = opt
    return ae, log


def encode(params: Autoencoder, states) -> np.ndarray:
    return params.encode(states)
