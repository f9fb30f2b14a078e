"""Dueling double DQN trained offline from logged transitions with prioritized replay."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .cohort import N_ACTIONS, R_MAX, Cohort
from .errors import ConfigError, DataError, StructuralError, TrainingError
from .nn import Adam, Network, NetworkSpec, load_checkpoint, save_checkpoint
from .replay import PERBuffer


@dataclass
class DqnConfig:
    gamma: float = 0.99
    penalty_weight: float = 5.0
    r_max: float = R_MAX
    batch_size: int = 32
    target_update_period: int = 1000
    total_steps: int = 20000
    seed: int = 0
    learning_rate: float = 1e-4
    hidden: tuple = (128, 128)
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    per_beta1: float = 1.0
    per_eps: float = 1e-2

    def validate(self) -> "DqnConfig":
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.penalty_weight < 0:
            raise ConfigError("penalty_weight must be non-negative")
        if self.target_update_period < 1:
            raise ConfigError("target_update_period must be at least 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 (batch norm needs batch statistics)")
        if self.total_steps < 0 or self.learning_rate <= 0 or self.r_max <= 0:
            raise ConfigError("total_steps >= 0, learning_rate > 0 and r_max > 0 required")
        return self


@dataclass
class Transitions:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64)
        self.s_next = np.asarray(self.s_next, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.r = np.asarray(self.r, dtype=np.float64)
        self.done = np.asarray(self.done, dtype=bool)
        n = self.s.shape[0]
        if not (self.a.shape == self.r.shape == self.done.shape == (n,) and self.s_next.shape == self.s.shape):
            raise StructuralError("transition arrays have inconsistent shapes")

    def __len__(self):
        return self.s.shape[0]

    @property
    def state_dim(self) -> int:
        return self.s.shape[1]


def cohort_transitions(cohort: Cohort, states: list[np.ndarray] | None = None) -> Transitions:
    """Within-trajectory transitions; the last step of each patient is terminal.

    ``states`` optionally replaces the feature vectors (e.g. latent codes), one
    ``(T, d)`` array per trajectory.
    """
    S, A, R, S2, D = [], [], [], [], []
    for i, traj in enumerate(cohort.trajectories):
        x = traj.features if states is None else np.asarray(states[i])
        if np.any(traj.actions < 0):
            raise DataError(f"patient {traj.patient_id} has undiscretized actions")
        S.append(x)
        S2.append(np.vstack([x[1:], x[-1:]]))
        A.append(traj.actions)
        R.append(traj.rewards)
        d = np.zeros(len(traj), dtype=bool)
        d[-1] = True
        D.append(d)
    return Transitions(np.vstack(S), np.concatenate(A), np.concatenate(R), np.vstack(S2), np.concatenate(D))


def build_qnet(state_dim: int, cfg: DqnConfig, n_actions: int = N_ACTIONS) -> Network:
    spec = NetworkSpec(input_dim=state_dim, hidden=tuple(cfg.hidden), output_dim=n_actions,
                       activation="leaky_relu", batch_norm=True, head="dueling")
    return Network(spec, seed=cfg.seed)


def q_values(net: Network, states) -> np.ndarray:
    """Eval-mode Q(s, .) for a batch of states."""
    return net(np.atleast_2d(states), train=False)


def extract_policy(net: Network, states) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest action index on ties
    return np.argmax(q_values(net, states), axis=1)


def double_targets(main: Network, target: Network, r, s_next, done, cfg: DqnConfig) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    done = np.asarray(done, dtype=bool)
    out = r.copy()
    live = ~done
    if live.any():
        s2 = np.atleast_2d(s_next)[live]
        a_star = np.argmax(main(s2, train=False), axis=1)
        q_t = target(s2, train=False)[np.arange(a_star.size), a_star]
        out[live] += cfg.gamma * np.clip(q_t, -cfg.r_max, cfg.r_max)
    return out


def compute_double_target(main: Network, target: Network, t, cfg: DqnConfig) -> float:
    """Target for one transition (``t`` has fields ``r``, ``s_next``, ``done``)."""
    return float(double_targets(main, target, [t.r], np.atleast_2d(t.s_next), [t.done], cfg)[0])


def loss(main_q, targets, is_weights, cfg: DqnConfig):
    """Importance-weighted squared TD error plus a penalty on |Q| above r_max.

    Returns ``(scalar loss, |td| per sample, dLoss/dq per sample)``.
    """
    q = np.asarray(main_q, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    w = np.asarray(is_weights, dtype=np.float64)
    if not q.shape == y.shape == w.shape:
        raise StructuralError("main_q, targets and is_weights must have equal lengths")
    n = q.size
    td = y - q
    excess = np.abs(q) - cfg.r_max
    value = float(np.mean(w * td * td) + cfg.penalty_weight * np.mean(np.maximum(excess, 0.0)))
    grad = (-2.0 * w * td + cfg.penalty_weight * np.where(excess > 0, np.sign(q), 0.0)) / n
    return value, np.abs(td), grad


LOG_COLUMNS = ("step", "loss", "mean_q", "mean_abs_td", "beta")


class DqnTrainer:
    """Owns the main/target networks, optimizer, replay buffer and RNG."""

    def __init__(self, data: Transitions, cfg: DqnConfig, n_actions: int = N_ACTIONS):
        self.cfg = cfg.validate()
        self.data = data
        if len(data) < cfg.batch_size:
            raise DataError(f"{len(data)} transitions is fewer than one batch of {cfg.batch_size}")
        self.net = build_qnet(data.state_dim, cfg, n_actions)
        self.target = self.net.clone()
        self.opt = Adam(lr=cfg.learning_rate)
        self.buffer = PERBuffer(len(data), cfg.per_alpha, cfg.per_beta0, cfg.per_beta1, cfg.per_eps)
        self.buffer.add(len(data))
        self.rng = np.random.default_rng(cfg.seed)
        self.step = 0
        self.log: list[tuple] = []

    def train_step(self) -> tuple:
        cfg, d = self.cfg, self.data
        self.step += 1
        span = max(cfg.total_steps - 1, 1)
        beta = self.buffer.anneal((self.step - 1) / span)
        idx, w = self.buffer.sample(cfg.batch_size, self.rng)
        y = double_targets(self.net, self.target, d.r[idx], d.s_next[idx], d.done[idx], cfg)
        out = self.net(d.s[idx], train=True)
        rows = np.arange(idx.size)
        q = out[rows, d.a[idx]]
        value, td, dq = loss(q, y, w, cfg)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss at step {self.step}", snapshot={
                "step": self.step, "indices": idx.tolist(), "q": q.tolist(), "targets": y.tolist(),
                "weights": w.tolist()})
        upstream = np.zeros_like(out)
        upstream[rows, d.a[idx]] = dq
        self.net.backward(upstream)
        self.opt.step(self.net.parameters(), self.net.gradients())
        self.buffer.update(idx, td)
        if self.step % cfg.target_update_period == 0:
            self.target.copy_from(self.net)
        row = (self.step, value, float(q.mean()), float(td.mean()), float(beta))
        self.log.append(row)
        return row

    def run(self, n_steps: int | None = None) -> "DqnTrainer":
        n = self.cfg.total_steps - self.step if n_steps is None else n_steps
        for _ in range(n):
            self.train_step()
        return self

    # -- persistence ------------------------------------------------------
    def save(self, path, extra: dict | None = None):
        meta = {"kind": "dueling-ddqn", "config": _config_dict(self.cfg), "step": self.step,
                "per": self.buffer.state(), "rng": self.rng.bit_generator.state}
        meta.update(extra or {})
        arrays = {"per_priorities": self.buffer.priorities}
        arrays.update({f"target/{k}": v for k, v in self.target.state_arrays().items()})
        return save_checkpoint(path, self.net, self.opt, extra=meta, extra_arrays=arrays)

    @classmethod
    def resume(cls, path, data: Transitions) -> "DqnTrainer":
        net, opt, meta, arrays = load_checkpoint(path)
        cfg = DqnConfig(**meta["config"])
        tr = cls(data, cfg, n_actions=net.spec.output_dim)
        tr.net, tr.opt, tr.step = net, opt, int(meta["step"])
        tr.target.load_state_arrays({k[len("target/"):]: v for k, v in arrays.items()
                                     if k.startswith("target/")})
        pr = np.array(arrays["per_priorities"][: len(data)], dtype=np.float64)
        tr.buffer.priorities[:] = pr
        tr.buffer.tree.set(np.arange(len(data)), pr ** cfg.per_alpha)
        tr.buffer.max_priority = meta["per"]["max_priority"]
        tr.buffer.beta = meta["per"]["beta"]
        tr.rng.bit_generator.state = meta["rng"]
        return tr


def _config_dict(cfg) -> dict:
    d = asdict(cfg)
    for f in fields(cfg):
        if isinstance(d[f.name], tuple):
            d[f.name] = list(d[f.name])
    return d


def train_dqn(data: Transitions, cfg: DqnConfig, n_actions: int = N_ACTIONS) -> tuple[Network, list[tuple]]:
    """Run ``cfg.total_steps`` updates; returns the main network and the per-step log
    (rows of ``LOG_COLUMNS``)."""
    tr = DqnTrainer(data, cfg, n_actions).run()
    return tr.net, tr.log


def load_qnet(path) -> tuple[Network, dict]:
    net, _, meta, _ = load_checkpoint(path)
    return net, meta
