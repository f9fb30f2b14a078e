"""Discretized-state baseline: k-means state clusters and tabular SARSA.

The SARSA table estimates the action-value function of the logged (physician)
policy. It is used as an evaluation yardstick, not as a treatment policy.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .cohort import N_ACTIONS, R_MAX, Cohort, PatientTrajectory
from .errors import ConfigError, DataError, FitError, StructuralError
from .storage import load_archive, save_archive


@dataclass
class ClusterModel:
    centroids: np.ndarray
    seed: int = 0
    inertia_history: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def save(self, path):
        return save_archive(path, {"centroids": self.centroids},
                            {"format": "sepsisrl-cluster-model", "version": 1, "k": self.k,
                             "seed": self.seed, "converged": self.converged,
                             "inertia_history": self.inertia_history})

    @classmethod
    def load(cls, path) -> "ClusterModel":
        arrays, meta = load_archive(path)
        if meta.get("format") != "sepsisrl-cluster-model":
            raise DataError(f"{path} is not a cluster model")
        return cls(arrays["centroids"], meta["seed"], meta["inertia_history"], meta["converged"])


def _sq_dists(X, C, C_sq=None):
    """Squared Euclidean distances, (n, k), via the expanded form."""
    if C_sq is None:
        C_sq = np.einsum("ij,ij->i", C, C)
    X_sq = np.einsum("ij,ij->i", X, X)
    d = X_sq[:, None] - 2.0 * (X @ C.T) + C_sq[None, :]
    return np.maximum(d, 0.0)


def _nearest(X, C, chunk=8192):
    C_sq = np.einsum("ij,ij->i", C, C)
    labels = np.empty(X.shape[0], dtype=np.int64)
    dmin = np.empty(X.shape[0])
    for a in range(0, X.shape[0], chunk):
        d = _sq_dists(X[a:a + chunk], C, C_sq)
        labels[a:a + chunk] = d.argmin(axis=1)
        dmin[a:a + chunk] = d[np.arange(d.shape[0]), labels[a:a + chunk]]
    return labels, dmin


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = X[first]
    d2 = ((X - X[first]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise FitError("k-means++ ran out of distinct points")
        idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
        idx = min(idx, n - 1)
        while d2[idx] == 0:  # guard against landing on a zero-mass point through rounding
            idx = (idx + 1) % n
        centers[i] = X[idx]
        np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1), out=d2)
    return centers


def fit_kmeans(train_features, k: int = 1250, seed: int = 0, max_iter: int = 300,
               tol: float = 1e-6) -> ClusterModel:
    """Lloyd's algorithm from k-means++ seeds.

    Stops when no centroid moves by ``tol`` or more, or after ``max_iter``
    iterations. A cluster that empties is re-seeded with the point farthest
    from its current centroid.
    """
    X = np.asarray(train_features, dtype=np.float64)
    if X.ndim != 2:
        raise StructuralError("train_features must be a 2-D array")
    if k < 1:
        raise FitError("k must be positive")
    n_distinct = np.unique(X, axis=0).shape[0]
    if n_distinct < k:
        raise FitError(f"only {n_distinct} distinct points for k={k} clusters")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, k, rng)
    history: list[float] = []
    converged = False
    for _ in range(max_iter):
        labels, dmin = _nearest(X, C)
        history.append(float(dmin.sum()))
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        newC = C.copy()
        filled = counts > 0
        newC[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            far = np.argsort(-dmin, kind="stable")
            for j, idx in zip(empty, far):
                newC[j] = X[idx]
        shift = np.sqrt(((newC - C) ** 2).sum(axis=1)).max()
        C = newC
        if shift < tol and not empty.size:
            converged = True
            break
    labels, dmin = _nearest(X, C)
    history.append(float(dmin.sum()))
    return ClusterModel(C, seed=seed, inertia_history=history, converged=converged)


def assign_cluster(x, model: ClusterModel) -> int:
    """Nearest centroid by exact Euclidean distance; lowest index wins ties."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.centroids.shape[1],):
        raise StructuralError(f"expected a vector of length {model.centroids.shape[1]}")
    d = ((model.centroids - x) ** 2).sum(axis=1)
    return int(np.argmin(d))


def assign_clusters(X, model: ClusterModel) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.centroids.shape[1]:
        raise StructuralError(f"expected rows of width {model.centroids.shape[1]}")
    return _nearest(X, model.centroids)[0]


# ---------------------------------------------------------------------------
# SARSA
# ---------------------------------------------------------------------------

@dataclass
class SarsaConfig:
    alpha: float = 0.1
    gamma: float = 0.99
    n_sweeps: int = 300
    seed: int = 0
    # "none": constant alpha; "visit": alpha / visits(s, a) ** decay_power
    alpha_decay: str = "none"
    decay_power: float = 1.0
    r_max: float = R_MAX
    q_init: float = 0.0

    def validate(self) -> "SarsaConfig":
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.n_sweeps < 0:
            raise ConfigError("n_sweeps must be non-negative")
        if self.alpha_decay not in ("none", "visit"):
            raise ConfigError(f"unknown alpha_decay {self.alpha_decay!r}")
        if self.decay_power <= 0:
            raise ConfigError("decay_power must be positive")
        return self


@dataclass
class QTable:
    values: np.ndarray
    visit_counts: np.ndarray
    # mean |TD error| per sweep
    td_history: list[float] = field(default_factory=list)

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    def save(self, path, config: SarsaConfig | None = None):
        meta = {"format": "sepsisrl-qtable", "version": 1, "td_history": self.td_history,
                "config": asdict(config) if config else None}
        return save_archive(path, {"values": self.values, "visit_counts": self.visit_counts}, meta)

    @classmethod
    def load(cls, path) -> "QTable":
        arrays, meta = load_archive(path)
        if meta.get("format") != "sepsisrl-qtable":
            raise DataError(f"{path} is not a Q table")
        return cls(arrays["values"], arrays["visit_counts"], meta["td_history"])


@dataclass
class SarsaTuples:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    a_next: np.ndarray
    done: np.ndarray

    def __len__(self):
        return self.s.shape[0]


def sarsa_tuples(trajs, states_per_traj) -> SarsaTuples:
    """Build <s, a, r, s', a'> tuples. ``states_per_traj`` holds one int array
    of state ids per trajectory. The terminal step gets s' = a' = -1."""
    parts = {k: [] for k in ("s", "a", "r", "s_next", "a_next", "done")}
    for traj, states in zip(trajs, states_per_traj):
        acts = np.asarray(traj.actions)
        if np.any(acts < 0) or np.any(acts >= N_ACTIONS):
            raise DataError(f"patient {traj.patient_id} has undiscretized actions")
        states = np.asarray(states, dtype=np.int64)
        T = len(traj)
        parts["s"].append(states)
        parts["a"].append(acts)
        parts["r"].append(np.asarray(traj.rewards, dtype=np.float64))
        parts["s_next"].append(np.append(states[1:], -1))
        parts["a_next"].append(np.append(acts[1:], -1))
        parts["done"].append(np.arange(T) == T - 1)
    return SarsaTuples(**{k: np.concatenate(v) for k, v in parts.items()})


def run_sarsa(tuples: SarsaTuples, n_states: int, cfg: SarsaConfig, n_actions: int = N_ACTIONS,
              q0: QTable | None = None) -> QTable:
    """Apply Q(s,a) += alpha * (r + gamma * Q(s',a') - Q(s,a)) over shuffled sweeps.

    One sweep visits every tuple exactly once in a fresh random order.
    Terminal tuples use the target ``r``.
    """
    cfg.validate()
    if q0 is None:
        Q = np.full((n_states, n_actions), float(cfg.q_init))
        N = np.zeros((n_states, n_actions), dtype=np.int64)
    else:
        Q, N = q0.values.copy(), q0.visit_counts.copy()
    rng = np.random.default_rng(cfg.seed)
    s_l, a_l, r_l = tuples.s.tolist(), tuples.a.tolist(), tuples.r.tolist()
    s2_l, a2_l, d_l = tuples.s_next.tolist(), tuples.a_next.tolist(), tuples.done.tolist()
    gamma, alpha, power = cfg.gamma, cfg.alpha, cfg.decay_power
    decay = cfg.alpha_decay == "visit"
    # plain lists are much faster than numpy scalars for this strictly sequential loop
    Ql = Q.tolist()
    Nl = N.tolist()
    history = []
    for _ in range(cfg.n_sweeps):
        total = 0.0
        for i in rng.permutation(len(tuples)).tolist():
            s, a = s_l[i], a_l[i]
            target = r_l[i] if d_l[i] else r_l[i] + gamma * Ql[s2_l[i]][a2_l[i]]
            row = Ql[s]
            td = target - row[a]
            Nl[s][a] += 1
            step = alpha / Nl[s][a] ** power if decay else alpha
            row[a] += step * td
            total += abs(td)
        history.append(total / max(len(tuples), 1))
    prev = q0.td_history if q0 is not None else []
    return QTable(np.array(Ql), np.array(Nl, dtype=np.int64), list(prev) + history)


def train_sarsa(trajs: list[PatientTrajectory], model: ClusterModel, cfg: SarsaConfig) -> QTable:
    states = [assign_clusters(t.features, model) for t in trajs]
    return run_sarsa(sarsa_tuples(trajs, states), model.k, cfg)


def physician_value(q: QTable, model: ClusterModel, test: Cohort) -> float:
    """Mean of Q(cluster(s), logged action) over every test timestep."""
    st = test.stacked()
    if np.any(st["actions"] < 0):
        raise DataError("test cohort has undiscretized actions")
    s = assign_clusters(st["features"], model)
    return float(q.values[s, st["actions"]].mean())
