"""Sum tree and proportional prioritized replay over a fixed offline dataset."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, UsageError


class SumTree:
    """Array-backed binary tree whose internal nodes hold the sum of their children.

    Leaves live at ``tree[cap:cap + size]`` where ``cap`` is the capacity
    rounded up to a power of two. Updates recompute parents from their
    children instead of adding deltas, so internal nodes never drift.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("capacity must be positive")
        self.capacity = int(capacity)
        self.cap = 1 << max(0, (self.capacity - 1).bit_length())
        self.tree = np.zeros(2 * self.cap)
        self.size = 0

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def leaves(self) -> np.ndarray:
        return self.tree[self.cap:self.cap + self.size]

    def _check(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.size):
            raise UsageError(f"leaf index out of range [0, {self.size})")
        return idx

    def set(self, idx, values) -> None:
        idx = self._check(np.atleast_1d(idx))
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), idx.shape)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise UsageError("leaf values must be finite and non-negative")
        nodes = idx + self.cap
        self.tree[nodes] = values
        nodes = np.unique(nodes >> 1)
        while nodes.size and nodes[0] >= 1:
            self.tree[nodes] = self.tree[2 * nodes] + self.tree[2 * nodes + 1]
            if nodes[0] == 1:
                break
            nodes = np.unique(nodes >> 1)

    def append(self, values) -> np.ndarray:
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        if self.size + values.size > self.capacity:
            raise UsageError("sum tree is full")
        idx = np.arange(self.size, self.size + values.size)
        self.size += values.size
        self.set(idx, values)
        return idx

    def find(self, mass) -> np.ndarray:
        """Leaf indices whose cumulative-sum interval contains each ``mass``."""
        mass = np.array(mass, dtype=np.float64, ndmin=1)
        node = np.ones(mass.shape, dtype=np.int64)
        while node[0] < self.cap:
            left = 2 * node
            lv = self.tree[left]
            go_right = mass >= lv
            mass = np.where(go_right, mass - lv, mass)
            node = np.where(go_right, left + 1, left)
        leaf = node - self.cap
        # rounding can push a draw onto an empty padding leaf; walk back to the last real one
        return np.minimum(leaf, self.size - 1)

    def prefix_sums(self) -> np.ndarray:
        return np.cumsum(self.leaves())


class PERBuffer:
    """Proportional prioritized replay.

    Raw priorities are ``|td| + eps_priority``; the tree stores them raised to
    ``alpha``. Sampling is stratified: the total mass is cut into
    ``batch_size`` equal segments and one draw is made per segment.
    """

    def __init__(self, capacity: int, alpha: float = 0.6, beta0: float = 0.4, beta1: float = 1.0,
                 eps_priority: float = 1e-2):
        if alpha < 0 or eps_priority <= 0:
            raise ConfigError("alpha must be >= 0 and eps_priority > 0")
        self.tree = SumTree(capacity)
        self.alpha = alpha
        self.beta0, self.beta1 = beta0, beta1
        self.beta = beta0
        self.eps_priority = eps_priority
        self.priorities = np.zeros(capacity)
        self.max_priority = 1.0

    def __len__(self) -> int:
        return self.tree.size

    def add(self, n: int = 1) -> np.ndarray:
        """Register ``n`` new transitions at the current maximum priority."""
        idx = self.tree.append(np.full(n, self.max_priority ** self.alpha))
        self.priorities[idx] = self.max_priority
        return idx

    def anneal(self, fraction: float) -> float:
        f = min(max(fraction, 0.0), 1.0)
        self.beta = self.beta0 + (self.beta1 - self.beta0) * f
        return self.beta

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves()
        return leaves / leaves.sum()

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Returns ``(indices, normalized importance weights)``."""
        n = len(self)
        if n == 0:
            raise UsageError("cannot sample from an empty buffer")
        if batch_size > n:
            raise UsageError(f"batch of {batch_size} requested from a buffer of {n}")
        total = self.tree.total
        seg = total / batch_size
        mass = (np.arange(batch_size) + rng.random(batch_size)) * seg
        idx = self.tree.find(np.minimum(mass, np.nextafter(total, 0)))
        p = self.tree.tree[idx + self.tree.cap] / total
        w = (n * p) ** (-self.beta)
        return idx, w / w.max()

    def update(self, indices, td_errors) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        pr = np.abs(np.asarray(td_errors, dtype=np.float64)) + self.eps_priority
        if indices.shape != pr.shape:
            raise UsageError("indices and td_errors must have the same length")
        self.tree.set(indices, pr ** self.alpha)
        self.priorities[indices] = pr
        self.max_priority = max(self.max_priority, float(pr.max(initial=0.0)))

    def state(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "beta0": self.beta0, "beta1": self.beta1,
                "eps_priority": self.eps_priority, "max_priority": self.max_priority}
