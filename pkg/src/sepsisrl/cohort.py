"""Cohorts of patient trajectories and everything done to them before learning.

A trajectory stores its timesteps column-wise (``features`` is ``(T, 47)``,
``doses`` is ``(T, 2)``) because every consumer downstream works on stacked
arrays. Absent feature values are NaN until :func:`impute_missing` runs.
Actions are ``-1`` until :func:`discretize_cohort` runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError, DomainError, FitError, ImputationError, SplitError, UsageError
from .features import (BINARY_FEATURES, FEATURE_NAMES, N_FEATURES, STATIC_FEATURES, default_caps,
                       generator_profile)

N_BINS = 5
N_ACTIONS = N_BINS * N_BINS
R_MAX = 15.0
SURVIVED, DIED = 0, 1


class RawDosePair(NamedTuple):
    iv_volume: float
    vp_max: float


class DiscreteAction(NamedTuple):
    iv_bin: int
    vp_bin: int

    @property
    def index(self) -> int:
        return action_index(self.iv_bin, self.vp_bin)

    @classmethod
    def from_index(cls, index: int) -> "DiscreteAction":
        if not 0 <= index < N_ACTIONS:
            raise DomainError(f"action index {index} outside [0, {N_ACTIONS - 1}]")
        return cls(int(index) // N_BINS, int(index) % N_BINS)


def action_index(iv_bin, vp_bin):
    """Row-major flattening: IV bin major, VP bin minor."""
    return iv_bin * N_BINS + vp_bin


class Timestep(NamedTuple):
    features: np.ndarray
    raw_dose: RawDosePair
    action: DiscreteAction | None
    reward: float
    is_terminal: bool


@dataclass
class PatientTrajectory:
    patient_id: str
    features: np.ndarray
    doses: np.ndarray
    died: bool
    actions: np.ndarray | None = None
    rewards: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.doses = np.asarray(self.doses, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] != N_FEATURES:
            raise DataError(f"patient {self.patient_id}: features must be (T, {N_FEATURES}), "
                            f"got {self.features.shape}")
        T = self.features.shape[0]
        if T < 1:
            raise DataError(f"patient {self.patient_id}: empty trajectory")
        if self.doses.shape != (T, 2):
            raise DataError(f"patient {self.patient_id}: doses must be ({T}, 2)")
        if self.actions is None:
            self.actions = np.full(T, -1, dtype=np.int64)
        if self.rewards is None:
            self.rewards = np.zeros(T)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.died = bool(self.died)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def outcome(self) -> str:
        return "died" if self.died else "survived"

    @property
    def steps(self) -> list[Timestep]:
        T = len(self)
        out = []
        for t in range(T):
            a = int(self.actions[t])
            out.append(Timestep(self.features[t], RawDosePair(*self.doses[t]),
                                DiscreteAction.from_index(a) if a >= 0 else None,
                                float(self.rewards[t]), t == T - 1))
        return out

    def with_(self, **changes) -> "PatientTrajectory":
        return replace(self, **changes)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"features": list(FEATURE_NAMES), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class Cohort:
    trajectories: list[PatientTrajectory]
    caps: np.ndarray = field(default_factory=default_caps)
    norm_stats: NormStats | None = None
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.caps = np.asarray(self.caps, dtype=np.float64)
        if self.caps.shape != (N_FEATURES, 2):
            raise DataError(f"caps must have one [min, max] row per feature, got {self.caps.shape}")

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[PatientTrajectory]:
        return iter(self.trajectories)

    def with_trajectories(self, trajs, **changes) -> "Cohort":
        return replace(self, trajectories=list(trajs), **changes)

    @property
    def n_steps(self) -> int:
        return sum(len(t) for t in self.trajectories)

    @property
    def mortality(self) -> float:
        if not self.trajectories:
            return float("nan")
        return float(np.mean([t.died for t in self.trajectories]))

    def stacked(self) -> dict[str, np.ndarray]:
        """Concatenate all timesteps. ``patient`` indexes into ``trajectories``;
        ``step`` is the position within its trajectory."""
        if not self.trajectories:
            raise DataError("empty cohort")
        lengths = np.array([len(t) for t in self.trajectories])
        patient = np.repeat(np.arange(len(lengths)), lengths)
        step = np.concatenate([np.arange(n) for n in lengths])
        return {
            "features": np.concatenate([t.features for t in self.trajectories]),
            "doses": np.concatenate([t.doses for t in self.trajectories]),
            "actions": np.concatenate([t.actions for t in self.trajectories]),
            "rewards": np.concatenate([t.rewards for t in self.trajectories]),
            "died": np.repeat(np.array([t.died for t in self.trajectories], dtype=np.int64), lengths),
            "patient": patient,
            "step": step,
            "terminal": step == np.repeat(lengths - 1, lengths),
            "lengths": lengths,
        }


# ---------------------------------------------------------------------------
# synthetic cohort generator
# ---------------------------------------------------------------------------

@dataclass
class SeverityDynamics:
    """Latent severity ``s`` moves each 4h window by

        drift + frailty - recovery + iv_harm * |iv - iv_need(s)| + vp_harm * |vp - vp_need(s)| + noise

    where ``iv_need(s) = clip(iv_need_offset + iv_need_slope * s, 0, 4)`` and
    ``vp_need(s) = clip(vp_need_slope * (s - vp_need_onset), 0, 4)``. Dosing
    that tracks the need therefore lowers severity. The logged (physician)
    policy doses ``need + bias + style + noise``, where ``style`` is drawn once
    per patient; patients whose style is far from zero are over- or under-dosed
    for their whole stay, so a better policy exists.
    """

    drift: float = 0.18
    recovery: float = 0.35
    frailty_sd: float = 0.08
    noise_sd: float = 0.30
    iv_harm: float = 0.2
    vp_harm: float = 0.2
    iv_need_offset: float = 1.5
    iv_need_slope: float = 0.3
    vp_need_slope: float = 0.3
    vp_need_onset: float = -5.0
    initial_mean: float = 0.0
    initial_sd: float = 1.0
    discharge_level: float = -0.9
    # logged policy: intended level = need + bias + patient offset + N(0, sd), rounded
    # and clipped; the patient offset is drawn once per stay (a persistent dosing style)
    physician_iv_bias: float = 0.3
    physician_iv_sd: float = 0.5
    physician_iv_patient_sd: float = 0.8
    physician_vp_bias: float = -0.3
    physician_vp_sd: float = 0.4
    physician_vp_patient_sd: float = 0.8
    # observation model
    feature_noise: float = 0.55
    missing_rate: float = 0.02
    outlier_rate: float = 0.001

    def validate(self):
        for name in ("frailty_sd", "noise_sd", "iv_harm", "vp_harm", "initial_sd",
                     "physician_iv_sd", "physician_vp_sd", "physician_iv_patient_sd",
                     "physician_vp_patient_sd", "feature_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"dynamics.{name} must be non-negative")
        for name in ("missing_rate", "outlier_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"dynamics.{name} must be a probability")
        if self.missing_rate >= 0.5:
            raise ConfigError("dynamics.missing_rate must be below 0.5")

    def iv_need(self, s):
        return np.clip(self.iv_need_offset + self.iv_need_slope * s, 0.0, N_BINS - 1)

    def vp_need(self, s):
        return np.clip(self.vp_need_slope * (s - self.vp_need_onset), 0.0, N_BINS - 1)

    def step_mean(self, s, iv_level, vp_level, frailty=0.0):
        """Expected severity change for one window (without noise)."""
        return (self.drift + frailty - self.recovery
                + self.iv_harm * np.abs(iv_level - self.iv_need(s))
                + self.vp_harm * np.abs(vp_level - self.vp_need(s)))

    def best_levels(self, s):
        return np.rint(self.iv_need(s)).astype(np.int64), np.rint(self.vp_need(s)).astype(np.int64)


# dose bands per intended level 1..4 (level 0 = no drug); draws are log-uniform in the band
IV_BANDS = np.array([[10.0, 60.0], [60.0, 200.0], [200.0, 550.0], [550.0, 2500.0]])
VP_BANDS = np.array([[0.01, 0.08], [0.08, 0.22], [0.22, 0.45], [0.45, 1.50]])


@dataclass
class SyntheticCohortConfig:
    n_patients: int = 2000
    mortality_target: float = 0.137
    seed: int = 0
    min_len: int = 3
    max_len: int = 18
    dynamics: SeverityDynamics = field(default_factory=SeverityDynamics)

    def validate(self) -> "SyntheticCohortConfig":
        if isinstance(self.dynamics, dict):
            self.dynamics = SeverityDynamics(**self.dynamics)
        if int(self.n_patients) != self.n_patients or self.n_patients <= 0:
            raise ConfigError(f"n_patients must be a positive integer, got {self.n_patients}")
        if not 0.0 < self.mortality_target < 1.0:
            raise ConfigError(f"mortality_target must lie in (0, 1), got {self.mortality_target}")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError(f"need 1 <= min_len <= max_len, got {self.min_len}, {self.max_len}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        self.dynamics.validate()
        return self


def _draw_doses(rng, levels, bands):
    lo = np.log(bands[np.maximum(levels, 1) - 1, 0])
    hi = np.log(bands[np.maximum(levels, 1) - 1, 1])
    dose = np.exp(lo + (hi - lo) * rng.random(levels.shape))
    return np.where(levels == 0, 0.0, dose)


def generate_synthetic_cohort(config: SyntheticCohortConfig) -> Cohort:
    """Simulate a cohort from the latent-severity model. Deterministic in ``config.seed``.

    All patients are first simulated for ``max_len`` windows without a death
    rule. The death threshold is then the severity level that exactly
    ``round(mortality_target * n)`` paths cross before they would have been
    discharged; a patient dies at the first crossing (but never before
    ``min_len`` windows). The threshold is recorded in ``cohort.meta``.
    """
    config.validate()
    dyn = config.dynamics
    n, L = int(config.n_patients), int(config.max_len)
    rng = np.random.default_rng(int(config.seed))

    s = np.empty((n, L))
    iv_lv = np.empty((n, L), dtype=np.int64)
    vp_lv = np.empty((n, L), dtype=np.int64)
    frailty = rng.normal(0.0, dyn.frailty_sd, n)
    iv_style = rng.normal(dyn.physician_iv_bias, dyn.physician_iv_patient_sd, n)
    vp_style = rng.normal(dyn.physician_vp_bias, dyn.physician_vp_patient_sd, n)
    s[:, 0] = rng.normal(dyn.initial_mean, dyn.initial_sd, n)
    for t in range(L):
        iv_lv[:, t] = np.clip(np.rint(dyn.iv_need(s[:, t]) + iv_style
                                      + rng.normal(0.0, dyn.physician_iv_sd, n)), 0, N_BINS - 1)
        vp_lv[:, t] = np.clip(np.rint(dyn.vp_need(s[:, t]) + vp_style
                                      + rng.normal(0.0, dyn.physician_vp_sd, n)), 0, N_BINS - 1)
        if t + 1 < L:
            s[:, t + 1] = (s[:, t] + dyn.step_mean(s[:, t], iv_lv[:, t], vp_lv[:, t], frailty)
                           + rng.normal(0.0, dyn.noise_sd, n))

    first = config.min_len - 1
    below = s < dyn.discharge_level
    below[:, :first] = False
    discharge_t = np.where(below.any(axis=1), below.argmax(axis=1), L - 1)
    t_idx = np.arange(L)
    running_peak = np.where(t_idx[None, :] <= discharge_t[:, None], s, -np.inf).max(axis=1)

    n_deaths = int(math.floor(config.mortality_target * n + 0.5))
    order = np.sort(running_peak)[::-1]
    if n_deaths == 0:
        threshold = order[0] + 1.0
    elif n_deaths >= n:
        threshold = order[-1] - 1.0
    else:
        threshold = 0.5 * (order[n_deaths - 1] + order[n_deaths])
    died = running_peak > threshold
    crossed = (s > threshold) & (t_idx[None, :] <= discharge_t[:, None])
    death_t = np.maximum(crossed.argmax(axis=1), first)
    end_t = np.where(died, death_t, discharge_t)

    # observations
    means, spreads, loadings = generator_profile()
    static_mask = np.array([name in STATIC_FEATURES for name in FEATURE_NAMES])
    binary_mask = np.array([name in BINARY_FEATURES for name in FEATURE_NAMES])
    patient_effect = rng.normal(0.0, 0.5, (n, N_FEATURES))
    obs_noise = rng.normal(0.0, dyn.feature_noise, (n, L, N_FEATURES))
    z = loadings[None, None, :] * s[:, :, None] + patient_effect[:, None, :] + obs_noise
    z[:, :, static_mask] = patient_effect[:, None, static_mask] * 2.0
    x = means + spreads * z
    binary_p = 1.0 / (1.0 + np.exp(-1.7 * z[:, :, binary_mask]))
    x[:, :, binary_mask] = (rng.random(binary_p.shape) < binary_p).astype(np.float64)
    outliers = rng.random(x.shape) < dyn.outlier_rate
    x = np.where(outliers & ~binary_mask & ~static_mask, means + spreads * 8.0 * np.sign(z), x)
    missing = rng.random(x.shape) < dyn.missing_rate
    missing[:, :, static_mask] = False
    x[missing] = np.nan

    iv_dose = _draw_doses(rng, iv_lv, IV_BANDS)
    vp_dose = _draw_doses(rng, vp_lv, VP_BANDS)

    width = len(str(n - 1))
    trajs = []
    for i in range(n):
        T = int(end_t[i]) + 1
        trajs.append(PatientTrajectory(
            patient_id=f"P{i:0{width}d}",
            features=x[i, :T],
            doses=np.stack([iv_dose[i, :T], vp_dose[i, :T]], axis=1),
            died=bool(died[i]),
        ))
    meta = {"generator": "latent-severity", "seed": int(config.seed), "death_threshold": float(threshold),
            "latent_severity": [s[i, : int(end_t[i]) + 1].tolist() for i in range(n)]}
    return Cohort(trajs, caps=default_caps(), meta=meta)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def aggregate_windows(times_h, values, window_h: float = 4.0, how: Sequence[str] | str = "mean",
                      start_h: float = 0.0, n_windows: int | None = None) -> np.ndarray:
    """Aggregate irregular measurements into fixed windows.

    ``values`` is ``(n_records, n_columns)`` with NaN for unmeasured entries;
    ``how`` gives ``"mean"``, ``"sum"`` or ``"max"`` per column. Windows with
    no measurement of a column stay NaN for ``mean``/``max`` and 0 for ``sum``.
    """
    times_h = np.asarray(times_h, dtype=np.float64)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[0] != times_h.shape[0]:
        values = values.T
    n_cols = values.shape[1]
    hows = [how] * n_cols if isinstance(how, str) else list(how)
    if len(hows) != n_cols:
        raise DataError("one aggregation rule per column required")
    w = np.floor((times_h - start_h) / window_h).astype(np.int64)
    if np.any(w < 0):
        raise DataError("measurement before start_h")
    n_w = int(w.max()) + 1 if n_windows is None else int(n_windows)
    out = np.full((n_w, n_cols), np.nan)
    for j, rule in enumerate(hows):
        for k in range(n_w):
            col = values[w == k, j]
            col = col[~np.isnan(col)]
            if rule == "sum":
                out[k, j] = col.sum()
            elif col.size == 0:
                continue
            elif rule == "mean":
                out[k, j] = col.mean()
            elif rule == "max":
                out[k, j] = col.max()
            else:
                raise DataError(f"unknown aggregation rule {rule!r}")
    return out


def impute_missing(cohort: Cohort, k: int = 10, chunk: int = 512) -> Cohort:
    """k-nearest-neighbour imputation over timestep vectors.

    Distances use only mutually observed features, each scaled by its
    cohort-wide standard deviation, and are rescaled by
    ``n_features / n_mutual`` so rows with gaps are not artificially close.
    Each absent value becomes the mean of that feature over the k nearest
    vectors that observe it (ties broken by row order).
    """
    if k < 1:
        raise ImputationError("k must be at least 1")
    if not cohort.trajectories:
        return cohort
    X = np.concatenate([t.features for t in cohort.trajectories])
    miss = np.isnan(X)
    if not miss.any():
        return cohort
    observed_counts = (~miss).sum(axis=0)
    for j in np.flatnonzero(observed_counts == 0):
        raise ImputationError(f"feature {FEATURE_NAMES[j]!r} is absent in every timestep")
    for j in np.flatnonzero(observed_counts < k):
        raise ImputationError(f"feature {FEATURE_NAMES[j]!r} observed in only "
                              f"{observed_counts[j]} timesteps, fewer than k={k}")

    scale = np.nanstd(X, axis=0)
    scale[scale == 0] = 1.0
    Z = np.where(miss, 0.0, X / scale)
    M = (~miss).astype(np.float64)
    Z2 = Z * Z
    filled = X.copy()
    rows_with_gaps = np.flatnonzero(miss.any(axis=1))
    for start in range(0, rows_with_gaps.size, chunk):
        rows = rows_with_gaps[start:start + chunk]
        Zr, Mr, Z2r = Z[rows], M[rows], Z2[rows]
        mutual = Mr @ M.T
        sq = Z2r @ M.T - 2.0 * (Zr @ Z.T) + Mr @ Z2.T
        with np.errstate(divide="ignore", invalid="ignore"):
            d2 = np.where(mutual > 0, np.maximum(sq, 0.0) * (N_FEATURES / mutual), np.inf)
        for j in np.flatnonzero(miss[rows].any(axis=0)):
            local = np.flatnonzero(miss[rows, j])
            donors = np.flatnonzero(~miss[:, j])
            dd = d2[np.ix_(local, donors)]
            kk = min(k, donors.size)
            if kk < donors.size:
                part = np.argpartition(dd, kk - 1, axis=1)[:, :kk]
            else:
                part = np.tile(np.arange(donors.size), (local.size, 1))
            # stable order among the candidates: distance first, then row index
            cand_d = np.take_along_axis(dd, part, axis=1)
            order = np.lexsort((part, cand_d), axis=1)
            nearest = donors[np.take_along_axis(part, order, axis=1)]
            filled[rows[local], j] = X[nearest, j].mean(axis=1)

    out, pos = [], 0
    for traj in cohort.trajectories:
        T = len(traj)
        out.append(traj.with_(features=filled[pos:pos + T]))
        pos += T
    return cohort.with_trajectories(out)


def fit_norm_stats(cohort: Cohort) -> NormStats:
    """Per-feature mean and (population) std of the capped features."""
    X = np.concatenate([t.features for t in cohort.trajectories])
    if np.isnan(X).any():
        raise DataError("normalization statistics need imputed features")
    Xc = np.clip(X, cohort.caps[:, 0], cohort.caps[:, 1])
    return NormStats(Xc.mean(axis=0), Xc.std(axis=0))


def cap_and_normalize(cohort: Cohort, stats: NormStats | None = None) -> Cohort:
    """Clamp every value into its cap range, then standardize with ``stats``.

    Pass the training split's statistics when transforming a test split; with
    ``stats=None`` they are fitted on ``cohort`` itself. Features with zero
    spread map to 0.
    """
    if cohort.normalized:
        raise UsageError("cohort is already normalized")
    if stats is None:
        stats = fit_norm_stats(cohort)
    lo, hi = cohort.caps[:, 0], cohort.caps[:, 1]
    safe_std = np.where(stats.std > 0, stats.std, 1.0)
    out = []
    for traj in cohort.trajectories:
        Xc = np.clip(traj.features, lo, hi)
        Z = np.where(stats.std > 0, (Xc - stats.mean) / safe_std, 0.0)
        out.append(traj.with_(features=Z))
    return cohort.with_trajectories(out, norm_stats=stats, normalized=True)


@dataclass
class ActionSpace:
    iv_edges: np.ndarray
    vp_edges: np.ndarray

    def __post_init__(self):
        self.iv_edges = np.asarray(self.iv_edges, dtype=np.float64)
        self.vp_edges = np.asarray(self.vp_edges, dtype=np.float64)
        for name, e in (("iv_edges", self.iv_edges), ("vp_edges", self.vp_edges)):
            if e.shape != (N_BINS - 2,) or np.any(np.diff(e) < 0):
                raise FitError(f"{name} must be {N_BINS - 2} non-decreasing cut points, got {e}")

    def to_dict(self) -> dict:
        return {"format": "sepsisrl-action-space", "version": 1,
                "iv_edges": self.iv_edges.tolist(), "vp_edges": self.vp_edges.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSpace":
        return cls(d["iv_edges"], d["vp_edges"])


def fit_action_bins(train: Cohort) -> ActionSpace:
    """Quartile cut points (linear interpolation) of the non-zero doses per drug."""
    doses = np.concatenate([t.doses for t in train.trajectories])
    edges = []
    for j, drug in enumerate(("IV", "VP")):
        nz = doses[:, j][doses[:, j] > 0]
        if nz.size < 4:
            raise FitError(f"{drug}: need at least 4 non-zero doses to fit quartiles, found {nz.size}")
        edges.append(np.percentile(nz, [25.0, 50.0, 75.0], method="linear"))
    return ActionSpace(*edges)


def _bin(dose, edges):
    dose = np.asarray(dose, dtype=np.float64)
    if np.any(np.isnan(dose)) or np.any(dose < 0):
        raise DomainError("doses must be non-negative numbers")
    # ties at an edge fall in the lower bin
    b = 1 + np.searchsorted(edges, dose, side="left")
    return np.where(dose == 0, 0, b).astype(np.int64)


def discretize_action(dose: RawDosePair | Sequence[float], space: ActionSpace) -> DiscreteAction:
    iv, vp = dose
    return DiscreteAction(int(_bin(iv, space.iv_edges)), int(_bin(vp, space.vp_edges)))


def discretize_doses(doses: np.ndarray, space: ActionSpace) -> np.ndarray:
    """Vectorized form: ``(N, 2)`` dose array to ``(N,)`` action indices."""
    doses = np.asarray(doses, dtype=np.float64)
    return action_index(_bin(doses[:, 0], space.iv_edges), _bin(doses[:, 1], space.vp_edges))


def discretize_cohort(cohort: Cohort, space: ActionSpace) -> Cohort:
    return cohort.with_trajectories([t.with_(actions=discretize_doses(t.doses, space))
                                     for t in cohort.trajectories])


def assign_rewards(cohort: Cohort, r_max: float = R_MAX) -> Cohort:
    out = []
    for traj in cohort.trajectories:
        r = np.zeros(len(traj))
        r[-1] = -r_max if traj.died else r_max
        out.append(traj.with_(rewards=r))
    return cohort.with_trajectories(out)


def split_cohort(cohort: Cohort, test_fraction: float = 0.2, seed: int = 0) -> tuple[Cohort, Cohort]:
    """Stratified split by whole patient. Each outcome group contributes
    ``round(test_fraction * group_size)`` patients to the test set."""
    if not 0.0 < test_fraction < 1.0:
        raise SplitError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    died = np.array([t.died for t in cohort.trajectories])
    test_idx = []
    for group in (False, True):
        members = np.flatnonzero(died == group)
        n_test = int(math.floor(test_fraction * members.size + 0.5))
        test_idx.append(rng.permutation(members)[:n_test])
    test_idx = np.sort(np.concatenate(test_idx))
    n = len(cohort)
    if test_idx.size == 0 or test_idx.size == n:
        raise SplitError(f"cohort of {n} patients is too small to split at {test_fraction}")
    is_test = np.zeros(n, dtype=bool)
    is_test[test_idx] = True
    train = [t for t, m in zip(cohort.trajectories, is_test) if not m]
    test = [t for t, m in zip(cohort.trajectories, is_test) if m]
    return cohort.with_trajectories(train), cohort.with_trajectories(test)


@dataclass
class PreprocessResult:
    train: Cohort
    test: Cohort
    stats: NormStats


def preprocess(cohort: Cohort, test_fraction: float = 0.2, k: int = 10, seed: int = 0,
               r_max: float = R_MAX) -> PreprocessResult:
    """Split, impute each split, cap, normalize with training statistics, assign rewards."""
    train, test = split_cohort(cohort, test_fraction, seed)
    train = impute_missing(train, k)
    test = impute_missing(test, k)
    stats = fit_norm_stats(train)
    train = assign_rewards(cap_and_normalize(train, stats), r_max)
    test = assign_rewards(cap_and_normalize(test, stats), r_max)
    return PreprocessResult(train, test, stats)
