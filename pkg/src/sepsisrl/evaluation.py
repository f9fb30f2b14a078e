"""Policy evaluation: return-to-mortality calibration, doubly robust off-policy
value estimates, and the tables behind the qualitative analyses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .baseline import ClusterModel, QTable, assign_clusters
from .cohort import N_ACTIONS, N_BINS, R_MAX, Cohort, DiscreteAction
from .errors import EvaluationError, ExportError, UsageError

QFunction = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# calibration curve
# ---------------------------------------------------------------------------

@dataclass
class CalibrationCurve:
    edges: np.ndarray          # merged bin edges, length n + 1
    proportions: np.ndarray    # mortality per merged bin
    counts: np.ndarray
    min_count: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def standard_errors(self) -> np.ndarray:
        p = self.proportions
        return np.sqrt(p * (1.0 - p) / np.maximum(self.counts, 1))

    def rows(self):
        c = self.centers
        for i in range(len(c)):
            yield (self.edges[i], self.edges[i + 1], c[i], int(self.counts[i]),
                   self.proportions[i], self.standard_errors[i])


CALIBRATION_COLUMNS = ("bin_lo", "bin_hi", "center", "count", "mortality", "binomial_se")


def _merge_sparse_bins(edges, counts, deaths, min_count):
    groups = [[edges[i], edges[i + 1], int(counts[i]), float(deaths[i])] for i in range(len(counts))]
    center = lambda g: 0.5 * (g[0] + g[1])
    while len(groups) > 1:
        sizes = [g[2] for g in groups]
        i = int(np.argmin(sizes))
        if sizes[i] >= min_count:
            break
        cands = [j for j in (i - 1, i + 1) if 0 <= j < len(groups)]
        # prefer populated neighbours, then the nearer centre, then the larger, then the left one
        j = min(cands, key=lambda j: (groups[j][2] == 0, abs(center(groups[j]) - center(groups[i])),
                                      -groups[j][2], j))
        lo, hi = min(i, j), max(i, j)
        a, b = groups[lo], groups[hi]
        groups[lo:hi + 1] = [[a[0], b[1], a[2] + b[2], a[3] + b[3]]]
    return groups


def calibration_from_samples(returns, labels, n_bins: int = 25, r_max: float = R_MAX,
                             min_count: int = 50) -> CalibrationCurve:
    """Equal-width bins over [-r_max, r_max]; values outside are put in the end
    bins. Bins with fewer than ``min_count`` samples are merged into a
    neighbour until every bin qualifies (or one bin remains)."""
    returns = np.asarray(returns, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if returns.size == 0:
        raise UsageError("calibration needs at least one sample")
    if returns.shape != labels.shape:
        raise UsageError("returns and labels must align")
    edges = np.linspace(-r_max, r_max, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, returns, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    deaths = np.bincount(idx, weights=labels, minlength=n_bins)
    groups = _merge_sparse_bins(edges, counts, deaths, min_count)
    g = np.array(groups)
    merged_edges = np.append(g[:, 0], g[-1, 1])
    return CalibrationCurve(merged_edges, g[:, 3] / g[:, 2], g[:, 2].astype(np.int64), min_count)


def build_calibration(q: QTable, model: ClusterModel, test: Cohort, n_bins: int = 25,
                      r_max: float = R_MAX, min_count: int = 50) -> CalibrationCurve:
    """Pair each test timestep's SARSA value Q(cluster(s), logged a) with its
    trajectory's outcome (1 = died) and bin the pairs."""
    if not test.trajectories:
        raise UsageError("empty test set")
    st = test.stacked()
    s = assign_clusters(st["features"], model)
    return calibration_from_samples(q.values[s, st["actions"]], st["died"], n_bins, r_max, min_count)


def mortality_from_return(curve: CalibrationCurve, v: float) -> float:
    """Linear interpolation between merged-bin centres, clamped at the ends."""
    return float(np.interp(v, curve.centers, curve.proportions))


def mortality_se_from_return(curve: CalibrationCurve, v: float) -> float:
    """Binomial standard error, interpolated the same way as the proportion."""
    return float(np.interp(v, curve.centers, curve.standard_errors))


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

@dataclass
class BehaviorPolicy:
    probs: np.ndarray  # (n_clusters, n_actions)
    smoothing: float

    def action_probs(self, clusters) -> np.ndarray:
        return self.probs[np.asarray(clusters, dtype=np.int64)]


def behavior_policy_from_counts(clusters, actions, n_clusters: int, smoothing: float = 0.5,
                                n_actions: int = N_ACTIONS) -> BehaviorPolicy:
    counts = np.zeros((n_clusters, n_actions))
    np.add.at(counts, (np.asarray(clusters, dtype=np.int64), np.asarray(actions, dtype=np.int64)), 1.0)
    denom = counts.sum(axis=1, keepdims=True) + n_actions * smoothing
    if smoothing <= 0 and np.any(denom == 0):
        raise EvaluationError("unvisited clusters need a positive smoothing constant")
    return BehaviorPolicy((counts + smoothing) / denom, smoothing)


def estimate_behavior_policy(train: Cohort, model: ClusterModel, smoothing: float = 0.5) -> BehaviorPolicy:
    st = train.stacked()
    return behavior_policy_from_counts(assign_clusters(st["features"], model), st["actions"],
                                       model.k, smoothing)


def soften_greedy(q_rows, epsilon_soft: float = 0.01) -> np.ndarray:
    """Greedy action (lowest index on ties) gets 1 - eps; eps is spread evenly over the rest."""
    q_rows = np.atleast_2d(q_rows)
    n, A = q_rows.shape
    probs = np.full((n, A), epsilon_soft / (A - 1))
    probs[np.arange(n), np.argmax(q_rows, axis=1)] = 1.0 - epsilon_soft
    return probs


@dataclass
class EvaluationPolicy:
    """Softened greedy policy over a Q function on states."""

    q_fn: QFunction
    epsilon_soft: float = 0.01

    def action_probs(self, states) -> np.ndarray:
        return soften_greedy(self.q_fn(np.atleast_2d(states)), self.epsilon_soft)

    def greedy(self, states) -> np.ndarray:
        return np.argmax(self.q_fn(np.atleast_2d(states)), axis=1)


# ---------------------------------------------------------------------------
# doubly robust estimation
# ---------------------------------------------------------------------------

def dr_value(rewards, actions, pi_e_probs, pi_b_logged, q_hat, gamma: float) -> float:
    """Doubly robust value of one trajectory by backward recursion:

        V(T+1) = 0
        V(t)   = Vhat(s_t) + rho_t * (r_t + gamma * V(t+1) - Qhat(s_t, a_t))

    with rho_t = pi_e(a_t|s_t) / pi_b(a_t|s_t) and Vhat(s) = sum_a pi_e(a|s) Qhat(s, a).
    ``pi_e_probs`` and ``q_hat`` are ``(T, n_actions)``; ``pi_b_logged`` is the
    behaviour probability of each logged action.
    """
    r = np.asarray(rewards, dtype=np.float64)
    a = np.asarray(actions, dtype=np.int64)
    pe = np.atleast_2d(np.asarray(pi_e_probs, dtype=np.float64))
    pb = np.asarray(pi_b_logged, dtype=np.float64)
    qh = np.atleast_2d(np.asarray(q_hat, dtype=np.float64))
    if np.any(pb <= 0):
        raise EvaluationError("behaviour policy gives zero probability to a logged action")
    T = r.size
    rows = np.arange(T)
    rho = pe[rows, a] / pb
    v_hat = (pe * qh).sum(axis=1)
    q_logged = qh[rows, a]
    v = 0.0
    for t in range(T - 1, -1, -1):
        v = v_hat[t] + rho[t] * (r[t] + gamma * v - q_logged[t])
    return float(v)


def discounted_return(rewards, gamma: float) -> float:
    # same backward order as dr_value, so the two agree bit for bit when rho = 1 and Qhat = 0
    g = 0.0
    for r in np.asarray(rewards, dtype=np.float64)[::-1].tolist():
        g = r + gamma * g
    return float(g)


@dataclass
class DREstimate:
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def standard_error(self) -> float:
        n = self.values.size
        return float(self.values.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")


@dataclass
class PolicyEvaluation:
    name: str
    dr: DREstimate
    mortality: float
    mortality_se: float
    physician_return: float
    actions: np.ndarray = field(repr=False, default=None)


def dr_estimate(cohort: Cohort, pi_e_probs: np.ndarray, pi_b_logged: np.ndarray, q_hat: np.ndarray,
                gamma: float) -> DREstimate:
    """Per-trajectory DR values from stacked per-timestep arrays (cohort order)."""
    vals = []
    pos = 0
    for traj in cohort.trajectories:
        T = len(traj)
        sl = slice(pos, pos + T)
        vals.append(dr_value(traj.rewards, traj.actions, pi_e_probs[sl], pi_b_logged[sl], q_hat[sl], gamma))
        pos += T
    return DREstimate(np.array(vals))


def evaluate_policy(test: Cohort, pi_e: EvaluationPolicy, pi_b: BehaviorPolicy, model: ClusterModel,
                    q_hat: QFunction, curve: CalibrationCurve, gamma: float, r_max: float = R_MAX,
                    name: str = "policy") -> PolicyEvaluation:
    """Mean DR value over test trajectories and its calibrated mortality.

    ``q_hat`` is clipped to [-r_max, r_max] before entering the estimator.
    ``physician_return`` is the mean discounted logged return of the same trajectories.
    """
    st = test.stacked()
    X = st["features"]
    pe = pi_e.action_probs(X)
    pb = pi_b.action_probs(assign_clusters(X, model))[np.arange(X.shape[0]), st["actions"]]
    qh = np.clip(q_hat(X), -r_max, r_max)
    dr = dr_estimate(test, pe, pb, qh, gamma)
    physician = float(np.mean([discounted_return(t.rewards, gamma) for t in test.trajectories]))
    return PolicyEvaluation(name, dr, mortality_from_return(curve, dr.mean),
                            mortality_se_from_return(curve, dr.mean), physician,
                            actions=np.argmax(pe, axis=1))


def physician_baseline(test: Cohort, curve: CalibrationCurve, gamma: float) -> PolicyEvaluation:
    """Logged policy: the DR 'values' are the discounted logged returns themselves."""
    vals = np.array([discounted_return(t.rewards, gamma) for t in test.trajectories])
    est = DREstimate(vals)
    return PolicyEvaluation("physician", est, mortality_from_return(curve, est.mean),
                            mortality_se_from_return(curve, est.mean), est.mean,
                            actions=test.stacked()["actions"])


COMPARISON_COLUMNS = ("policy", "expected_return", "return_se", "estimated_mortality", "mortality_binomial_se")


def comparison_rows(evals: list[PolicyEvaluation]):
    for e in evals:
        yield (e.name, e.dr.mean, e.dr.standard_error, e.mortality, e.mortality_se)


# ---------------------------------------------------------------------------
# qualitative analyses
# ---------------------------------------------------------------------------

def _as_indices(actions) -> np.ndarray:
    if len(actions) and isinstance(actions[0], DiscreteAction):
        return np.array([a.index for a in actions], dtype=np.int64)
    return np.asarray(actions, dtype=np.int64).reshape(-1)


def action_histogram(policy_actions) -> np.ndarray:
    """5x5 counts indexed [iv_bin, vp_bin]."""
    idx = _as_indices(policy_actions)
    return np.bincount(idx, minlength=N_ACTIONS).reshape(N_BINS, N_BINS)


@dataclass
class DoseDiffHistogram:
    drug: str
    differences: np.ndarray  # -4 .. 4
    counts: np.ndarray
    deaths: np.ndarray

    @property
    def mortality(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.deaths / np.maximum(self.counts, 1), np.nan)

    def rows(self):
        m = self.mortality
        for d, c, k, p in zip(self.differences, self.counts, self.deaths, m):
            yield (self.drug, int(d), int(c), int(k), p)


DOSE_DIFF_COLUMNS = ("drug", "difference", "count", "deaths", "mortality")


def dosage_diff_mortality(recommended, logged, died) -> tuple[DoseDiffHistogram, DoseDiffHistogram]:
    """Per drug, bin ``recommended_bin - logged_bin`` (in [-4, 4]) for each timestep
    and the share of those timesteps whose trajectory ended in death."""
    rec = _as_indices(recommended)
    log = _as_indices(logged)
    died = np.asarray(died, dtype=np.int64).reshape(-1)
    if not rec.shape == log.shape == died.shape:
        raise UsageError("recommended, logged and died must align per timestep")
    out = []
    diffs = np.arange(-(N_BINS - 1), N_BINS)
    for drug, fn in (("iv", lambda i: i // N_BINS), ("vp", lambda i: i % N_BINS)):
        d = fn(rec) - fn(log) + (N_BINS - 1)
        counts = np.bincount(d, minlength=2 * N_BINS - 1)
        deaths = np.bincount(d, weights=died, minlength=2 * N_BINS - 1).astype(np.int64)
        out.append(DoseDiffHistogram(drug, diffs, counts, deaths))
    return out[0], out[1]


@dataclass
class PCAExport:
    table: np.ndarray        # (n, 3): pc1, pc2, outcome
    eigenvalues: np.ndarray  # all, descending
    components: np.ndarray   # (2, d)
    mean: np.ndarray


PCA_COLUMNS = ("pc1", "pc2", "outcome")


def latent_pca_export(encodings, outcomes) -> PCAExport:
    """Project centred encodings on the top two eigenvectors of their covariance."""
    Z = np.asarray(encodings, dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64).reshape(-1)
    if Z.ndim != 2 or Z.shape[1] < 2:
        raise ExportError("need encodings with at least 2 dimensions")
    if Z.shape[0] < 3:
        raise ExportError("need at least 3 encodings")
    if y.size != Z.shape[0]:
        raise ExportError("one outcome label per encoding required")
    mu = Z.mean(axis=0)
    Zc = Z - mu
    cov = Zc.T @ Zc / (Z.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    tol = max(evals[0], 0.0) * Z.shape[1] * np.finfo(float).eps
    if np.sum(evals > tol) < 2:
        raise ExportError("covariance has rank below 2")
    comps = evecs[:, :2].T
    # fix the sign so the largest-magnitude loading of each component is positive
    flip = np.sign(comps[np.arange(2), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    proj = Zc @ comps.T
    return PCAExport(np.column_stack([proj, y]), evals, comps, mu)
