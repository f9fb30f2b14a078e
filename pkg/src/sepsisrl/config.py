"""Run configuration: one JSON file holding every module's settings.

Values resolve as command-line flag > config file > dataclass default. Every
stage derives its seed from the single global seed by a fixed offset, so the
module configs carry no seed of their own in the file schema.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .autoencoder import SparseAEConfig
from .baseline import SarsaConfig
from .cohort import R_MAX, SeverityDynamics, SyntheticCohortConfig
from .dqn import DqnConfig
from .errors import ConfigError

STAGE_SEED_OFFSETS = {
    "generate": 0,
    "preprocess": 1,
    "cluster": 2,
    "sarsa": 3,
    "autoencoder": 4,
    "dqn_raw": 5,
    "dqn_latent": 6,
}


@dataclass
class CohortSection:
    n_patients: int = 2000
    mortality_target: float = 0.137
    min_len: int = 3
    max_len: int = 18
    dynamics: SeverityDynamics = field(default_factory=SeverityDynamics)


@dataclass
class PreprocessSection:
    test_fraction: float = 0.2
    knn_k: int = 10
    r_max: float = R_MAX


@dataclass
class ClusterSection:
    k: int = 1250
    max_iter: int = 300
    tol: float = 1e-6


@dataclass
class SarsaSection:
    alpha: float = 0.1
    gamma: float = 0.99
    n_sweeps: int = 300
    alpha_decay: str = "none"
    decay_power: float = 1.0


@dataclass
class AutoencoderSection:
    hidden_dim: int = 32
    rho: float = 0.05
    beta_sparsity: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 256


@dataclass
class DqnSection:
    gamma: float = 0.99
    penalty_weight: float = 5.0
    batch_size: int = 32
    target_update_period: int = 1000
    total_steps: int = 20000
    learning_rate: float = 1e-4
    hidden: list = field(default_factory=lambda: [128, 128])
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    per_beta1: float = 1.0
    per_eps: float = 1e-2
    # which state representations to train on: "raw", "latent" or both
    states: list = field(default_factory=lambda: ["raw", "latent"])


@dataclass
class EvaluationSection:
    n_bins: int = 25
    min_bin_count: int = 50
    smoothing: float = 0.5
    epsilon_soft: float = 0.01
    split: str = "test"
    plots: bool = False


@dataclass
class PipelineSection:
    # run missing upstream stages instead of failing with a dependency error
    chain: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    run_dir: str = "run"
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    cohort: CohortSection = field(default_factory=CohortSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    cluster: ClusterSection = field(default_factory=ClusterSection)
    sarsa: SarsaSection = field(default_factory=SarsaSection)
    autoencoder: AutoencoderSection = field(default_factory=AutoencoderSection)
    dqn: DqnSection = field(default_factory=DqnSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    # -- derived module configs -------------------------------------------
    def stage_seed(self, stage: str) -> int:
        return int(self.seed) + STAGE_SEED_OFFSETS[stage]

    def cohort_config(self) -> SyntheticCohortConfig:
        c = self.cohort
        return SyntheticCohortConfig(c.n_patients, c.mortality_target, self.stage_seed("generate"),
                                     c.min_len, c.max_len, dataclasses.replace(c.dynamics))

    def sarsa_config(self) -> SarsaConfig:
        s = self.sarsa
        return SarsaConfig(alpha=s.alpha, gamma=s.gamma, n_sweeps=s.n_sweeps, seed=self.stage_seed("sarsa"),
                           alpha_decay=s.alpha_decay, decay_power=s.decay_power, r_max=self.preprocess.r_max)

    def autoencoder_config(self) -> SparseAEConfig:
        a = self.autoencoder
        return SparseAEConfig(a.hidden_dim, a.rho, a.beta_sparsity, a.learning_rate, a.epochs, a.batch_size,
                              seed=self.stage_seed("autoencoder"))

    def dqn_config(self, states: str) -> DqnConfig:
        d = self.dqn
        return DqnConfig(gamma=d.gamma, penalty_weight=d.penalty_weight, r_max=self.preprocess.r_max,
                         batch_size=d.batch_size, target_update_period=d.target_update_period,
                         total_steps=d.total_steps, seed=self.stage_seed(f"dqn_{states}"),
                         learning_rate=d.learning_rate, hidden=tuple(d.hidden), per_alpha=d.per_alpha,
                         per_beta0=d.per_beta0, per_beta1=d.per_beta1, per_eps=d.per_eps)

    # -- validation ---------------------------------------------------------
    def validate(self) -> "RunConfig":
        if int(self.seed) < 0:
            raise ConfigError("seed must be non-negative")
        if not str(self.run_dir):
            raise ConfigError("run_dir must be non-empty")
        self.cohort_config().validate()
        self.sarsa_config().validate()
        self.autoencoder_config().validate()
        for states in self.dqn.states:
            if states not in ("raw", "latent"):
                raise ConfigError(f"dqn.states entries must be 'raw' or 'latent', got {states!r}")
        if not self.dqn.states:
            raise ConfigError("dqn.states must name at least one representation")
        self.dqn_config("raw").validate()
        p = self.preprocess
        if not 0.0 < p.test_fraction < 1.0:
            raise ConfigError("preprocess.test_fraction must lie in (0, 1)")
        if p.knn_k < 1 or p.r_max <= 0:
            raise ConfigError("preprocess.knn_k >= 1 and preprocess.r_max > 0 required")
        c = self.cluster
        if c.k < 1 or c.max_iter < 1 or c.tol < 0:
            raise ConfigError("cluster.k >= 1, cluster.max_iter >= 1 and cluster.tol >= 0 required")
        e = self.evaluation
        if e.split not in ("test", "train"):
            raise ConfigError("evaluation.split must be 'test' or 'train'")
        if e.n_bins < 1 or e.min_bin_count < 1:
            raise ConfigError("evaluation.n_bins and evaluation.min_bin_count must be positive")
        if e.smoothing <= 0:
            raise ConfigError("evaluation.smoothing must be positive")
        if not 0.0 <= e.epsilon_soft < 1.0:
            raise ConfigError("evaluation.epsilon_soft must lie in [0, 1)")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, "")


# ---------------------------------------------------------------------------
# schema-checked construction
# ---------------------------------------------------------------------------

def _check_type(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        if default:
            return [_check_type(v, default[0], f"{where}[{i}]") for i, v in enumerate(value)]
        return list(value)
    return value


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    default = cls()
    kwargs = {}
    for name, value in data.items():
        current = getattr(default, name)
        where = prefix + name
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, where + ".")
        else:
            kwargs[name] = _check_type(value, current, where)
    return cls(**kwargs)


def flat_fields(cls=RunConfig, prefix: str = ""):
    """Yield ``(dotted_name, default)`` for every leaf field."""
    default = cls()
    for f in dataclasses.fields(cls):
        value = getattr(default, f.name)
        if dataclasses.is_dataclass(value):
            yield from flat_fields(type(value), f"{prefix}{f.name}.")
        else:
            yield prefix + f.name, value


def set_dotted(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {k} is not a section")
    node[keys[-1]] = value


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config, apply dotted-key overrides and validate everything."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from None
    for dotted, value in (overrides or {}).items():
        set_dotted(data, dotted, value)
    return RunConfig.from_dict(data).validate()
