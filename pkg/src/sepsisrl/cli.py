"""Command-line pipeline: each subcommand runs one stage inside a run directory.

    sepsisrl generate    --config run.json
    sepsisrl preprocess  --config run.json
    sepsisrl discretize  --config run.json
    sepsisrl train-sarsa --config run.json
    sepsisrl train-ae    --config run.json
    sepsisrl train-dqn   --config run.json
    sepsisrl evaluate    --config run.json
    sepsisrl report      --config run.json [--plots]

Every config field is also a flag (``--dqn.total_steps 5000``). Each stage
writes ``manifests/<stage>.json`` listing every file it wrote with its SHA-256.
"""

from __future__ import annotations

import argparse
import platform
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .autoencoder import LOG_COLUMNS as AE_LOG_COLUMNS
from .autoencoder import Autoencoder, train_autoencoder
from .baseline import ClusterModel, QTable, assign_clusters, fit_kmeans, physician_value, train_sarsa
from .cohort import (N_BINS, Cohort, cap_and_normalize, discretize_cohort, fit_action_bins, fit_norm_stats,
                     assign_rewards, generate_synthetic_cohort, impute_missing, split_cohort, ActionSpace)
from .config import STAGE_SEED_OFFSETS, RunConfig, flat_fields, load_config
from .dqn import LOG_COLUMNS as DQN_LOG_COLUMNS
from .dqn import DqnTrainer, cohort_transitions, load_qnet, q_values
from .errors import ConfigError, DependencyError, SepsisRLError
from .evaluation import (CALIBRATION_COLUMNS, COMPARISON_COLUMNS, DOSE_DIFF_COLUMNS, PCA_COLUMNS,
                         EvaluationPolicy, PolicyEvaluation, action_histogram, build_calibration,
                         comparison_rows, dosage_diff_mortality, estimate_behavior_policy, evaluate_policy,
                         latent_pca_export, mortality_from_return, mortality_se_from_return,
                         physician_baseline)
from .storage import file_sha256, load_json, save_json, write_table
from .trajfile import load_cohort, read_trajectories, save_cohort, write_trajectories

STAGES = ("generate", "preprocess", "discretize", "train-sarsa", "train-ae", "train-dqn", "evaluate", "report")

COHORT_FILE = "cohort/trajectories.csv"
PRE_TRAIN, PRE_TEST = "preprocess/train.npz", "preprocess/test.npz"
DISC_TRAIN, DISC_TEST = "discretize/train.npz", "discretize/test.npz"
ACTION_SPACE = "discretize/action_space.json"
CLUSTERS, QTABLE = "sarsa/clusters.npz", "sarsa/qtable.npz"
AE_MODEL = "autoencoder/model.npz"
SUMMARY = "evaluation/summary.json"


def dqn_path(states: str) -> str:
    return f"dqn/{states}.npz"


class Run:
    """One run directory plus the resolved config."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = Path(cfg.run_dir)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def require(self, rel: str, producer: str) -> Path:
        p = self.path(rel)
        if not p.is_file():
            if self.cfg.pipeline.chain:
                run_stage(self, producer)
            if not p.is_file():
                raise DependencyError(f"missing artifact {p} (produced by the `{producer}` stage)")
        return p


# ---------------------------------------------------------------------------
# stages: each returns (inputs, outputs) as lists of run-relative paths
# ---------------------------------------------------------------------------

def stage_generate(run: Run):
    cohort = generate_synthetic_cohort(run.cfg.cohort_config())
    write_trajectories(run.path(COHORT_FILE), cohort)
    return [], [COHORT_FILE]


def stage_preprocess(run: Run):
    cfg = run.cfg.preprocess
    cohort = read_trajectories(run.require(COHORT_FILE, "generate"))
    train, test = split_cohort(cohort, cfg.test_fraction, run.cfg.stage_seed("preprocess"))
    train, test = impute_missing(train, cfg.knn_k), impute_missing(test, cfg.knn_k)
    stats = fit_norm_stats(train)
    train = assign_rewards(cap_and_normalize(train, stats), cfg.r_max)
    test = assign_rewards(cap_and_normalize(test, stats), cfg.r_max)
    save_cohort(run.path(PRE_TRAIN), train)
    save_cohort(run.path(PRE_TEST), test)
    return [COHORT_FILE], [PRE_TRAIN, PRE_TEST]


def stage_discretize(run: Run):
    train = load_cohort(run.require(PRE_TRAIN, "preprocess"))
    test = load_cohort(run.require(PRE_TEST, "preprocess"))
    space = fit_action_bins(train)
    save_cohort(run.path(DISC_TRAIN), discretize_cohort(train, space), space)
    save_cohort(run.path(DISC_TEST), discretize_cohort(test, space), space)
    save_json(run.path(ACTION_SPACE), space.to_dict())
    return [PRE_TRAIN, PRE_TEST], [DISC_TRAIN, DISC_TEST, ACTION_SPACE]


def stage_train_sarsa(run: Run):
    c = run.cfg.cluster
    train = load_cohort(run.require(DISC_TRAIN, "discretize"))
    model = fit_kmeans(train.stacked()["features"], k=c.k, seed=run.cfg.stage_seed("cluster"),
                       max_iter=c.max_iter, tol=c.tol)
    cfg = run.cfg.sarsa_config()
    q = train_sarsa(train.trajectories, model, cfg)
    model.save(run.path(CLUSTERS))
    q.save(run.path(QTABLE), cfg)
    write_table(run.path("sarsa/td_history.csv"), ("sweep", "mean_abs_td"),
                enumerate(q.td_history, start=1))
    return [DISC_TRAIN], [CLUSTERS, QTABLE, "sarsa/td_history.csv"]


def stage_train_ae(run: Run):
    train = load_cohort(run.require(DISC_TRAIN, "discretize"))
    cfg = run.cfg.autoencoder_config()
    ae, log = train_autoencoder(train.stacked()["features"], cfg)
    ae.save(run.path(AE_MODEL), cfg, ae.opt)
    write_table(run.path("autoencoder/training_log.csv"), AE_LOG_COLUMNS, log)
    return [DISC_TRAIN], [AE_MODEL, "autoencoder/training_log.csv"]


def _latent_states(ae: Autoencoder, cohort: Cohort):
    return [ae.encode(t.features) for t in cohort.trajectories]


def stage_train_dqn(run: Run):
    train = load_cohort(run.require(DISC_TRAIN, "discretize"))
    inputs, outputs = [DISC_TRAIN], []
    for states in run.cfg.dqn.states:
        if states == "latent":
            ae = Autoencoder.load(run.require(AE_MODEL, "train-ae"))
            data = cohort_transitions(train, _latent_states(ae, train))
            inputs.append(AE_MODEL)
        else:
            data = cohort_transitions(train)
        trainer = DqnTrainer(data, run.cfg.dqn_config(states)).run()
        trainer.save(run.path(dqn_path(states)), extra={"states": states})
        log_rel = f"dqn/{states}_log.csv"
        write_table(run.path(log_rel), DQN_LOG_COLUMNS, trainer.log)
        outputs += [dqn_path(states), log_rel]
    return inputs, outputs


def _policy_q_fn(run: Run, states: str):
    net, _ = load_qnet(run.require(dqn_path(states), "train-dqn"))
    if states == "latent":
        ae = Autoencoder.load(run.require(AE_MODEL, "train-ae"))
        return lambda X: q_values(net, ae.encode(X))
    return lambda X: q_values(net, X)


POLICY_NAMES = {"raw": "normal_q_network", "latent": "autoencode_q_network"}


def stage_evaluate(run: Run):
    e = run.cfg.evaluation
    gamma = run.cfg.dqn.gamma
    r_max = run.cfg.preprocess.r_max
    train = load_cohort(run.require(DISC_TRAIN, "discretize"))
    test = load_cohort(run.require(DISC_TEST, "discretize"))
    model = ClusterModel.load(run.require(CLUSTERS, "train-sarsa"))
    q = QTable.load(run.require(QTABLE, "train-sarsa"))
    q_fns = {s: _policy_q_fn(run, s) for s in run.cfg.dqn.states}
    inputs = [DISC_TRAIN, DISC_TEST, CLUSTERS, QTABLE] + [dqn_path(s) for s in run.cfg.dqn.states]
    if "latent" in run.cfg.dqn.states:
        inputs.append(AE_MODEL)

    out = []

    def table(rel, header, rows):
        write_table(run.path(rel), header, rows)
        out.append(rel)

    # return-to-mortality calibration from the SARSA physician values on the test split
    curve = build_calibration(q, model, test, e.n_bins, r_max, e.min_bin_count)
    table("evaluation/calibration.csv", CALIBRATION_COLUMNS, curve.rows())

    pv = physician_value(q, model, test)
    phys_sarsa = PolicyEvaluation("physician", None, mortality_from_return(curve, pv),
                                  mortality_se_from_return(curve, pv), pv)
    eval_cohort = test if e.split == "test" else train
    logged = physician_baseline(eval_cohort, curve, gamma)
    logged.name = "physician_logged_return"

    pi_b = estimate_behavior_policy(train, model, e.smoothing)
    evals = []
    st = test.stacked()
    for states, fn in q_fns.items():
        name = POLICY_NAMES[states]
        pi_e = EvaluationPolicy(fn, e.epsilon_soft)
        ev = evaluate_policy(eval_cohort, pi_e, pi_b, model, fn, curve, gamma, r_max, name=name)
        evals.append(ev)
        table(f"evaluation/dr_values_{name}.csv", ("patient_id", "v_dr"),
              zip([t.patient_id for t in eval_cohort.trajectories], ev.dr.values))
        greedy = pi_e.greedy(st["features"])
        _histogram_table(table, f"evaluation/action_histogram_{name}.csv", action_histogram(greedy))
        hists = dosage_diff_mortality(greedy, st["actions"], st["died"])
        table(f"evaluation/dosage_diff_{name}.csv", DOSE_DIFF_COLUMNS,
              [row for h in hists for row in h.rows()])
    _histogram_table(table, "evaluation/action_histogram_physician.csv", action_histogram(st["actions"]))

    rows = [("physician", pv, float("nan"), phys_sarsa.mortality, phys_sarsa.mortality_se)]
    rows += list(comparison_rows([logged] + evals))
    table("evaluation/policy_comparison.csv", COMPARISON_COLUMNS, rows)

    if "latent" in run.cfg.dqn.states:
        ae = Autoencoder.load(run.path(AE_MODEL))
        pca = latent_pca_export(ae.encode(st["features"]), st["died"])
        table("evaluation/latent_pca.csv", PCA_COLUMNS, pca.table)

    summary = {
        "split": e.split,
        "physician_value": pv,
        "physician_estimated_mortality": phys_sarsa.mortality,
        "physician_logged_return": logged.dr.mean,
        "test_mortality": test.mortality,
        "policies": {ev.name: {"v_dr": ev.dr.mean, "v_dr_se": ev.dr.standard_error,
                               "estimated_mortality": ev.mortality,
                               "mortality_binomial_se": ev.mortality_se} for ev in evals},
    }
    save_json(run.path(SUMMARY), summary)
    out.append(SUMMARY)
    return inputs, out


def _histogram_table(table, rel, counts):
    table(rel, ("iv_bin", "vp_bin", "count"),
          [(i, j, int(counts[i, j])) for i in range(N_BINS) for j in range(N_BINS)])


def stage_report(run: Run):
    summary_path = run.require(SUMMARY, "evaluate")
    eval_manifest = load_json(run.require("manifests/evaluate.json", "evaluate"))
    out = []
    for rel in sorted(eval_manifest["outputs"]):
        src = run.path(rel)
        if not src.is_file():
            raise DependencyError(f"missing artifact {src} (produced by the `evaluate` stage)")
        dest = f"report/{Path(rel).name}"
        run.path(dest).parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, run.path(dest))
        out.append(dest)
    checkpoints = {}
    for stage in STAGES[:-2]:
        mpath = run.path(f"manifests/{stage}.json")
        if mpath.is_file():
            checkpoints.update(load_json(mpath)["outputs"])
    save_json(run.path("report/artifacts.json"), {
        "config": run.cfg.to_dict(),
        "seeds": {k: run.cfg.stage_seed(k) for k in STAGE_SEED_OFFSETS},
        "artifact_hashes": checkpoints,
    })
    out.append("report/artifacts.json")
    if run.cfg.evaluation.plots:
        from .plotting import render_report_figures
        out += render_report_figures(run.root, run.root / "report" / "figures")
    del summary_path
    return ["manifests/evaluate.json"], out


STAGE_FUNCS = {
    "generate": stage_generate,
    "preprocess": stage_preprocess,
    "discretize": stage_discretize,
    "train-sarsa": stage_train_sarsa,
    "train-ae": stage_train_ae,
    "train-dqn": stage_train_dqn,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def _hashes(run: Run, rels):
    return {rel: file_sha256(run.path(rel)) for rel in rels if run.path(rel).is_file()}


def run_stage(run: Run, stage: str) -> Path:
    """Run one stage and write its manifest; returns the manifest path."""
    start = time.perf_counter()
    inputs, outputs = STAGE_FUNCS[stage](run)
    manifest = {
        "stage": stage,
        "config": run.cfg.to_dict(),
        "seeds": {k: run.cfg.stage_seed(k) for k in STAGE_SEED_OFFSETS},
        "inputs": _hashes(run, inputs),
        "outputs": _hashes(run, outputs),
        "timing_seconds": round(time.perf_counter() - start, 3),
        "versions": {"sepsisrl": __version__, "numpy": np.__version__, "python": platform.python_version(),
                     "artifact_format": 1},
    }
    return save_json(run.path(f"manifests/{stage}.json"), manifest)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _flag_type(default):
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, (int, float, str)):
        return type(default)
    if isinstance(default, list):
        elem = type(default[0]) if default else str
        return lambda text: [elem(x) for x in text.split(",") if x]
    return str


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sepsisrl", description="Offline RL treatment-policy pipeline.",
                                     allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="stage", required=True, metavar="STAGE")
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage", argument_default=argparse.SUPPRESS,
                           allow_abbrev=False)
        p.add_argument("--config", required=True, help="JSON run configuration")
        for dotted, default in flat_fields():
            p.add_argument(f"--{dotted}", dest=f"cfg:{dotted}", type=_flag_type(default),
                           metavar=type(default).__name__.upper())
        if stage == "report":
            p.add_argument("--plots", dest="cfg:evaluation.plots", action="store_const", const=True,
                           help="also render matplotlib figures next to the tables")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:")}
    try:
        cfg = load_config(args.config, overrides)
        run = Run(cfg)
        manifest = run_stage(run, args.stage)
    except ConfigError as e:
        print(f"sepsisrl: config error: {e}", file=sys.stderr)
        return 2
    except DependencyError as e:
        print(f"sepsisrl: dependency error: {e}", file=sys.stderr)
        return 3
    except SepsisRLError as e:
        print(f"sepsisrl: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(f"{args.stage}: wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
