import json

import pytest

from sepsisrl.cli import STAGES, main
from sepsisrl.config import STAGE_SEED_OFFSETS, RunConfig, flat_fields, load_config, set_dotted
from sepsisrl.errors import ConfigError
from sepsisrl.storage import file_sha256, load_json, read_table

SMALL = {
    "seed": 3,
    "cohort": {"n_patients": 120},
    "cluster": {"k": 20, "max_iter": 50},
    "sarsa": {"n_sweeps": 10},
    "autoencoder": {"epochs": 2, "hidden_dim": 8},
    "dqn": {"total_steps": 40, "hidden": [16, 16], "target_update_period": 20},
    "evaluation": {"min_bin_count": 5},
}


def write_config(path, data=SMALL, **top):
    path.write_text(json.dumps({**data, **top}))
    return path


def run_all(cfg_path, run_dir, extra=()):
    for stage in STAGES:
        assert main([stage, "--config", str(cfg_path), "--run_dir", str(run_dir), *extra]) == 0


def tree_hashes(root):
    return {str(p.relative_to(root)): file_sha256(p) for p in sorted(root.rglob("*"))
            if p.is_file() and p.parts[len(root.parts)] != "manifests"}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = write_config(base / "small.json")
    run_all(cfg, base / "run")
    return cfg, base / "run"


class TestConfig:
    def test_defaults_validate(self):
        cfg = RunConfig().validate()
        assert cfg.cluster.k == 1250 and cfg.sarsa.n_sweeps == 300

    def test_stage_seeds_are_offsets(self):
        cfg = RunConfig(seed=10)
        assert {k: cfg.stage_seed(k) for k in STAGE_SEED_OFFSETS} == {
            k: 10 + v for k, v in STAGE_SEED_OFFSETS.items()}
        assert cfg.dqn_config("latent").seed == 16 and cfg.cohort_config().seed == 10

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError, match="cohort.n_patient"):
            load_config(write_config(tmp_path / "c.json", {"cohort": {"n_patient": 3}}))

    def test_wrong_type(self, tmp_path):
        with pytest.raises(ConfigError, match="must be an integer"):
            load_config(write_config(tmp_path / "c.json", {"cluster": {"k": 2.5}}))
        with pytest.raises(ConfigError, match="must be a boolean"):
            load_config(write_config(tmp_path / "c.json", {"pipeline": {"chain": "yes"}}))

    def test_invalid_value(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write_config(tmp_path / "c.json", {"evaluation": {"split": "valid"}}))
        with pytest.raises(ConfigError):
            load_config(write_config(tmp_path / "c.json", {"dqn": {"states": ["pixels"]}}))

    def test_missing_and_malformed_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.json")
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(tmp_path / "bad.json")

    def test_override_beats_file_beats_default(self, tmp_path):
        path = write_config(tmp_path / "c.json", {"cluster": {"k": 40}})
        assert load_config(path).cluster.k == 40
        assert load_config(path).cluster.max_iter == 300
        assert load_config(path, {"cluster.k": 7}).cluster.k == 7

    def test_round_trip(self):
        cfg = RunConfig.from_dict(SMALL)
        assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_flat_fields_cover_nested_sections(self):
        names = dict(flat_fields())
        assert names["cohort.dynamics.drift"] == 0.18
        assert names["dqn.states"] == ["raw", "latent"]

    def test_set_dotted_rejects_non_section(self):
        data = {"seed": 1}
        with pytest.raises(ConfigError):
            set_dotted(data, "seed.x", 2)


class TestCli:
    def test_outputs_exist(self, pipeline):
        _, run = pipeline
        for rel in ("cohort/trajectories.csv", "sarsa/qtable.npz", "dqn/raw.npz", "dqn/latent.npz",
                    "evaluation/calibration.csv", "evaluation/policy_comparison.csv", "report/artifacts.json"):
            assert (run / rel).is_file(), rel
        header, rows = read_table(run / "evaluation/policy_comparison.csv")
        assert [r[0] for r in rows] == ["physician", "physician_logged_return", "normal_q_network",
                                       "autoencode_q_network"]

    def test_manifest_records_config_and_hashes(self, pipeline):
        _, run = pipeline
        m = load_json(run / "manifests/train-sarsa.json")
        assert m["config"]["seed"] == 3 and m["seeds"]["sarsa"] == 6
        assert m["outputs"]["sarsa/qtable.npz"] == file_sha256(run / "sarsa/qtable.npz")
        assert "discretize/train.npz" in m["inputs"]

    def test_histogram_tables_conserve_counts(self, pipeline):
        _, run = pipeline
        n_steps = sum(int(r[3]) for r in read_table(run / "evaluation/calibration.csv")[1])
        for name in ("physician", "normal_q_network"):
            _, rows = read_table(run / f"evaluation/action_histogram_{name}.csv")
            assert sum(int(r[2]) for r in rows) == n_steps and len(rows) == 25
        _, rows = read_table(run / "evaluation/dosage_diff_normal_q_network.csv")
        assert sum(int(r[2]) for r in rows if r[0] == "iv") == n_steps

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        cfg, run = pipeline
        run_all(cfg, tmp_path / "again")
        first, second = tree_hashes(run), tree_hashes(tmp_path / "again")
        first.pop("report/artifacts.json")
        second.pop("report/artifacts.json")
        assert first == second
        a = load_json(run / "report/artifacts.json")
        b = load_json(tmp_path / "again" / "report/artifacts.json")
        # the two reports differ only in the recorded run_dir
        a["config"].pop("run_dir")
        b["config"].pop("run_dir")
        assert a == b

    def test_missing_upstream_artifact(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json")
        assert main(["train-sarsa", "--config", str(cfg), "--run_dir", str(tmp_path / "r")]) == 3
        assert "discretize/train.npz" in capsys.readouterr().err

    def test_chain_runs_upstream(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        rc = main(["discretize", "--config", str(cfg), "--run_dir", str(tmp_path / "r"), "--pipeline.chain", "true"])
        assert rc == 0
        assert (tmp_path / "r/cohort/trajectories.csv").is_file()
        assert (tmp_path / "r/manifests/generate.json").is_file()

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {"cluster": {"k": "many"}})
        assert main(["generate", "--config", str(cfg)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_unknown_flag_is_rejected(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        with pytest.raises(SystemExit) as e:
            main(["generate", "--config", str(cfg), "--cohort.n_patient", "5"])
        assert e.value.code == 2

    def test_flag_overrides_file(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        assert main(["generate", "--config", str(cfg), "--run_dir", str(tmp_path / "r"),
                     "--cohort.n_patients", "15"]) == 0
        m = load_json(tmp_path / "r/manifests/generate.json")
        assert m["config"]["cohort"]["n_patients"] == 15

    def test_plots_are_opt_in(self, pipeline):
        cfg, run = pipeline
        assert not (run / "report/figures").exists()
        assert main(["report", "--config", str(cfg), "--run_dir", str(run), "--plots"]) == 0
        figs = sorted(p.name for p in (run / "report/figures").iterdir())
        assert "calibration.png" in figs and "latent_pca.png" in figs
