import json

import pytest

import copl
from copl.cli import main
from copl.harness import ExperimentConfig, MoleSpec, UnseenSpec
from copl.jsonio import dump_file
from copl.mole import RewardTrainConfig


@pytest.fixture
def config_path(tmp_path):
    cfg = ExperimentConfig(
        master_seed=777,
        data=copl.GeneratorConfig(
            num_users=40, num_items=150, num_dims=2, profile=copl.GroupSpec([1, 1]),
            regime=copl.Regime("ALL", 5), controversial_only=True,
            test_pairs_per_user=4, seed=0,
        ),
        gcf=copl.GcfHyperparams(d=8, layers=2, lam=1e-6, lr=1e-2, epochs=40,
                                batch_size=1024, warmup_ratio=0.1),
        mole=MoleSpec(num_layers=3, width=16, num_experts=4, rank=2, gate_hidden=16),
        reward=RewardTrainConfig(lr=2e-3, epochs=8, batch_size=32),
        adapt=copl.AdaptConfig(),
        unseen=UnseenSpec(count=4, annotations_each=5, test_pairs_each=6),
    )
    path = tmp_path / "config.json"
    dump_file(cfg.to_dict(), path)
    return path


def run(args):
    return main([str(a) for a in args])


class TestUsage:
    def test_unknown_flag_exits_one(self, config_path, tmp_path, capsys):
        code = run(["generate", "--config", config_path, "--out", tmp_path, "--bogus"])
        assert code == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_subcommand_exits_one(self, config_path, tmp_path):
        assert run(["frobnicate", "--config", config_path, "--out", tmp_path]) == 1

    def test_missing_config_flag_exits_one(self, tmp_path):
        assert run(["generate", "--out", tmp_path]) == 1

    def test_nonexistent_config_exits_two(self, tmp_path, capsys):
        code = run(["generate", "--config", tmp_path / "nope.json", "--out", tmp_path])
        assert code == 2
        assert "config" in capsys.readouterr().err


class TestStages:
    def test_generate_writes_dataset_and_manifest(self, config_path, tmp_path):
        out = tmp_path / "run"
        assert run(["generate", "--config", config_path, "--out", out]) == 0
        assert (out / "dataset.json").exists()
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["subcommand"] == "generate"
        assert manifest["master_seed"] == 777
        assert manifest["seed_overridden"] is False
        assert "wall_time_seconds" in manifest and "versions" in manifest

    def test_eval_before_training_exits_two_naming_artifact(self, config_path, tmp_path, capsys):
        out = tmp_path / "run"
        assert run(["generate", "--config", config_path, "--out", out]) == 0
        code = run(["eval", "--config", config_path, "--out", out])
        assert code == 2
        err = capsys.readouterr().err
        assert "gcf_model.json" in err

    def test_full_stage_chain(self, config_path, tmp_path):
        out = tmp_path / "run"
        for sub in ("generate", "train-gcf", "train-reward", "adapt", "eval", "export"):
            assert run([sub, "--config", config_path, "--out", out]) == 0, sub
        for artifact in ("dataset.json", "gcf_model.json", "reward_model.json",
                         "unseen_users.json", "report.json", "embeddings.csv",
                         "expert_allocation.csv"):
            assert (out / artifact).exists(), artifact
        report = json.loads((out / "report.json").read_text())
        assert 0.0 <= report["seen_accuracy"] <= 1.0
        assert "unseen_accuracy" in report

    def test_generate_idempotent_byte_identical(self, config_path, tmp_path):
        out = tmp_path / "run"
        assert run(["generate", "--config", config_path, "--out", out]) == 0
        first = (out / "dataset.json").read_bytes()
        assert run(["generate", "--config", config_path, "--out", out]) == 0
        assert (out / "dataset.json").read_bytes() == first

    def test_seed_override_recorded_and_changes_output(self, config_path, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert run(["generate", "--config", config_path, "--out", out_a, "--seed", "1234"]) == 0
        assert run(["generate", "--config", config_path, "--out", out_b]) == 0
        manifest = json.loads((out_a / "run_manifest.json").read_text())
        assert manifest["master_seed"] == 1234
        assert manifest["seed_overridden"] is True
        assert (out_a / "dataset.json").read_bytes() != (out_b / "dataset.json").read_bytes()


class TestSweep:
    def test_three_ratios_three_reports(self, config_path, tmp_path):
        out = tmp_path / "sweep"
        code = run(["sweep", "--config", config_path, "--out", out, "--ratios", "1:9,5:5,9:1"])
        assert code == 0
        for name in ("ratio_1_9", "ratio_5_5", "ratio_9_1"):
            assert (out / name / "report.json").exists()
        summary = json.loads((out / "sweep_summary.json").read_text())
        assert len(summary["ratios"]) == 3

    def test_bad_ratio_exits_one(self, config_path, tmp_path):
        assert run(["sweep", "--config", config_path, "--out", tmp_path, "--ratios", "1:x"]) == 1
        assert run(["sweep", "--config", config_path, "--out", tmp_path, "--ratios", "5"]) == 1

    def test_parallel_jobs_match_sequential(self, config_path, tmp_path):
        seq = tmp_path / "seq"
        par = tmp_path / "par"
        assert run(["sweep", "--config", config_path, "--out", seq, "--ratios", "1:3,3:1"]) == 0
        assert run(["sweep", "--config", config_path, "--out", par, "--ratios", "1:3,3:1",
                    "--jobs", "2"]) == 0
        for name in ("ratio_1_3", "ratio_3_1"):
            a = (seq / name / "report.json").read_bytes()
            b = (par / name / "report.json").read_bytes()
            assert a == b
