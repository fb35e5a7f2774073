import json

import pytest
import yaml

from reclaimnet.cli import main, parse_tiny_spec
from reclaimnet.config import (
    ConfigError,
    DEFAULT_TEXT_BACKBONES,
    config_from_dict,
    load_config,
)
from reclaimnet.corpus import load_corpus
from reclaimnet.synthetic import generate_corpus, write_corpus


class TestConfig:
    def test_defaults(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("language: it\n")
        config = load_config(path)
        assert config.language == "IT"
        assert config.split.ratios == (0.70, 0.15, 0.15)
        assert config.training.learning_rate == 2e-5
        assert config.training.joint_finetune_learning_rate == 5e-6
        assert config.training.batch_size == 8
        assert config.training.weight_decay == 0.1
        assert len(config.training.seeds) == 5

    def test_default_backbones_per_language(self):
        config = config_from_dict({"language": "it"})
        assert config.encoders.backbone_for("text", "IT") == DEFAULT_TEXT_BACKBONES["IT"]
        assert config.encoders.backbone_for("user", "ES") == DEFAULT_TEXT_BACKBONES["ES"]
        override = config_from_dict({"encoders": {"text_backbone": "tiny:hidden=16"}})
        assert override.encoders.backbone_for("text", "IT") == "tiny:hidden=16"

    @pytest.mark.parametrize(
        "data,fragment",
        [
            ({"paths": {"corups": "x"}}, "corups"),
            ({"nonsense": 1}, "nonsense"),
            ({"training": {"learning_rte": 1.0}}, "learning_rte"),
            ({"llm": {"api_key": "inline"}}, "api_key"),
            ({"language": "fr"}, "FR"),
        ],
    )
    def test_unknown_or_bad_keys_rejected(self, data, fragment):
        with pytest.raises(ConfigError, match=fragment):
            config_from_dict(data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("language: [unclosed\n")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_config(path)


class TestTinySpec:
    def test_defaults_and_overrides(self):
        assert parse_tiny_spec("tiny") == {"hidden": 32, "layers": 2}
        assert parse_tiny_spec("tiny:hidden=16,layers=1") == {"hidden": 16, "layers": 1}

    @pytest.mark.parametrize("spec", ["tiny:depth=2", "tiny:hidden=", "tiny:hidden=abc"])
    def test_bad_specs(self, spec):
        with pytest.raises(ConfigError):
            parse_tiny_spec(spec)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Corpus file + config for a small offline CLI run."""
    root = tmp_path_factory.mktemp("cli")
    corpus_path = root / "corpus.jsonl"
    write_corpus(generate_corpus(size=240, seed=17), corpus_path)
    run_dir = root / "runs" / "exp"
    config = {
        "language": "it",
        "paths": {"corpus": str(corpus_path), "run_dir": str(run_dir)},
        "split": {"ratios": [0.7, 0.15, 0.15], "seed": 5},
        "llm": {"mock": True},
        "encoders": {"text_backbone": "tiny:hidden=32,layers=2", "user_backbone": "tiny:hidden=32,layers=2", "max_sequence_length": 48},
        "training": {
            "learning_rate": 1.0e-3,
            "joint_finetune_learning_rate": 2.0e-4,
            "batch_size": 16,
            "epochs_per_stage": 4,
            "early_stopping_patience": 2,
            "seeds": [0, 1],
        },
    }
    config_path = root / "config.yaml"
    config_path.write_text(yaml.safe_dump(config))
    return {"root": root, "config": str(config_path), "run_dir": run_dir, "corpus": corpus_path}


class TestCLIFlow:
    def test_01_split(self, workspace, capsys):
        assert main(["split", "--config", workspace["config"]]) == 0
        manifest = workspace["run_dir"] / "split_manifest.json"
        assert manifest.exists()
        first = manifest.read_bytes()
        assert main(["split", "--config", workspace["config"]]) == 0
        assert manifest.read_bytes() == first  # rerun is byte-identical
        out = capsys.readouterr().out
        assert "train" in out and "NON_RECLAMATORY" in out

    def test_02_annotate_mock_offline_and_cached(self, workspace, capsys):
        assert main(["annotate", "--config", workspace["config"]]) == 0
        out_first = capsys.readouterr().out
        assert "unresolved" in out_first
        proxy = workspace["run_dir"] / "proxy_labels.jsonl"
        assert proxy.exists()
        rows = [json.loads(line) for line in proxy.read_text().splitlines()]
        assert len(rows) == 240

        assert main(["annotate", "--config", workspace["config"]]) == 0
        out_second = capsys.readouterr().out
        assert "0 client calls" in out_second  # warm cache

        corpus = load_corpus(workspace["corpus"])
        marker = {inst.id: int("pride" in inst.bio) for inst in corpus}
        assert all(row["affiliated"] == marker[row["instance_id"]] for row in rows)

    def test_03_train_all(self, workspace, capsys):
        assert main(["train", "--config", workspace["config"], "--stage", "all"]) == 0
        seed_dir = workspace["run_dir"] / "seed_0"
        for artifact in (
            "baseline/config.json",
            "user/config.json",
            "dual/config.json",
            "baseline_report.json",
            "user_report.json",
            "dual_report.json",
            "baseline_validation_predictions.jsonl",
            "baseline_test_predictions.jsonl",
            "dual_validation_predictions.jsonl",
            "dual_test_predictions.jsonl",
        ):
            assert (seed_dir / artifact).exists(), artifact
        assert (workspace["run_dir"] / "config.yaml").exists()
        assert "seed 0" in capsys.readouterr().out

    def test_04_eval_dual_vs_baseline(self, workspace, capsys):
        run = str(workspace["run_dir"])
        assert main(["eval", "--config", workspace["config"], f"{run}:dual", f"{run}:baseline"]) == 0
        out = capsys.readouterr().out
        assert "macro_f1" in out and "p-value" in out
        report_path = workspace["run_dir"] / "eval_dual_validation.json"
        payload = json.loads(report_path.read_text())
        assert payload["compared_to"].endswith("baseline")
        assert 0.0 <= payload["p_value"] <= 1.0

    def test_05_eval_run_against_itself_p_one(self, workspace, tmp_path, capsys):
        run = str(workspace["run_dir"])
        out_path = tmp_path / "self_eval.json"
        assert (
            main(
                [
                    "eval",
                    "--config",
                    workspace["config"],
                    f"{run}:dual",
                    f"{run}:dual",
                    "--out",
                    str(out_path),
                ]
            )
            == 0
        )
        assert json.loads(out_path.read_text())["p_value"] == 1.0

    def test_06_report_errors(self, workspace, capsys):
        run = str(workspace["run_dir"])
        assert main(["report", "--config", workspace["config"], f"{run}:dual"]) == 0
        out = capsys.readouterr().out
        assert "misclassified" in out
        errors_path = workspace["run_dir"] / "seed_0" / "dual_validation_errors.jsonl"
        assert errors_path.exists()

    def test_07_eval_metrics_match_recomputation(self, workspace):
        run_dir = workspace["run_dir"]
        payload = json.loads((run_dir / "eval_dual_validation.json").read_text())
        rows = [
            json.loads(line)
            for line in (run_dir / "seed_0" / "dual_validation_predictions.jsonl").read_text().splitlines()
        ]
        from reclaimnet.evaluation import compute_metrics

        recomputed = compute_metrics([(r["gold"], r["pred"]) for r in rows])
        assert payload["per_seed"]["0"]["macro_f1"] == pytest.approx(recomputed.macro_f1, abs=1e-12)


class TestCLIErrors:
    def test_usage_error_exit_code_1(self, workspace):
        with pytest.raises(SystemExit) as exc_info:
            main(["train", "--config", workspace["config"], "--stage", "bogus"])
        assert exc_info.value.code == 1
        with pytest.raises(SystemExit) as exc_info:
            main(["no-such-command", "--config", workspace["config"]])
        assert exc_info.value.code == 1

    def test_config_error_exit_code_1(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("training:\n  learning_rte: 1.0\n")
        assert main(["split", "--config", str(bad)]) == 1

    def test_missing_corpus_exit_code_2(self, tmp_path):
        config = tmp_path / "config.yaml"
        config.write_text(
            yaml.safe_dump({"paths": {"corpus": str(tmp_path / "missing.jsonl"), "run_dir": str(tmp_path / "r")}})
        )
        assert main(["split", "--config", str(config)]) == 2

    def test_dual_stage_without_checkpoints_exit_code_3(self, tmp_path, capsys):
        corpus_path = tmp_path / "corpus.jsonl"
        write_corpus(generate_corpus(size=60, seed=3), corpus_path)
        run_dir = tmp_path / "fresh_run"
        config_path = tmp_path / "config.yaml"
        config_path.write_text(
            yaml.safe_dump(
                {
                    "paths": {"corpus": str(corpus_path), "run_dir": str(run_dir)},
                    "encoders": {"text_backbone": "tiny", "user_backbone": "tiny"},
                    "training": {
                        "learning_rate": 1.0e-3,
                        "joint_finetune_learning_rate": 2.0e-4,
                        "epochs_per_stage": 1,
                        "seeds": [0],
                    },
                }
            )
        )
        assert main(["split", "--config", str(config_path)]) == 0
        assert main(["train", "--config", str(config_path), "--stage", "dual"]) == 3
        err_out = capsys.readouterr().out
        assert "user-encoder checkpoint" in err_out

    def test_train_without_manifest_exit_code_2(self, tmp_path):
        corpus_path = tmp_path / "corpus.jsonl"
        write_corpus(generate_corpus(size=60, seed=3), corpus_path)
        config_path = tmp_path / "config.yaml"
        config_path.write_text(
            yaml.safe_dump(
                {
                    "paths": {"corpus": str(corpus_path), "run_dir": str(tmp_path / "r")},
                    "encoders": {"text_backbone": "tiny", "user_backbone": "tiny"},
                }
            )
        )
        assert main(["train", "--config", str(config_path)]) == 2

    def test_annotate_without_credentials_exit_code_1(self, tmp_path, monkeypatch):
        corpus_path = tmp_path / "corpus.jsonl"
        write_corpus(generate_corpus(size=10, seed=3), corpus_path)
        config_path = tmp_path / "config.yaml"
        config_path.write_text(
            yaml.safe_dump(
                {
                    "paths": {"corpus": str(corpus_path), "run_dir": str(tmp_path / "r")},
                    "llm": {"base_url": "https://api.example.com", "model": "m"},
                }
            )
        )
        monkeypatch.delenv("LLM_API_KEY", raising=False)
        assert main(["annotate", "--config", str(config_path)]) == 1


class TestParallelTraining:
    def test_parallel_seed_workers(self, tmp_path):
        corpus_path = tmp_path / "corpus.jsonl"
        write_corpus(generate_corpus(size=80, seed=29), corpus_path)
        run_dir = tmp_path / "runs" / "par"
        config_path = tmp_path / "config.yaml"
        config_path.write_text(
            yaml.safe_dump(
                {
                    "paths": {"corpus": str(corpus_path), "run_dir": str(run_dir)},
                    "encoders": {"text_backbone": "tiny:hidden=16,layers=1", "user_backbone": "tiny:hidden=16,layers=1", "max_sequence_length": 48},
                    "training": {
                        "learning_rate": 1.0e-3,
                        "joint_finetune_learning_rate": 2.0e-4,
                        "epochs_per_stage": 1,
                        "early_stopping_patience": 0,
                        "seeds": [0, 1],
                    },
                }
            )
        )
        assert main(["split", "--config", str(config_path)]) == 0
        assert main(["train", "--config", str(config_path), "--stage", "baseline", "--parallel"]) == 0
        for seed in (0, 1):
            assert (run_dir / f"seed_{seed}" / "baseline" / "config.json").exists()
