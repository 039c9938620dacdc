"""End-to-end command-line runs, in process."""

import json

import pytest

from protoadapt.cli import main
from protoadapt.featurepack import save_feature_pack

from conftest import tiny_pack


@pytest.fixture(scope="module")
def pack_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("packs") / "tiny.fpk"
    save_feature_pack(tiny_pack(), path)
    return str(path)


@pytest.fixture(scope="module")
def single_class_pack_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("packs") / "single.fpk"
    save_feature_pack(tiny_pack(n_classes=1, per_class=4), path)
    return str(path)


FAST = ["--lr", "0.01", "--epochs", "2", "--k", "2", "--n-bg", "4"]


class TestBasics:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["--version"])
        assert e.value.code == 0
        assert "protoadapt" in capsys.readouterr().out

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 2

    def test_missing_file_is_runtime_error(self, capsys):
        assert main(["pack", "validate", "/nonexistent/file.fpk"]) == 1
        assert "error:" in capsys.readouterr().err


class TestPackValidate:
    def test_valid_pack_reports_ok(self, pack_file, capsys):
        assert main(["pack", "validate", pack_file]) == 0
        out = capsys.readouterr().out
        assert out.strip().endswith("ok")
        assert "3 classes" in out or "object" in out

    def test_garbage_file_fails(self, tmp_path, capsys):
        bad = tmp_path / "bad.fpk"
        bad.write_bytes(b"definitely not a pack")
        assert main(["pack", "validate", str(bad)]) == 1
        assert "error:" in capsys.readouterr().err


class TestEpisodeSample:
    def test_prints_summary_json(self, pack_file, capsys):
        assert main(["episode", "sample", "--pack", pack_file, "--n", "2", "--k", "2", "--n-bg", "3"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["n_way"] == 2
        assert payload["k_shot"] == 2
        assert payload["background_count"] == 3
        assert len(payload["fingerprint"]) == 16

    def test_writes_summary_and_manifest(self, pack_file, tmp_path, capsys):
        out = tmp_path / "episode.json"
        assert main(
            ["episode", "sample", "--pack", pack_file, "--n", "2", "--k", "2", "--n-bg", "3", "--out", str(out)]
        ) == 0
        assert json.loads(out.read_text())["n_way"] == 2
        manifest = json.loads((tmp_path / "episode.json.manifest.json").read_text())
        assert manifest["command"] == "episode sample"
        assert pack_file in manifest["inputs"]

    def test_class_selection_by_name(self, pack_file, capsys):
        assert main(
            ["episode", "sample", "--pack", pack_file, "--classes", "class-2,class-0", "--k", "2", "--n-bg", "2"]
        ) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["classes"] == ["class-2", "class-0"]

    def test_unknown_class_fails(self, pack_file, capsys):
        assert main(
            ["episode", "sample", "--pack", pack_file, "--classes", "nope", "--k", "2", "--n-bg", "2"]
        ) == 1
        assert "nope" in capsys.readouterr().err

    def test_oversized_k_fails_cleanly(self, pack_file, capsys):
        assert main(["episode", "sample", "--pack", pack_file, "--k", "99", "--n-bg", "2"]) == 1
        assert "error:" in capsys.readouterr().err


class TestSynth:
    def test_generates_pack_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "bench.fpk"
        args = ["synth", "--out", str(out), "--n-classes", "3", "--dim", "8", "--per-class", "4", "--n-bg", "5"]
        assert main(args) == 0
        assert out.exists()
        manifest = json.loads((tmp_path / "bench.fpk.manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["config"]["n_classes"] == 3
        capsys.readouterr()
        assert main(["pack", "validate", str(out)]) == 0
        assert capsys.readouterr().out.strip().endswith("ok")

    def test_deterministic_output(self, tmp_path):
        a, b = tmp_path / "a.fpk", tmp_path / "b.fpk"
        args = ["--n-classes", "3", "--dim", "8", "--per-class", "4", "--n-bg", "5", "--seed", "3"]
        assert main(["synth", "--out", str(a)] + args) == 0
        assert main(["synth", "--out", str(b)] + args) == 0
        assert a.read_bytes() == b.read_bytes()


class TestFinetune:
    def test_writes_artifacts_and_figures(self, pack_file, tmp_path, capsys):
        out_dir = tmp_path / "run"
        assert main(["finetune", "--pack", pack_file, *FAST, "--out-dir", str(out_dir)]) == 0
        for name in (
            "checkpoint.pac",
            "train_log.jsonl",
            "manifest.json",
            "loss_curves.png",
            "attention_weights.png",
            "prototype_similarity.png",
        ):
            assert (out_dir / name).exists(), name
        rows = [json.loads(line) for line in (out_dir / "train_log.jsonl").read_text().splitlines()]
        assert len(rows) == 2
        assert {"epoch", "total", "loc", "cls"} <= set(rows[0])
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["config"]["lr"] == 0.01
        assert "finetuned 2 epochs" in capsys.readouterr().out

    def test_no_figures_flag(self, pack_file, tmp_path):
        out_dir = tmp_path / "run"
        assert main(["finetune", "--pack", pack_file, *FAST, "--no-figures", "--out-dir", str(out_dir)]) == 0
        assert (out_dir / "checkpoint.pac").exists()
        assert not list(out_dir.glob("*.png"))

    def test_checkpoints_reproduce_byte_identically(self, pack_file, tmp_path):
        dirs = [tmp_path / "a", tmp_path / "b"]
        for d in dirs:
            assert main(["finetune", "--pack", pack_file, *FAST, "--no-figures", "--out-dir", str(d)]) == 0
        assert (dirs[0] / "checkpoint.pac").read_bytes() == (dirs[1] / "checkpoint.pac").read_bytes()

    def test_single_class_episode_drops_domain_module(self, single_class_pack_file, tmp_path, capsys):
        out_dir = tmp_path / "run"
        args = ["finetune", "--pack", single_class_pack_file, "--n", "1", *FAST, "--no-figures", "--out-dir", str(out_dir)]
        assert main(args) == 0
        assert "domain prompter disabled" in capsys.readouterr().err

    def test_bad_module_name_fails(self, pack_file, tmp_path, capsys):
        args = ["finetune", "--pack", pack_file, *FAST, "--modules", "warp", "--out-dir", str(tmp_path / "x")]
        assert main(args) == 1
        assert "warp" in capsys.readouterr().err

    def test_config_file_round_trip(self, pack_file, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"lr": 0.01, "epochs": 2, "n_background": 4}))
        out_dir = tmp_path / "run"
        args = ["finetune", "--pack", pack_file, "--k", "2", "--config", str(config), "--no-figures", "--out-dir", str(out_dir)]
        assert main(args) == 0
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["config"]["epochs"] == 2
        assert str(config) in manifest["inputs"]

    def test_unknown_config_key_fails(self, pack_file, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"learning_rate": 0.1}))
        args = ["finetune", "--pack", pack_file, "--config", str(config), "--out-dir", str(tmp_path / "x")]
        assert main(args) == 1
        assert "learning_rate" in capsys.readouterr().err


class TestEval:
    def test_frozen_stage_report(self, pack_file, tmp_path, capsys):
        out_dir = tmp_path / "eval"
        args = ["eval", "--pack", pack_file, *FAST, "--stage", "frozen", "--emit-csv", "--out-dir", str(out_dir)]
        assert main(args) == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert report["stage"] == "frozen"
        assert 0.0 <= report["accuracy"] <= 1.0
        assert (out_dir / "report.txt").exists()
        assert (out_dir / "report.csv").exists()
        assert not (out_dir / "train_log.jsonl").exists()
        table = capsys.readouterr().out
        assert "frozen" in table and "accuracy" in table

    def test_full_stage_writes_log_and_curves(self, pack_file, tmp_path):
        out_dir = tmp_path / "eval"
        args = ["eval", "--pack", pack_file, *FAST, "--stage", "full", "--out-dir", str(out_dir)]
        assert main(args) == 0
        assert (out_dir / "train_log.jsonl").exists()
        assert (out_dir / "loss_curves.png").exists()

    def test_single_iou_threshold(self, pack_file, tmp_path):
        out_dir = tmp_path / "eval"
        args = ["eval", "--pack", pack_file, *FAST, "--stage", "frozen", "--iou-threshold", "0.5", "--out-dir", str(out_dir)]
        assert main(args) == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert list(report["map_by_threshold"]) == ["0.50"]

    def test_no_detection_skips_map(self, pack_file, tmp_path):
        out_dir = tmp_path / "eval"
        args = ["eval", "--pack", pack_file, *FAST, "--stage", "frozen", "--no-detection", "--out-dir", str(out_dir)]
        assert main(args) == 0
        assert json.loads((out_dir / "report.json").read_text())["map"] is None


class TestAblate:
    def test_writes_stage_reports_and_figure(self, pack_file, tmp_path, capsys):
        out_dir = tmp_path / "ablate"
        args = [
            "ablate", "--pack", pack_file, *FAST,
            "--stages", "frozen,FT-heads", "--emit-csv", "--out-dir", str(out_dir),
        ]
        assert main(args) == 0
        payload = json.loads((out_dir / "ablation.json").read_text())
        assert [r["stage"] for r in payload["stages"]] == ["frozen", "FT-heads"]
        assert (out_dir / "ablation.txt").exists()
        assert (out_dir / "ablation.csv").exists()
        assert (out_dir / "stage_scores.png").exists()
        table = capsys.readouterr().out
        assert "FT-heads" in table


class TestMetrics:
    def test_icv_multi_class(self, tmp_path, capsys):
        path = tmp_path / "text.fpk"
        save_feature_pack(tiny_pack(n_classes=3, per_class=1, n_background=0, with_boxes=False), path)
        out = tmp_path / "icv.json"
        assert main(["metrics", "icv", "--features", str(path), "--out", str(out)]) == 0
        line = capsys.readouterr().out.strip()
        assert any(level in line for level in ("small", "medium", "large"))
        payload = json.loads(out.read_text())
        assert payload["icv_value"] is not None

    def test_icv_single_class_not_applicable(self, tmp_path, capsys):
        path = tmp_path / "single.fpk"
        save_feature_pack(tiny_pack(n_classes=1, per_class=1, n_background=0, with_boxes=False), path)
        assert main(["metrics", "icv", "--features", str(path)]) == 0
        assert "not applicable" in capsys.readouterr().out

    def test_ib_single_survey(self, tmp_path, capsys):
        survey = tmp_path / "survey.json"
        survey.write_text(json.dumps({"slight": 0.17, "moderate": 0.44, "significant": 0.39}))
        out = tmp_path / "ib.json"
        assert main(["metrics", "ib", "--survey", str(survey), "--out", str(out)]) == 0
        line = capsys.readouterr().out
        assert "3.220 moderate" in line
        payload = json.loads(out.read_text())
        assert payload["datasets"][0]["ib_value"] == pytest.approx(3.22)

    def test_ib_multi_dataset_survey(self, tmp_path, capsys):
        survey = tmp_path / "survey.json"
        survey.write_text(
            json.dumps(
                {
                    "uodd": {"slight": 0.0, "moderate": 0.0, "significant": 1.0},
                    "artaxor": {"slight": 1.0, "moderate": 0.0, "significant": 0.0},
                }
            )
        )
        assert main(["metrics", "ib", "--survey", str(survey)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines == ["artaxor: 0.000 slight", "uodd: 6.000 significant"]

    def test_ib_invalid_shares_fail(self, tmp_path, capsys):
        survey = tmp_path / "survey.json"
        survey.write_text(json.dumps({"slight": 0.9, "moderate": 0.9, "significant": 0.9}))
        assert main(["metrics", "ib", "--survey", str(survey)]) == 1
        assert "error:" in capsys.readouterr().err


class TestGradcheck:
    def test_single_loss_passes(self, capsys):
        assert main(["gradcheck", "--loss", "cls", "--count", "2"]) == 0
        out = capsys.readouterr().out
        assert "cls" in out and "ok" in out and "FAIL" not in out

    def test_two_losses(self, capsys):
        assert main(["gradcheck", "--loss", "domain", "--loss", "proto", "--count", "2"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2
