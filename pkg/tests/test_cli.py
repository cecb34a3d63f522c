import json

import pytest

from glucorec.cli import main


def write_json(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


SYNTH = {"days": 22, "seed": 4, "meals_per_day": 3.5, "noise_std": 1.0}

TINY_MODEL = {"blocks": 1, "fc_layers": 1, "state_size": 4, "fcn_width": 4,
              "dropout": 0.0}
TINY_TRAIN = {"batch_size": 128, "max_epochs": 2, "patience": 5,
              "model": TINY_MODEL}


class TestStages:
    def test_synth_preprocess_extract_stats(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "synth.json", SYNTH)
        raw = tmp_path / "raw.csv"
        assert main(["synth", "--config", cfg, "--out", str(raw),
                     "--subject-id", "s1"]) == 0
        pre = tmp_path / "pre.csv"
        report = tmp_path / "realign.json"
        assert main(["preprocess", "--in", str(raw), "--out", str(pre),
                     "--report", str(report)]) == 0
        assert json.loads(report.read_text())["meals_shifted"] >= 0

        out_dir = tmp_path / "examples"
        assert main(["extract", "--scenario", "carbs-all", "--class",
                     "inertial", "--in", str(pre), "--out", str(out_dir)]) == 0
        assert (out_dir / "carbs-all_inertial_train.examples.csv").exists()
        counts = json.loads(
            (out_dir / "carbs-all_inertial_counts.json").read_text())
        assert counts["total"] > 0

        assert main(["stats", "--in", str(pre), "--out",
                     str(tmp_path / "stats.json")]) == 0
        stats = json.loads((tmp_path / "stats.json").read_text())
        assert stats["carbs-all"]["total"]["count"] > 0

    def test_stage_outputs_idempotent(self, tmp_path):
        cfg = write_json(tmp_path / "synth.json", SYNTH)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["synth", "--config", cfg, "--out", str(a),
                     "--subject-id", "s1"]) == 0
        assert main(["synth", "--config", cfg, "--out", str(b),
                     "--subject-id", "s1"]) == 0
        assert a.read_bytes() == b.read_bytes()

        pa, pb = tmp_path / "pa.csv", tmp_path / "pb.csv"
        assert main(["preprocess", "--in", str(a), "--out", str(pa)]) == 0
        assert main(["preprocess", "--in", str(a), "--out", str(pb)]) == 0
        assert pa.read_bytes() == pb.read_bytes()

    def test_ingest_round_trip(self, tmp_path):
        cfg = write_json(tmp_path / "synth.json", SYNTH)
        raw = tmp_path / "raw.csv"
        main(["synth", "--config", cfg, "--out", str(raw),
              "--subject-id", "s1"])
        out = tmp_path / "converted.csv"
        assert main(["ingest", "--in", str(raw), "--format", "csv",
                     "--out", str(out), "--subject-id", "s1"]) == 0
        assert out.read_bytes() == raw.read_bytes()


class TestErrors:
    def test_invalid_scenario_exits_2(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as err:
            main(["extract", "--scenario", "exercise", "--class", "inertial",
                  "--in", "x.csv", "--out", str(tmp_path)])
        assert err.value.code == 2
        assert "carbs-all" in capsys.readouterr().err

    def test_eval_without_checkpoints_exits_3(self, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        code = main(["eval", "--checkpoints", str(empty), "--data",
                     str(tmp_path), "--report", str(tmp_path / "r.json")])
        assert code == 3
        err = json.loads(capsys.readouterr().err)
        assert err["error"] is True

    def test_pipeline_config_violations_enumerated(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "p.json", {
            "out_dir": str(tmp_path / "out"),
            "subjects": [SYNTH],
            "data_dir": "also-set",
            "scenarios": ["exercise"],
            "bogus_key": 1,
        })
        assert main(["pipeline", "--config", cfg]) == 2
        err = json.loads(capsys.readouterr().err)
        joined = " ".join(err["details"])
        assert "bogus_key" in joined
        assert "exercise" in joined
        assert "exactly one of" in joined

    def test_missing_input_file_exits_3(self, tmp_path, capsys):
        code = main(["preprocess", "--in", str(tmp_path / "nope.csv"),
                     "--out", str(tmp_path / "o.csv")])
        assert code == 3


class TestPipelineSmoke:
    def test_end_to_end_tiny_corpus(self, tmp_path, capsys):
        out_dir = tmp_path / "run"
        cfg = write_json(tmp_path / "pipeline.json", {
            "out_dir": str(out_dir),
            "subjects": [
                {**SYNTH, "seed": 11, "subject_id": "a"},
                {**SYNTH, "seed": 12, "subject_id": "b"},
            ],
            "scenarios": ["carbs-all"],
            "example_classes": ["inertial"],
            "architectures": ["lstm"],
            "seeds": [0, 1],
            "train": TINY_TRAIN,
        })
        assert main(["pipeline", "--config", cfg]) == 0
        report = json.loads((out_dir / "eval_report.json").read_text())
        block = report["carbs-all/inertial/lstm"]
        assert block["mean_score"]["rmse"] > 0
        assert set(block["baseline_scores"]) == {"global", "tod"}
        assert len(block["rows"]) == 4  # 2 subjects x 2 seeds
        ckpts = list((out_dir / "checkpoints"
                      / "carbs-all_inertial_lstm").glob("*.ckpt"))
        assert len(ckpts) == 4

        eval_report = tmp_path / "eval2.json"
        assert main(["eval", "--checkpoints",
                     str(out_dir / "checkpoints" / "carbs-all_inertial_lstm"),
                     "--data", str(out_dir / "preprocessed"),
                     "--report", str(eval_report)]) == 0
        again = json.loads(eval_report.read_text())
        assert again["reports"][0]["mean_score"]["rmse"] == pytest.approx(
            block["mean_score"]["rmse"])
