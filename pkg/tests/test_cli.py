"""Command-line surface: flags, config files, exit codes, outputs."""

import json

import pytest

from headline_humor import cli
from helpers import (
    synth_task1,
    synth_task2,
    write_embedding_file,
    write_task1_csv,
    write_task2_csv,
)


@pytest.fixture()
def workspace(tmp_path):
    vectors = write_embedding_file(tmp_path / "vectors.txt")
    train_csv = write_task1_csv(tmp_path / "train.csv", synth_task1(16, seed=60))
    dev_csv = write_task1_csv(tmp_path / "dev.csv", synth_task1(8, seed=61))
    test_csv = write_task1_csv(tmp_path / "test.csv", synth_task1(8, seed=62))
    return {
        "root": tmp_path,
        "vectors": vectors,
        "train": train_csv,
        "dev": dev_csv,
        "test": test_csv,
    }


def train_args(ws, out, extra=()):
    return [
        "train",
        "--subtask", "1",
        "--encoder", "table",
        "--transfer", "freeze",
        "--feature", "context",
        "--embeddings", str(ws["vectors"]),
        "--embedding-dim", "16",
        "--epochs", "1",
        "--train", str(ws["train"]),
        "--dev", str(ws["dev"]),
        "--out", str(out),
        *extra,
    ]


class TestTrainCommand:
    def test_train_writes_checkpoint_and_reports(self, workspace, capsys):
        out = workspace["root"] / "run"
        assert cli.main(train_args(workspace, out)) == 0
        captured = capsys.readouterr().out
        assert "best rmse" in captured
        assert (out / "checkpoint_best.pt").exists()
        assert (out / "run.json").exists()

    def test_config_file_with_flag_override(self, workspace, capsys):
        config_path = workspace["root"] / "config.json"
        config_path.write_text(
            json.dumps({"lr": 1e-3, "batch_size": 8, "seed": 3}), encoding="utf-8"
        )
        out = workspace["root"] / "run2"
        code = cli.main(
            train_args(workspace, out, extra=["--config", str(config_path), "--lr", "0.0003"])
        )
        assert code == 0
        run = json.loads((out / "run.json").read_text())
        assert run["config"]["learning_rate"] == pytest.approx(3e-4)  # flag wins
        assert run["config"]["batch_size"] == 8  # file value survives
        assert run["config"]["seed"] == 3

    def test_extra_split_appended_via_flag(self, workspace, capsys):
        extra_csv = write_task1_csv(
            workspace["root"] / "extra.csv", synth_task1(6, seed=67)
        )
        out = workspace["root"] / "run-extra"
        code = cli.main(
            train_args(
                workspace, out, extra=["--extra", "--extra-csv", str(extra_csv)]
            )
        )
        assert code == 0
        run = json.loads((out / "run.json").read_text())
        assert run["config"]["use_extra"] is True

    def test_extra_flag_without_path_fails(self, workspace, capsys):
        out = workspace["root"] / "run-extra-bad"
        assert cli.main(train_args(workspace, out, extra=["--extra"])) == 1
        assert "extra-csv" in capsys.readouterr().err

    def test_unknown_config_key_fails_cleanly(self, workspace, capsys):
        config_path = workspace["root"] / "bad.json"
        config_path.write_text(json.dumps({"learning": 1}), encoding="utf-8")
        out = workspace["root"] / "run3"
        code = cli.main(train_args(workspace, out, extra=["--config", str(config_path)]))
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_file_exits_nonzero_with_diagnostic(self, workspace, capsys):
        args = train_args(workspace, workspace["root"] / "run4")
        args[args.index(str(workspace["train"]))] = str(workspace["root"] / "nope.csv")
        assert cli.main(args) == 1
        assert "error:" in capsys.readouterr().err


class TestEvaluatePredictReport:
    @pytest.fixture()
    def checkpoint(self, workspace):
        out = workspace["root"] / "run"
        assert cli.main(train_args(workspace, out)) == 0
        return out / "checkpoint_best.pt"

    def test_evaluate_prints_and_writes(self, workspace, checkpoint, capsys):
        report_path = workspace["root"] / "report.txt"
        code = cli.main(
            [
                "evaluate",
                "--checkpoint", str(checkpoint),
                "--data", str(workspace["test"]),
                "--out", str(report_path),
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "rmse" in out
        assert report_path.exists()
        parsed = json.loads(report_path.with_suffix(".json").read_text())
        assert parsed["subtask"] == 1

    def test_predict_then_report_single_system(self, workspace, checkpoint, capsys):
        preds = workspace["root"] / "preds.csv"
        assert cli.main(
            ["predict", "--checkpoint", str(checkpoint), "--input", str(workspace["test"]), "--out", str(preds)]
        ) == 0
        assert preds.exists()
        code = cli.main(
            [
                "report",
                "--subtask", "1",
                "--gold", str(workspace["test"]),
                "--pred", f"model={preds}",
            ]
        )
        assert code == 0
        assert "rmse" in capsys.readouterr().out

    def test_report_two_systems_renders_correlation(self, workspace, checkpoint, capsys):
        preds = workspace["root"] / "preds.csv"
        cli.main(
            ["predict", "--checkpoint", str(checkpoint), "--input", str(workspace["test"]), "--out", str(preds)]
        )
        capsys.readouterr()
        out_path = workspace["root"] / "correlations.txt"
        code = cli.main(
            [
                "report",
                "--subtask", "1",
                "--gold", str(workspace["test"]),
                "--pred", f"a={preds}",
                "--pred", f"b={preds}",
                "--out", str(out_path),
            ]
        )
        assert code == 0
        text = capsys.readouterr().out
        assert "correlation" in text
        assert "Human" in text
        assert out_path.exists()

    def test_task2_train_and_evaluate_flow(self, workspace, capsys):
        pairs_train = write_task2_csv(
            workspace["root"] / "p_train.csv", synth_task2(16, seed=68)
        )
        pairs_dev = write_task2_csv(
            workspace["root"] / "p_dev.csv", synth_task2(8, seed=69)
        )
        out = workspace["root"] / "run-task2"
        code = cli.main(
            [
                "train",
                "--subtask", "2",
                "--encoder", "table",
                "--embeddings", str(workspace["vectors"]),
                "--embedding-dim", "16",
                "--epochs", "1",
                "--train", str(pairs_train),
                "--dev", str(pairs_dev),
                "--out", str(out),
            ]
        )
        assert code == 0
        assert "best accuracy" in capsys.readouterr().out
        code = cli.main(
            [
                "evaluate",
                "--checkpoint", str(out / "checkpoint_best.pt"),
                "--data", str(pairs_dev),
            ]
        )
        assert code == 0
        assert "accuracy" in capsys.readouterr().out

    def test_report_subtask2(self, workspace, capsys):
        pairs = synth_task2(10, seed=63)
        gold = write_task2_csv(workspace["root"] / "pairs.csv", pairs)
        preds = workspace["root"] / "pair_preds.csv"
        lines = ["id,pred"] + [f"{p.pair_id},1" for p in pairs]
        preds.write_text("\n".join(lines) + "\n", encoding="utf-8")
        code = cli.main(
            ["report", "--subtask", "2", "--gold", str(gold), "--pred", f"const={preds}"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "accuracy" in out and "reward" in out


class TestGridCommand:
    def test_grid_runs_from_data_dir(self, workspace, capsys, tmp_path):
        root = tmp_path / "data"
        (root / "task-1").mkdir(parents=True)
        write_task1_csv(root / "task-1" / "train.csv", synth_task1(12, seed=64))
        write_task1_csv(root / "task-1" / "dev.csv", synth_task1(6, seed=65))
        write_task1_csv(root / "task-1" / "test.csv", synth_task1(6, seed=66))
        spec = {
            "subtasks": [1],
            "encoders": ["table"],
            "features": ["context"],
            "transfers": ["freeze"],
            "extras": [False],
            "learning_rates": [1e-3],
            "epoch_choices": [1],
            "base": {"embeddings": str(workspace["vectors"]), "embedding_dim": 16},
        }
        spec_path = tmp_path / "grid.json"
        spec_path.write_text(json.dumps(spec), encoding="utf-8")
        out_dir = tmp_path / "grid-out"
        code = cli.main(
            [
                "grid",
                "--config", str(spec_path),
                "--data-dir", str(root),
                "--out", str(out_dir),
            ]
        )
        assert code == 0
        table = capsys.readouterr().out
        assert "with Context+Freeze" in table
        assert (out_dir / "grid_table.txt").exists()
        assert (out_dir / "grid_results.json").exists()

    def test_grid_without_data_dir_fails_cleanly(self, capsys, monkeypatch):
        from headline_humor.engine import DATA_DIR_ENV

        monkeypatch.delenv(DATA_DIR_ENV, raising=False)
        assert cli.main(["grid"]) == 1
        assert "data-dir" in capsys.readouterr().err
