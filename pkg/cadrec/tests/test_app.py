"""Tests for the command-line entry point."""

from unittest.mock import patch

import pytest

from cadrec.app import build_parser, main
from cadrec.core.error_handler import EXIT_CONFIG, EXIT_DATA, EXIT_MODEL, EXIT_OK, NumericalError


def test_synth_writes_corpus_and_ground_truth(tmp_path, capsys):
    """Test synth writes the interaction file and its sidecar."""
    code = main(
        ["synth", "--out", str(tmp_path), "--seed", "4", "--set", "num_users=12", "--set", "num_items=20",
         "--set", "events_per_user=5"]
    )
    assert code == EXIT_OK
    assert len((tmp_path / "interactions.tsv").read_text().splitlines()) == 60
    assert (tmp_path / "ground_truth.txt").read_text().startswith("# seed=4")
    assert "events=60" in capsys.readouterr().out


def test_synth_alpha_sweep(tmp_path):
    """Test repeated --alpha writes one corpus per value."""
    code = main(
        ["synth", "--out", str(tmp_path), "--alpha", "0", "--alpha", "2", "--set", "num_users=5",
         "--set", "num_items=10", "--set", "events_per_user=3"]
    )
    assert code == EXIT_OK
    assert (tmp_path / "alpha_0" / "interactions.tsv").is_file()
    assert (tmp_path / "alpha_2" / "ground_truth.txt").is_file()
    assert "alpha_pop = 2.0" in (tmp_path / "alpha_2" / "config.snapshot").read_text()
    assert "alpha_pop = 0.0" in (tmp_path / "alpha_0" / "config.snapshot").read_text()


def test_synth_snapshot_reproduces_corpus(tmp_path):
    """Test regenerating from the written config snapshot gives the same interaction file."""
    first, second = tmp_path / "first", tmp_path / "second"
    args = ["--seed", "6", "--set", "num_users=8", "--set", "num_items=15", "--set", "events_per_user=4",
            "--set", "sigma_indi=0.5"]
    assert main(["synth", "--out", str(first), *args]) == EXIT_OK
    snapshot = first / "config.snapshot"
    assert "num_users = 8" in snapshot.read_text()
    assert main(["synth", "--out", str(second), "--config", str(snapshot)]) == EXIT_OK
    assert (first / "interactions.tsv").read_text() == (second / "interactions.tsv").read_text()


def test_train_then_eval(tmp_path, synth_corpus, capsys):
    """Test a tiny training run and a re-evaluation of its checkpoint."""
    args = ["--data", str(synth_corpus), "--threads", "1", "--set", "d_m=4", "--set", "epochs=1",
            "--set", "batch_size=32", "--set", "sd_gap_k=5"]
    assert main(["train", "--out", str(tmp_path / "run"), *args]) == EXIT_OK
    assert "recall@20=" in capsys.readouterr().out

    checkpoint = tmp_path / "run" / "model.ckpt"
    assert main(["eval", "--checkpoint", str(checkpoint), "--out", str(tmp_path / "eval"), *args]) == EXIT_OK
    assert (tmp_path / "eval" / "metrics.csv").is_file()


def test_split_command(tmp_path, synth_corpus, capsys):
    """Test the split command prints the corpus summary."""
    assert main(["split", "--data", str(synth_corpus), "--out", str(tmp_path)]) == EXIT_OK
    assert "train_events=" in capsys.readouterr().out
    assert (tmp_path / "split_manifest.txt").is_file()


def test_invalid_config_value_exits_2(tmp_path, synth_corpus):
    """Test an invalid config value maps to exit code 2."""
    assert main(["train", "--data", str(synth_corpus), "--set", "d_m=7", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_missing_config_file_exits_2(tmp_path):
    """Test a missing --config file maps to exit code 2."""
    assert main(["split", "--config", str(tmp_path / "nope.conf"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_grid_exits_2(tmp_path, synth_corpus):
    """Test a sweep grid with non-numeric values maps to exit code 2."""
    code = main(["sweep", "--data", str(synth_corpus), "--grid", "lambda1=a,b", "--out", str(tmp_path)])
    assert code == EXIT_CONFIG


def test_missing_data_file_exits_3(tmp_path):
    """Test a missing interaction file maps to exit code 3."""
    assert main(["split", "--data", str(tmp_path / "missing.tsv"), "--out", str(tmp_path)]) == EXIT_DATA


def test_malformed_data_exits_3(tmp_path):
    """Test a malformed interaction line maps to exit code 3."""
    path = tmp_path / "bad.tsv"
    path.write_text("u1\ti1\tnot-a-time\n")
    assert main(["split", "--data", str(path), "--out", str(tmp_path / "out")]) == EXIT_DATA


def test_missing_checkpoint_exits_3(tmp_path, synth_corpus):
    """Test evaluating a checkpoint that does not exist maps to exit code 3."""
    code = main(["eval", "--data", str(synth_corpus), "--checkpoint", str(tmp_path / "none.ckpt")])
    assert code == EXIT_DATA


def test_corrupt_checkpoint_exits_4(tmp_path, synth_corpus):
    """Test a file that is not a checkpoint maps to exit code 4."""
    path = tmp_path / "model.ckpt"
    path.write_bytes(b"garbage" * 10)
    code = main(["eval", "--data", str(synth_corpus), "--checkpoint", str(path), "--out", str(tmp_path)])
    assert code == EXIT_MODEL


def test_numerical_failure_exits_4(tmp_path, synth_corpus):
    """Test a training run that diverges maps to exit code 4."""
    with patch("cadrec.app.pipeline.train", side_effect=NumericalError("diverged", parameter="w_key")):
        code = main(["train", "--data", str(synth_corpus), "--out", str(tmp_path)])
    assert code == EXIT_MODEL


def test_ablate_choices_are_checked():
    """Test argparse rejects an unknown ablation name."""
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--ablate", "no_everything"])


def test_ablate_flag_reaches_config(synth_corpus):
    """Test repeated --ablate flags are collected in order."""
    args = build_parser().parse_args(["train", "--data", str(synth_corpus), "--ablate", "no_sa", "--ablate", "no_er"])
    assert args.ablate == ["no_sa", "no_er"]
