"""Tests for the checkpoint codec and the artifact writers."""

import numpy as np
import pandas as pd
import pytest

from cadrec.core.config import RunConfig, SynthConfig
from cadrec.core.error_handler import DataError, ModelError
from cadrec.core.models import DiagnosticRow, EpochLog, MetricRow, PopCorrelation, RankingReport, SweepRow
from cadrec.data.interactions import split_manifest
from cadrec.data.persistence import (
    MAGIC,
    check_compatible,
    load_checkpoint,
    save_checkpoint,
    write_config_snapshot,
    write_embeddings,
    write_gap_pairs,
    write_ground_truth,
    write_index_maps,
    write_metrics,
    write_split_manifest,
    write_sweep,
    write_topk,
    write_train_log,
)
from cadrec.services.encoders import init_params
from cadrec.services.synth import generate


@pytest.fixture
def params():
    model = init_params(3, 8, 4, 2, seed=1, num_layers=2)
    model.indiv_bias[:] = np.random.default_rng(0).normal(size=model.indiv_bias.shape)
    return model


def test_checkpoint_round_trip_is_exact(tmp_path, params):
    """Test every tensor survives a save/load cycle bit for bit."""
    path = save_checkpoint(params, tmp_path / "model.ckpt")
    loaded = load_checkpoint(path)
    for name, array in params.tensors().items():
        np.testing.assert_array_equal(loaded.tensors()[name], array)
    assert loaded.num_layers == 2
    assert loaded.num_heads == 2


def test_checkpoint_bytes_are_deterministic(tmp_path, params):
    """Test identical params write identical files."""
    first = save_checkpoint(params, tmp_path / "a.ckpt").read_bytes()
    second = save_checkpoint(params.copy(), tmp_path / "b.ckpt").read_bytes()
    assert first == second
    assert first.startswith(MAGIC)


def test_missing_checkpoint_is_data_error(tmp_path):
    """Test loading a missing file raises DataError."""
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_bad_magic_is_model_error(tmp_path):
    """Test a file without the checkpoint magic is rejected."""
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"NOTACKPT" + bytes(64))
    with pytest.raises(ModelError):
        load_checkpoint(path)


def test_truncated_checkpoint_is_model_error(tmp_path, params):
    """Test a checkpoint cut short is rejected."""
    path = save_checkpoint(params, tmp_path / "model.ckpt")
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(ModelError, match="Truncated"):
        load_checkpoint(path)


def test_compatibility_check(tiny_split, params):
    """Test dimension mismatches between checkpoint and config are reported."""
    check_compatible(params, tiny_split, RunConfig(d_m=4, num_heads=2, num_layers=2))
    with pytest.raises(ModelError, match="d_m"):
        check_compatible(params, tiny_split, RunConfig(d_m=8, num_heads=2, num_layers=2))


def test_config_snapshot(tmp_path):
    """Test the snapshot holds the flat key-value config."""
    path = write_config_snapshot(RunConfig(d_m=16), tmp_path)
    assert "d_m = 16" in path.read_text()


def test_index_maps(tmp_path, tiny_split):
    """Test user and item index files map contiguous ids to raw ids."""
    user_path, item_path = write_index_maps(tiny_split, tmp_path)
    assert user_path.read_text().splitlines()[0] == "0\t0"
    assert len(item_path.read_text().splitlines()) == 8


def test_split_manifest_file(tmp_path, tiny_split):
    """Test the manifest lists totals and one line per user."""
    path = write_split_manifest(split_manifest(tiny_split), tmp_path / "split.manifest")
    lines = path.read_text().splitlines()
    assert "train_events=15" in lines
    assert sum(line.startswith("user=") for line in lines) == 3


def test_metrics_files(tmp_path):
    """Test metrics.txt, metrics.csv and diagnostics.csv contents."""
    report = RankingReport(
        split="test",
        num_users=2,
        metrics=[MetricRow(k=5, recall=0.5, ndcg=0.25), MetricRow(k=10, recall=0.75, ndcg=0.3)],
        diagnostics=[DiagnosticRow(k=5, sd_top=2.0, sd_bottom=1.0)],
        pop_correlation=PopCorrelation(rho=0.4),
    )
    paths = write_metrics(report, tmp_path, prefix="test_")

    text = paths["text"].read_text()
    assert "recall@5=0.500000" in text
    assert "pop_correlation=0.400000" in text
    table = pd.read_csv(paths["table"])
    assert table["K"].tolist() == [5, 10]
    assert pd.read_csv(paths["diagnostics"]).loc[0, "sd_top"] == 2.0
    assert paths["text"].name == "test_metrics.txt"


def test_gap_pairs_match_on_k(tmp_path):
    """Test the paired gap table keeps only shared cutoffs."""
    first = [DiagnosticRow(k=5, sd_top=2.0, sd_bottom=1.0), DiagnosticRow(k=10, sd_top=1.5, sd_bottom=1.0)]
    second = [DiagnosticRow(k=5, sd_top=1.1, sd_bottom=1.0)]
    table = pd.read_csv(write_gap_pairs(first, second, tmp_path / "pairs.csv"))
    assert table["k"].tolist() == [5]
    assert table.loc[0, "sd_top_b"] == 1.1


def test_topk_uses_raw_ids(tmp_path, tiny_split):
    """Test top-K lines carry raw user and item ids."""
    report = RankingReport(num_users=1, top_k={1: [4, 0]})
    path = write_topk(report, tiny_split, tmp_path / "topk.txt")
    assert path.read_text() == "1\t4 0\n"


def test_embeddings_file(tmp_path):
    """Test one row per item with d_m values."""
    path = write_embeddings(np.arange(6.0).reshape(3, 2), ["a", "b", "c"], tmp_path / "emb.txt")
    lines = path.read_text().splitlines()
    assert lines[1] == "b 2 3"


def test_train_log_columns(tmp_path):
    """Test the per-epoch log columns."""
    history = [EpochLog(epoch=1, loss=3.2, val_recall=0.1, val_ndcg=0.05, seconds=0.4)]
    table = pd.read_csv(write_train_log(history, tmp_path / "train.log", k=10))
    assert list(table.columns) == ["epoch", "loss", "val_R@10", "val_N@10", "seconds"]


def test_sweep_table(tmp_path):
    """Test sweep rows carry their grid values and metrics."""
    rows = [SweepRow(params={"beta1": 0.1}, recall=0.2, ndcg=0.1), SweepRow(params={"beta1": 0.4}, recall=0.3, ndcg=0.2)]
    table = pd.read_csv(write_sweep(rows, tmp_path / "sweep.csv", k=20))
    assert table["beta1"].tolist() == [0.1, 0.4]
    assert table["ndcg@20"].tolist() == [0.1, 0.2]


def test_ground_truth_sidecar(tmp_path):
    """Test the sidecar echoes the seed and lists every user and item."""
    _, truth = generate(SynthConfig(num_users=5, num_items=7, events_per_user=3, seed=8))
    lines = write_ground_truth(truth, tmp_path / "truth.txt").read_text().splitlines()
    assert lines[0].startswith("# seed=8")
    assert "num_users=5 num_items=7 d_true=8 events_per_user=3" in lines[0]
    assert len(lines) == 1 + 1 + 5 + 1 + 7
