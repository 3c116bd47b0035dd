"""Tests for the training pipeline and the commands built on it."""

import logging
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from cadrec.core.error_handler import ConfigError, ModelError, NumericalError
from cadrec.core.monitoring import MetricsCollector
from cadrec.services import pipeline


@pytest.fixture(scope="module")
def trained(tmp_path_factory, small_config):
    """One short training run shared by the read-only tests below."""
    config = small_config
    out = tmp_path_factory.mktemp("run")
    return config, pipeline.train(config, out_dir=out, threads=1)


def test_prepare_data_requires_path(small_config):
    """Test a config without data_path is a configuration error."""
    config = pipeline.with_overrides(small_config, data_path=None)
    with pytest.raises(ConfigError):
        pipeline.prepare_data(config)


def test_training_writes_outputs(trained):
    """Test a run directory holds the checkpoint, logs, metrics and maps."""
    config, result = trained
    out = result.out_dir
    for name in (
        "model.ckpt",
        "train_log.csv",
        "metrics.txt",
        "metrics.csv",
        "diagnostics.csv",
        "topk.txt",
        "embeddings.txt",
        "user_index.txt",
        "item_index.txt",
        "config.snapshot",
    ):
        assert (out / name).is_file(), name
    log = pd.read_csv(out / "train_log.csv")
    assert len(log) == result.summary.epochs_run
    assert "val_N@20" in log.columns


def test_training_summary(trained):
    """Test the summary points at a real epoch and carries a test report."""
    config, result = trained
    summary = result.summary
    assert 1 <= summary.best_epoch <= summary.epochs_run <= config.epochs
    assert summary.test_report is not None
    assert [row.k for row in summary.test_report.metrics] == config.top_k
    assert all(np.isfinite(e.loss) for e in summary.history)
    assert summary.best_val_ndcg == max(e.val_ndcg for e in summary.history)


def test_same_seed_same_checkpoint(tmp_path, small_config):
    """Test two runs with one seed write byte-identical checkpoints."""
    config = pipeline.with_overrides(small_config, epochs=1)
    first = pipeline.train(config, out_dir=tmp_path / "a", threads=1)
    second = pipeline.train(config, out_dir=tmp_path / "b", threads=1)
    assert first.checkpoint.read_bytes() == second.checkpoint.read_bytes()


@pytest.mark.slow
def test_threads_do_not_change_the_model(tmp_path, small_config):
    """Test a thread pool gives the same checkpoint as a single thread."""
    config = pipeline.with_overrides(small_config, epochs=1)
    serial = pipeline.train(config, out_dir=tmp_path / "serial", threads=1)
    threaded = pipeline.train(config, out_dir=tmp_path / "threaded", threads=4)
    assert serial.checkpoint.read_bytes() == threaded.checkpoint.read_bytes()


def test_eval_on_val_reproduces_logged_metric(trained):
    """Test evaluating the best checkpoint on val matches the best logged val N@K."""
    config, result = trained
    report = pipeline.evaluate_checkpoint(config, result.checkpoint, which="val", threads=1)
    assert report.metric(20).ndcg == pytest.approx(result.summary.best_val_ndcg, abs=1e-12)


def test_eval_on_test_matches_training_report(trained, tmp_path):
    """Test re-evaluating the checkpoint reproduces the training test report."""
    config, result = trained
    report = pipeline.evaluate_checkpoint(config, result.checkpoint, out_dir=tmp_path, threads=1)
    assert report.model_dump() == result.summary.test_report.model_dump()
    assert (tmp_path / "metrics.txt").is_file()


def test_checkpoint_dimension_mismatch(trained):
    """Test a checkpoint evaluated with another d_m is a model error."""
    config, result = trained
    with pytest.raises(ModelError):
        pipeline.evaluate_checkpoint(pipeline.with_overrides(config, d_m=16), result.checkpoint, threads=1)


def test_diagnose_with_two_checkpoints(trained, tmp_path):
    """Test the paired sd_gap table lines up the cutoffs of both checkpoints."""
    config, result = trained
    diagnosis = pipeline.diagnose(config, result.checkpoint, result.checkpoint, out_dir=tmp_path, threads=1)
    assert [row.k for row in diagnosis.report.diagnostics] == [5, 10]
    assert diagnosis.paired == diagnosis.report.diagnostics
    pairs = pd.read_csv(tmp_path / "sd_gap_pairs.csv")
    assert pairs["sd_top_a"].tolist() == pairs["sd_top_b"].tolist()
    assert diagnosis.report.pop_correlation is not None


def test_prepare_split_outputs(tmp_path, small_config):
    """Test the split command writes the manifest, maps and graph triples."""
    data = pipeline.prepare_split(small_config, tmp_path)
    manifest = (tmp_path / "split_manifest.txt").read_text()
    assert f"num_users={len(data.split)}" in manifest
    assert (tmp_path / "graph_triples.txt").stat().st_size > 0
    assert (tmp_path / "user_index.txt").is_file()


def test_run_ablations_share_the_split(small_config):
    """Test ablation runs reuse one split and apply their switch."""
    config = pipeline.with_overrides(small_config, epochs=1)
    data = pipeline.prepare_data(config)
    results = pipeline.run_ablations(config, ["no_sa", "no_dis"], data=data, threads=1)
    assert set(results) == {"full", "no_sa", "no_dis"}
    assert all(r.data is data for r in results.values())
    # no_sa never touches the attention projections
    initial = pipeline.Trainer(pipeline.with_overrides(config, ablations=["no_sa"]), data).params
    np.testing.assert_array_equal(results["no_sa"].params.w_query, initial.w_query)


def test_ablation_logs_run_event(small_config, caplog):
    """Test an ablated trainer logs the applied switches."""
    data = pipeline.prepare_data(small_config)
    with caplog.at_level(logging.INFO):
        pipeline.Trainer(pipeline.with_overrides(small_config, ablations=["no_er"]), data)
    assert "ablation_applied" in caplog.text


def test_sweep_grid(tmp_path, small_config):
    """Test one row per grid point and a sweep table on disk."""
    config = pipeline.with_overrides(small_config, epochs=1)
    rows = pipeline.sweep(config, {"lambda1": [0.3, 1.0], "lambda2": [0.5]}, out_dir=tmp_path, threads=1)
    assert [row.params for row in rows] == [{"lambda1": 0.3, "lambda2": 0.5}, {"lambda1": 1.0, "lambda2": 0.5}]
    assert len(pd.read_csv(tmp_path / "sweep.csv")) == 2


def test_sweep_rejects_unknown_parameter(small_config):
    """Test a grid over an unknown name is a configuration error."""
    with pytest.raises(ConfigError):
        pipeline.sweep(small_config, {"gamma": [1.0]})


def test_rejected_steps_are_counted(small_config):
    """Test a non-finite gradient rejects the step and keeps training."""
    data = pipeline.prepare_data(small_config)
    collector = MetricsCollector()
    trainer = pipeline.Trainer(small_config, data, collector=collector)
    real_step = trainer.optimizer.step
    calls = {"n": 0}

    def flaky_step(params, grads, counts):
        calls["n"] += 1
        if calls["n"] == 1:
            raise NumericalError("nan", parameter="w_value")
        return real_step(params, grads, counts)

    with patch.object(trainer.optimizer, "step", side_effect=flaky_step):
        trainer.run_epoch()
    assert collector.get_metrics()["rejected_steps"] == 1
    assert collector.get_metrics()["steps"] == calls["n"] - 1


def test_epoch_with_every_step_rejected(small_config):
    """Test an epoch where no update survives raises NumericalError."""
    data = pipeline.prepare_data(small_config)
    trainer = pipeline.Trainer(small_config, data, collector=MetricsCollector())
    with patch.object(trainer.optimizer, "step", side_effect=NumericalError("nan", parameter="w_key")):
        with pytest.raises(NumericalError):
            trainer.run_epoch()


def test_non_finite_update_is_rolled_back(small_config):
    """Test an update that leaves NaN in the params is rejected and undone."""
    data = pipeline.prepare_data(small_config)
    collector = MetricsCollector()
    trainer = pipeline.Trainer(small_config, data, collector=collector)
    real_step = trainer.optimizer.step
    calls = {"n": 0}

    def corrupting_step(params, grads, counts):
        calls["n"] += 1
        real_step(params, grads, counts)
        if calls["n"] == 1:
            params.w_value[0, 0, 0] = np.inf

    with patch.object(trainer.optimizer, "step", side_effect=corrupting_step):
        trainer.run_epoch()
    for name, array in trainer.params.tensors().items():
        assert np.all(np.isfinite(array)), name
    assert collector.get_metrics()["rejected_steps"] == 1


def test_summary_reports_collector_counts(trained):
    """Test the summary history and step counts come from the metrics collector."""
    config, result = trained
    summary = result.summary
    assert summary.steps > 0
    assert summary.rejected_steps == 0
    assert [entry.epoch for entry in summary.history] == list(range(1, summary.epochs_run + 1))
