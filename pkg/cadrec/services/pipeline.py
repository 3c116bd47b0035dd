"""Main training pipeline orchestrating all components."""

import itertools
import logging
from collections.abc import Iterator, Mapping, Sequence
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cadrec.core.config import HyperParams, RunConfig, settings
from cadrec.core.error_handler import ConfigError, NumericalError, log_run_event
from cadrec.core.models import EpochLog, RankingReport, SweepRow, TrainingSummary
from cadrec.core.monitoring import MetricsCollector, metrics, monitor_function, track_execution_time
from cadrec.data import persistence
from cadrec.data.interactions import (
    InteractionLog,
    PopularityTable,
    SplitDataset,
    item_popularity,
    load_interactions,
    split_manifest,
    temporal_split,
)
from cadrec.services.encoders import ModelParams, PopularityEncoder, init_params
from cadrec.services.evaluation import EvalSplit, evaluate, evaluate_user_vectors, sd_gap_table
from cadrec.services.hgc_layer import encode_user
from cadrec.services.hypergraph import HyperGraph, build_cooccurrence, dump_graph
from cadrec.services.objective import make_batch, total_loss_and_gradients
from cadrec.services.optimizer import build_optimizer

logger = logging.getLogger(__name__)

LOG_K = 20
CHECKPOINT_NAME = "model.ckpt"


@dataclass
class PreparedData:
    """Everything derived from the interaction file before any parameter exists."""

    log: InteractionLog
    split: SplitDataset
    pop_table: PopularityTable
    graph: HyperGraph


@dataclass
class TrainingResult:
    params: ModelParams
    summary: TrainingSummary
    data: PreparedData
    out_dir: Path | None = None
    checkpoint: Path | None = None


@dataclass
class DiagnosisResult:
    report: RankingReport
    paired: list = field(default_factory=list)


@contextmanager
def worker_pool(threads: int | None = None) -> Iterator[Executor | None]:
    """Thread pool for per-user work; None when a single thread is requested."""
    count = settings.threads if threads is None else threads
    if count <= 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=count) as executor:
        yield executor


@monitor_function()
def prepare_data(config: RunConfig) -> PreparedData:
    """Load, split, count popularity and build the co-occurrence graph."""
    if not config.data_path:
        raise ConfigError("data_path is required", field="data_path")
    log = load_interactions(config.data_path, config.delimiter, config.columns)
    split = temporal_split(log, config.ratios, config.min_interactions, config.ia_fraction)
    pop_table = item_popularity(split)
    graph = build_cooccurrence(split)
    return PreparedData(log=log, split=split, pop_table=pop_table, graph=graph)


def popularity_encoder(data: PreparedData, hyper: HyperParams) -> PopularityEncoder | None:
    if not hyper.use_popularity:
        return None
    return PopularityEncoder(data.pop_table, hyper.d_m, hyper.pop_log_buckets)


def encode_users(
    split: SplitDataset,
    graph: HyperGraph,
    params: ModelParams,
    hyper: HyperParams,
    max_seq_len: int,
    executor: Executor | None = None,
) -> dict[int, np.ndarray]:
    """φ(u) for every retained user from their deduplicated training history."""
    users = [u.user for u in split]

    def run(user: int) -> np.ndarray:
        return encode_user(user, split.users[user].history(max_seq_len), graph, params, hyper)

    vectors = executor.map(run, users) if executor is not None else map(run, users)
    return dict(zip(users, vectors))


def log_k(config: RunConfig) -> int:
    return LOG_K if LOG_K in config.top_k else max(config.top_k)


def validation_scores(
    data: PreparedData,
    params: ModelParams,
    hyper: HyperParams,
    config: RunConfig,
    executor: Executor | None = None,
) -> RankingReport:
    vectors = encode_users(data.split, data.graph, params, hyper, config.max_seq_len, executor)
    psi = params.item_embeddings
    return evaluate_user_vectors(data.split, vectors, psi, config.top_k, "val", executor)


@monitor_function("evaluate")
def evaluate_params(
    data: PreparedData,
    params: ModelParams,
    config: RunConfig,
    which: EvalSplit = "test",
    executor: Executor | None = None,
) -> RankingReport:
    """Full RankingReport of a parameter set on the val or test split."""
    hyper = config.hyperparams()
    vectors = encode_users(data.split, data.graph, params, hyper, config.max_seq_len, executor)
    return evaluate(
        data.split,
        vectors,
        params.item_embeddings,
        data.pop_table,
        top_k=config.top_k,
        sd_gap_k=config.sd_gap_k,
        which=which,
        corr_users=config.corr_users,
        seed=config.seed,
        executor=executor,
    )


class Trainer:
    """Mini-batch training with validation-based early stopping."""

    def __init__(
        self,
        config: RunConfig,
        data: PreparedData,
        executor: Executor | None = None,
        collector: MetricsCollector | None = None,
    ):
        self.config = config
        self.data = data
        self.hyper = config.hyperparams()
        self.executor = executor
        self.collector = collector or metrics
        self.pop = popularity_encoder(data, self.hyper)
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        self.params = init_params(
            data.split.num_users,
            data.split.num_items,
            self.hyper.d_m,
            self.hyper.num_heads,
            seed=int(seeds[0].generate_state(1)[0]),
            num_layers=self.hyper.num_layers,
        )
        self.shuffle_rng = np.random.default_rng(seeds[1])
        self.optimizer = build_optimizer(self.hyper)
        if config.ablations:
            log_run_event("ablation_applied", {"ablations": list(config.ablations), **self.hyper.model_dump()})

    def run_epoch(self) -> float:
        """One pass over the shuffled users; returns the summed batch loss."""
        users = np.array(sorted(self.data.split.users))
        self.shuffle_rng.shuffle(users)
        total = 0.0
        accepted = 0
        batches = 0
        for start in range(0, len(users), self.config.batch_size):
            batches += 1
            members = users[start : start + self.config.batch_size].tolist()
            batch = make_batch(self.data.split, members, self.config.max_seq_len)
            loss, grads = total_loss_and_gradients(
                batch, self.params, self.data.graph, self.hyper, self.pop, self.executor, decoupled_decay=True
            )
            previous = self.params.copy()
            try:
                self.optimizer.step(self.params, grads, batch.ia_counts())
                self.params.check_finite()
            except NumericalError as e:
                self.params = previous
                self.collector.record_rejected_step(e.parameter or "unknown")
                continue
            self.collector.record_step()
            accepted += 1
            total += loss
        if accepted == 0:
            raise NumericalError(f"Every one of {batches} updates in the epoch was rejected")
        return total

    def train(self, out_dir: str | Path | None = None) -> TrainingResult:
        """Train until `epochs` or until val N@K stalls for `patience` epochs; keep the best params."""
        self.collector.reset()
        k = log_k(self.config)
        best_params = self.params.copy()
        best_ndcg = -1.0
        best_epoch = 0
        stale = 0

        for epoch in range(1, self.config.epochs + 1):
            with track_execution_time("epoch", epoch=epoch) as timer:
                loss = self.run_epoch()
                val = validation_scores(self.data, self.params, self.hyper, self.config, self.executor)
            row = val.metric(k)
            self.collector.record_epoch(
                EpochLog(epoch=epoch, loss=loss, val_recall=row.recall, val_ndcg=row.ndcg, seconds=timer.elapsed)
            )
            log_run_event(
                "epoch_finished",
                {"epoch": epoch, "loss": round(loss, 6), f"val_N@{k}": round(row.ndcg, 6)},
            )

            # Without validation users every epoch counts as an improvement.
            if val.num_users == 0 or row.ndcg > best_ndcg:
                best_ndcg, best_epoch, stale = row.ndcg, epoch, 0
                best_params = self.params.copy()
            else:
                stale += 1
                if stale >= self.config.patience:
                    log_run_event("early_stop", {"epoch": epoch, "best_epoch": best_epoch})
                    break

        counters = self.collector.get_metrics()
        summary = TrainingSummary(
            best_epoch=best_epoch,
            best_val_ndcg=max(best_ndcg, 0.0),
            epochs_run=counters["epochs"],
            stopped_early=counters["epochs"] < self.config.epochs,
            steps=counters["steps"],
            rejected_steps=counters["rejected_steps"],
            history=list(self.collector.history),
        )
        summary.test_report = evaluate_params(self.data, best_params, self.config, "test", self.executor)
        result = TrainingResult(params=best_params, summary=summary, data=self.data)
        if out_dir is not None:
            write_training_outputs(result, self.config, Path(out_dir))
        return result


def write_training_outputs(result: TrainingResult, config: RunConfig, out: Path) -> None:
    k = log_k(config)
    persistence.write_config_snapshot(config, out)
    persistence.write_train_log(result.summary.history, out / "train_log.csv", k)
    result.checkpoint = persistence.save_checkpoint(result.params, out / CHECKPOINT_NAME)
    if result.summary.test_report is not None:
        persistence.write_metrics(result.summary.test_report, out)
        persistence.write_topk(result.summary.test_report, result.data.split, out / "topk.txt")
    persistence.write_embeddings(result.params.item_embeddings, result.data.split.item_ids, out / "embeddings.txt")
    persistence.write_index_maps(result.data.split, out)
    result.out_dir = out


def train(
    config: RunConfig,
    out_dir: str | Path | None = None,
    data: PreparedData | None = None,
    threads: int | None = None,
) -> TrainingResult:
    """Train one model from a validated config."""
    data = data or prepare_data(config)
    with worker_pool(threads) as executor, track_execution_time("train"):
        return Trainer(config, data, executor).train(out_dir)


def load_model(
    config: RunConfig,
    checkpoint: str | Path,
    data: PreparedData | None = None,
) -> tuple[ModelParams, PreparedData]:
    """Load a checkpoint and the data it was trained on, checking dimensions."""
    data = data or prepare_data(config)
    params = persistence.load_checkpoint(checkpoint)
    persistence.check_compatible(params, data.split, config)
    return params, data


def evaluate_checkpoint(
    config: RunConfig,
    checkpoint: str | Path,
    out_dir: str | Path | None = None,
    which: EvalSplit = "test",
    threads: int | None = None,
) -> RankingReport:
    params, data = load_model(config, checkpoint)
    with worker_pool(threads) as executor:
        report = evaluate_params(data, params, config, which, executor)
    if out_dir is not None:
        out = Path(out_dir)
        persistence.write_metrics(report, out)
        persistence.write_embeddings(params.item_embeddings, data.split.item_ids, out / "embeddings.txt")
        persistence.write_config_snapshot(config, out)
    return report


def diagnose(
    config: RunConfig,
    checkpoint: str | Path,
    second_checkpoint: str | Path | None = None,
    out_dir: str | Path | None = None,
    threads: int | None = None,
) -> DiagnosisResult:
    """sd_gap table and popularity correlation; with two checkpoints also a paired gap table."""
    params, data = load_model(config, checkpoint)
    with worker_pool(threads) as executor:
        report = evaluate_params(data, params, config, "test", executor)
    result = DiagnosisResult(report=report)
    if second_checkpoint is not None:
        other, _ = load_model(config, second_checkpoint, data)
        result.paired = sd_gap_table(other.item_embeddings, data.pop_table, config.sd_gap_k)
    if out_dir is not None:
        out = Path(out_dir)
        persistence.write_diagnostics(report.diagnostics, out / "diagnostics.csv")
        persistence.write_metrics(report, out)
        if result.paired:
            persistence.write_gap_pairs(report.diagnostics, result.paired, out / "sd_gap_pairs.csv")
        persistence.write_config_snapshot(config, out)
    return result


def prepare_split(config: RunConfig, out_dir: str | Path) -> PreparedData:
    """Materialize the split: manifest, index maps and the normalized graph as triples."""
    data = prepare_data(config)
    out = Path(out_dir)
    persistence.write_split_manifest(split_manifest(data.split), out / "split_manifest.txt")
    persistence.write_index_maps(data.split, out)
    dump_graph(data.graph, out / "graph_triples.txt")
    persistence.write_config_snapshot(config, out)
    return data


def with_overrides(config: RunConfig, **values) -> RunConfig:
    """Copy of `config` with fields replaced and re-validated."""
    return RunConfig(**{**config.model_dump(), **values})


def sweep(
    config: RunConfig,
    grid: Mapping[str, Sequence[float]],
    out_dir: str | Path | None = None,
    threads: int | None = None,
) -> list[SweepRow]:
    """Train one model per grid point (e.g. λ1 x λ2) and collect test R@K / N@K."""
    unknown = [name for name in grid if name not in RunConfig.model_fields]
    if unknown:
        raise ConfigError(f"Unknown sweep parameter '{unknown[0]}'", field=unknown[0])
    data = prepare_data(config)
    names = list(grid)
    k = log_k(config)
    rows: list[SweepRow] = []
    for values in itertools.product(*(grid[name] for name in names)):
        point = dict(zip(names, (float(v) for v in values)))
        result = train(with_overrides(config, **point), data=data, threads=threads)
        report = result.summary.test_report
        metric = report.metric(k) if report is not None else None
        rows.append(
            SweepRow(
                params=point,
                recall=metric.recall if metric else 0.0,
                ndcg=metric.ndcg if metric else 0.0,
            )
        )
        logger.info(f"Sweep point {point}: N@{k}={rows[-1].ndcg:.4f}")
    if out_dir is not None:
        persistence.write_sweep(rows, Path(out_dir) / "sweep.csv", k)
        persistence.write_config_snapshot(config, out_dir)
    return rows


def run_ablations(
    config: RunConfig,
    ablations: Sequence[str],
    data: PreparedData | None = None,
    threads: int | None = None,
) -> dict[str, TrainingResult]:
    """Train the full model plus one run per single ablation on the same split."""
    data = data or prepare_data(config)
    results = {"full": train(with_overrides(config, ablations=[]), data=data, threads=threads)}
    for name in ablations:
        results[name] = train(with_overrides(config, ablations=[name]), data=data, threads=threads)
    return results
