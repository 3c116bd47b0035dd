"""Top-K ranking, Recall/NDCG and popularity-bias diagnostics."""

import logging
import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import Executor
from typing import Literal

import numpy as np
from scipy.stats import spearmanr

from cadrec.core.error_handler import ContractViolation, log_run_event
from cadrec.core.models import DiagnosticRow, MetricRow, PopCorrelation, RankingReport
from cadrec.data.interactions import PopularityTable, SplitDataset

logger = logging.getLogger(__name__)

EvalSplit = Literal["val", "test"]
ScoreFn = Callable[[int], np.ndarray]
RankFn = Callable[[int, np.ndarray, int], list[int]]


def rank_scores(scores: np.ndarray, exclude: Iterable[int], k: int) -> list[int]:
    """Top-k item ids by descending score, excluded ids removed first, ties by ascending id."""
    scores = np.asarray(scores, dtype=np.float64)
    excluded = np.unique(np.asarray(list(exclude), dtype=np.int64))
    candidates = np.setdiff1d(np.arange(len(scores)), excluded, assume_unique=True)
    if k < 0 or k > len(candidates):
        raise ContractViolation(
            f"K={k} exceeds the {len(candidates)} candidates left after excluding {len(excluded)} items"
        )
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order[:k]].tolist()


def rank_items(phi: np.ndarray, psi: np.ndarray, exclude: Iterable[int], k: int) -> list[int]:
    """Top-k items under the test-mode score ⟨φ(u), ψ(i)⟩."""
    return rank_scores(psi @ phi, exclude, k)


def recall_at_k(topk: Sequence[int], relevant: Iterable[int]) -> float:
    relevant_set = set(relevant)
    if not relevant_set:
        raise ContractViolation("recall is undefined for an empty relevant set")
    return len(relevant_set.intersection(topk)) / len(relevant_set)


def ndcg_at_k(topk: Sequence[int], relevant: Iterable[int], k: int | None = None) -> float:
    """
    DCG of the first K ranked items over the ideal DCG of min(K, |relevant|) hits.

    K defaults to the list length; a list shorter than K scores its missing ranks as misses.
    """
    relevant_set = set(relevant)
    if not relevant_set:
        raise ContractViolation("NDCG is undefined for an empty relevant set")
    cutoff = len(topk) if k is None else k
    ranked = topk[:cutoff]
    dcg = sum(1.0 / math.log2(rank + 1) for rank, item in enumerate(ranked, start=1) if item in relevant_set)
    ideal_hits = min(cutoff, len(relevant_set))
    idcg = sum(1.0 / math.log2(rank + 1) for rank in range(1, ideal_hits + 1))
    return dcg / idcg if idcg > 0 else 0.0


def relevant_items(split: SplitDataset, user: int, which: EvalSplit = "test") -> np.ndarray:
    record = split.users[user]
    items = record.test_items if which == "test" else record.val_items
    return np.unique(items)


def _evaluate(
    split: SplitDataset,
    rank_user: RankFn,
    top_k: Sequence[int],
    which: EvalSplit,
    executor: Executor | None,
) -> RankingReport:
    """
    Rank every user with a non-empty relevant set and macro-average R@K / N@K.

    Candidates are all items minus the user's training items. When fewer
    candidates than max(K) remain, the list is truncated to what is available.
    """
    ks = sorted(set(top_k))
    k_max = ks[-1]
    users = [u.user for u in split if len(u.test_items if which == "test" else u.val_items) > 0]

    def run(user: int) -> tuple[int, list[int], list[float], list[float]]:
        exclude = split.train_exclusions(user)
        relevant = relevant_items(split, user, which)
        available = split.num_items - len(exclude)
        ranked = rank_user(user, exclude, min(k_max, available))
        recalls = [recall_at_k(ranked[:k], relevant) for k in ks]
        ndcgs = [ndcg_at_k(ranked, relevant, min(k, available)) for k in ks]
        return user, ranked, recalls, ndcgs

    results = list(executor.map(run, users)) if executor is not None else [run(u) for u in users]

    top_lists: dict[int, list[int]] = {}
    recall_sums = np.zeros(len(ks))
    ndcg_sums = np.zeros(len(ks))
    for user, ranked, recalls, ndcgs in results:
        top_lists[user] = ranked
        recall_sums += recalls
        ndcg_sums += ndcgs

    count = len(results)
    rows = [
        MetricRow(
            k=k,
            recall=float(recall_sums[j] / count) if count else 0.0,
            ndcg=float(ndcg_sums[j] / count) if count else 0.0,
        )
        for j, k in enumerate(ks)
    ]
    logger.info(
        f"Evaluated {count} users on {which}: "
        + ", ".join(f"R@{r.k}={r.recall:.4f} N@{r.k}={r.ndcg:.4f}" for r in rows)
    )
    return RankingReport(split=which, num_users=count, top_k=top_lists, metrics=rows)


def evaluate_rankings(
    split: SplitDataset,
    score_fn: ScoreFn,
    top_k: Sequence[int] = (5, 10, 20),
    which: EvalSplit = "test",
    executor: Executor | None = None,
) -> RankingReport:
    """Metrics for a per-user score vector, e.g. a fixed baseline."""
    return _evaluate(
        split, lambda user, exclude, k: rank_scores(score_fn(user), exclude, k), top_k, which, executor
    )


def evaluate_user_vectors(
    split: SplitDataset,
    user_vectors: Mapping[int, np.ndarray],
    psi: np.ndarray,
    top_k: Sequence[int] = (5, 10, 20),
    which: EvalSplit = "test",
    executor: Executor | None = None,
) -> RankingReport:
    """Metrics for the model: every user is ranked with `rank_items` on φ(u) and ψ."""
    return _evaluate(
        split, lambda user, exclude, k: rank_items(user_vectors[user], psi, exclude, k), top_k, which, executor
    )


def _popularity_order(pop_table: PopularityTable, descending: bool) -> np.ndarray:
    counts = np.asarray(pop_table.counts)
    ids = np.arange(len(counts))
    key = -counts if descending else counts
    return np.lexsort((ids, key))


def sd_gap(psi: np.ndarray, pop_table: PopularityTable, k: int) -> tuple[float, float]:
    """Std over all embedding entries of the k most and the k least popular items."""
    num_items = psi.shape[0]
    if k < 1 or 2 * k > num_items:
        raise ContractViolation(f"sd_gap needs 1 <= k <= N/2 (k={k}, N={num_items})")
    top = _popularity_order(pop_table, descending=True)[:k]
    bottom = _popularity_order(pop_table, descending=False)[:k]
    return float(np.std(psi[top])), float(np.std(psi[bottom]))


def clamp_gap_ks(ks: Iterable[int], num_items: int) -> list[int]:
    """Clamp cutoffs to N/2, warning for each one that shrinks."""
    limit = num_items // 2
    clamped: list[int] = []
    for k in sorted(set(ks)):
        if k > limit:
            logger.warning(f"sd_gap k={k} exceeds N/2={limit}; clamped")
            log_run_event("k_clamped", {"requested": k, "used": limit})
            k = limit
        if k >= 1 and k not in clamped:
            clamped.append(k)
    return clamped


def sd_gap_table(psi: np.ndarray, pop_table: PopularityTable, ks: Iterable[int]) -> list[DiagnosticRow]:
    rows = []
    for k in clamp_gap_ks(ks, psi.shape[0]):
        sd_top, sd_bottom = sd_gap(psi, pop_table, k)
        rows.append(DiagnosticRow(k=k, sd_top=sd_top, sd_bottom=sd_bottom))
    return rows


def pop_correlation(mean_scores: np.ndarray, pop_table: PopularityTable) -> PopCorrelation:
    """Spearman ρ between per-item mean scores and training counts; constant input gives 0."""
    scores = np.asarray(mean_scores, dtype=np.float64)
    counts = np.asarray(pop_table.counts, dtype=np.float64)
    if len(scores) < 3 or len(scores) != len(counts):
        raise ContractViolation("pop_correlation needs at least 3 items with matching lengths")
    if np.ptp(scores) == 0 or np.ptp(counts) == 0:
        return PopCorrelation(rho=0.0, degenerate=True)
    rho = spearmanr(scores, counts).statistic
    if not np.isfinite(rho):
        return PopCorrelation(rho=0.0, degenerate=True)
    return PopCorrelation(rho=float(rho), degenerate=False)


def sample_users(users: Sequence[int], size: int, seed: int) -> list[int]:
    if len(users) <= size:
        return list(users)
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(np.asarray(users), size=size, replace=False).tolist())


def mean_item_scores(user_vectors: Mapping[int, np.ndarray], psi: np.ndarray, users: Sequence[int]) -> np.ndarray:
    """Per-item test-mode score averaged over `users`."""
    if not users:
        return np.zeros(psi.shape[0])
    phis = np.stack([user_vectors[u] for u in users])
    return (phis @ psi.T).mean(axis=0)


def most_popular_scores(pop_table: PopularityTable) -> np.ndarray:
    """Most-popular baseline: every user gets the training counts as scores."""
    return np.asarray(pop_table.counts, dtype=np.float64)


def evaluate(
    split: SplitDataset,
    user_vectors: Mapping[int, np.ndarray],
    psi: np.ndarray,
    pop_table: PopularityTable,
    top_k: Sequence[int] = (5, 10, 20),
    sd_gap_k: Sequence[int] = (50, 100, 500, 1000),
    which: EvalSplit = "test",
    corr_users: int = 1000,
    seed: int = 0,
    executor: Executor | None = None,
) -> RankingReport:
    """Full RankingReport: metrics, sd_gap table and popularity correlation."""
    report = evaluate_user_vectors(split, user_vectors, psi, top_k, which, executor)
    sampled = sample_users(sorted(user_vectors), corr_users, seed)
    report.diagnostics = sd_gap_table(psi, pop_table, sd_gap_k)
    if psi.shape[0] >= 3:
        report.pop_correlation = pop_correlation(mean_item_scores(user_vectors, psi, sampled), pop_table)
    return report


def evaluate_most_popular(
    split: SplitDataset,
    pop_table: PopularityTable,
    top_k: Sequence[int] = (5, 10, 20),
    which: EvalSplit = "test",
) -> RankingReport:
    scores = most_popular_scores(pop_table)
    return evaluate_rankings(split, lambda _: scores, top_k, which)
