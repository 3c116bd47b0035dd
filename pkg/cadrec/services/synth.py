"""Synthetic interaction corpora with planted popularity and individual biases."""

import logging
from collections.abc import Iterator, Sequence
from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np

from cadrec.core.config import SynthConfig
from cadrec.core.error_handler import log_run_event
from cadrec.data.interactions import InteractionLog

logger = logging.getLogger(__name__)

BLOCK_SIZE = 256
MAX_TIME_GAP = 3600


@dataclass(frozen=True)
class GroundTruth:
    """Planted generative factors of a synthetic corpus."""

    seed: int
    user_factors: np.ndarray
    item_factors: np.ndarray
    base_popularity: np.ndarray
    indi_offsets: np.ndarray
    sensitivity: np.ndarray
    alpha_pop: float
    sigma_indi: float
    events_per_user: int


def zipf_popularity(num_items: int, rng: np.random.Generator) -> np.ndarray:
    """z*_c = 1 / rank under a random item permutation."""
    ranks = rng.permutation(num_items) + 1
    return 1.0 / ranks


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    weights = np.exp(shifted)
    return weights / weights.sum()


def _sample_block(
    users: np.ndarray,
    truth: GroundTruth,
    events_per_user: int,
    seed: np.random.SeedSequence,
) -> list[tuple[int, int, int]]:
    rng = np.random.default_rng(seed)
    log_pop = np.log(truth.base_popularity)
    events: list[tuple[int, int, int]] = []
    for user in users:
        logits = (
            truth.item_factors @ truth.user_factors[user]
            + truth.alpha_pop * log_pop
            + truth.indi_offsets[user] * truth.sensitivity
        )
        probs = softmax(logits)
        if np.count_nonzero(probs) < events_per_user:
            probs = np.maximum(probs, np.finfo(np.float64).tiny)
            probs /= probs.sum()
        items = rng.choice(len(probs), size=events_per_user, replace=False, p=probs)
        times = np.cumsum(rng.integers(1, MAX_TIME_GAP, size=events_per_user))
        events.extend((int(user), int(i), int(t)) for i, t in zip(items, times))
    return events


def generate(
    cfg: SynthConfig,
    executor: Executor | None = None,
    block_size: int = BLOCK_SIZE,
) -> tuple[InteractionLog, GroundTruth]:
    """
    Draw a corpus where user u picks `events_per_user` distinct items with
    P(i) ∝ exp(uᵀv_i + α_pop·log z*_c(i) + b*_u·s(i)).

    Users are sampled in fixed-size blocks, each with its own seed spawned from
    `cfg.seed`, so the corpus does not depend on the worker count.
    """
    root = np.random.SeedSequence(cfg.seed)
    global_seed, block_root = root.spawn(2)
    rng = np.random.default_rng(global_seed)

    truth = GroundTruth(
        seed=cfg.seed,
        user_factors=rng.standard_normal((cfg.num_users, cfg.d_true)),
        item_factors=rng.standard_normal((cfg.num_items, cfg.d_true)),
        base_popularity=zipf_popularity(cfg.num_items, rng),
        indi_offsets=rng.normal(0.0, cfg.sigma_indi, size=cfg.num_users)
        if cfg.sigma_indi > 0
        else np.zeros(cfg.num_users),
        sensitivity=rng.standard_normal(cfg.num_items),
        alpha_pop=cfg.alpha_pop,
        sigma_indi=cfg.sigma_indi,
        events_per_user=cfg.events_per_user,
    )

    blocks = [
        np.arange(start, min(start + block_size, cfg.num_users))
        for start in range(0, cfg.num_users, block_size)
    ]
    seeds = block_root.spawn(len(blocks))
    if executor is not None:
        chunks = executor.map(
            lambda block, seed: _sample_block(block, truth, cfg.events_per_user, seed), blocks, seeds
        )
    else:
        chunks = (_sample_block(block, truth, cfg.events_per_user, seed) for block, seed in zip(blocks, seeds))
    events = [event for chunk in chunks for event in chunk]

    log = InteractionLog.from_events(events, num_users=cfg.num_users, num_items=cfg.num_items)
    counts = np.bincount(log.items, minlength=cfg.num_items)
    log_run_event(
        "synth_generated",
        {
            "seed": cfg.seed,
            "users": cfg.num_users,
            "items": cfg.num_items,
            "events": log.num_events,
            "alpha_pop": cfg.alpha_pop,
            "sigma_indi": cfg.sigma_indi,
            "gini": round(gini(counts), 4),
            "top10_share": round(top_share(counts), 4),
        },
    )
    return log, truth


def generate_sweep(
    cfg: SynthConfig,
    alphas: Sequence[float],
    executor: Executor | None = None,
) -> Iterator[tuple[float, InteractionLog, GroundTruth]]:
    """One corpus per popularity exponent, all sharing the seed of `cfg`."""
    for alpha in alphas:
        log, truth = generate(cfg.model_copy(update={"alpha_pop": float(alpha)}), executor)
        yield float(alpha), log, truth


def gini(counts: np.ndarray) -> float:
    """Gini coefficient of non-negative counts (0 = uniform)."""
    values = np.sort(np.asarray(counts, dtype=np.float64))
    total = values.sum()
    if len(values) == 0 or total == 0:
        return 0.0
    n = len(values)
    ranks = np.arange(1, n + 1)
    return float(2.0 * np.sum(ranks * values) / (n * total) - (n + 1) / n)


def top_share(counts: np.ndarray, fraction: float = 0.1) -> float:
    """Share of all interactions absorbed by the most popular `fraction` of items."""
    values = np.sort(np.asarray(counts, dtype=np.float64))[::-1]
    total = values.sum()
    if total == 0:
        return 0.0
    top = max(1, int(round(fraction * len(values))))
    return float(values[:top].sum() / total)
