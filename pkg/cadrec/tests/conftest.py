"""Shared fixtures: tiny hand-built corpora and a small synthetic one on disk."""

import pytest

from cadrec.core.config import RunConfig, SynthConfig
from cadrec.data.interactions import InteractionLog, save_interactions, temporal_split
from cadrec.services.synth import generate


@pytest.fixture
def tiny_log():
    """Three users, eight items, six chronological events each."""
    sequences = {
        0: [0, 1, 2, 3, 4, 5],
        1: [1, 2, 6, 3, 7, 0],
        2: [5, 4, 2, 7, 6, 1],
    }
    events = [
        (user, item, 10 * step + user)
        for user, items in sequences.items()
        for step, item in enumerate(items)
    ]
    return InteractionLog.from_events(events, num_users=3, num_items=8)


@pytest.fixture
def tiny_split(tiny_log):
    """Split of `tiny_log`: 5 train (4 IA + 1 FIA), 0 val, 1 test per user."""
    return temporal_split(tiny_log, (0.7, 0.1, 0.2), min_interactions=1, ia_fraction=0.8)


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """Small planted-bias corpus written as a tab-separated interaction file."""
    path = tmp_path_factory.mktemp("corpus") / "interactions.tsv"
    log, _ = generate(
        SynthConfig(num_users=60, num_items=80, events_per_user=15, alpha_pop=1.0, sigma_indi=0.5, seed=11)
    )
    save_interactions(log, path)
    return path


@pytest.fixture(scope="session")
def small_config(synth_corpus):
    """Fast RunConfig over `synth_corpus`."""
    return RunConfig(
        data_path=str(synth_corpus),
        d_m=8,
        num_heads=2,
        batch_size=16,
        epochs=3,
        patience=2,
        learning_rate=0.05,
        sd_gap_k=[5, 10],
        corr_users=40,
        seed=5,
    )
