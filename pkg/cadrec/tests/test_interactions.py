"""Tests for interaction loading, chronological splits and popularity counts."""

import logging
from collections import Counter

import numpy as np
import pytest

from cadrec.core.error_handler import DataError, ParseError
from cadrec.data.interactions import (
    InteractionLog,
    item_popularity,
    load_interactions,
    save_interactions,
    split_ia_fia,
    split_manifest,
    temporal_split,
)


def _write(tmp_path, text, name="events.tsv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _log_for(counts):
    """One user per entry of `counts`, each with that many events on distinct items."""
    events = []
    for user, n in enumerate(counts):
        events.extend((user, item, 100 * user + item) for item in range(n))
    return InteractionLog.from_events(events, num_items=max(counts))


def test_load_counts_users_items_events(tmp_path):
    """Test contiguous re-indexing of a three-line file."""
    path = _write(tmp_path, "u1\ti1\t10\nu1\ti2\t20\nu2\ti1\t5\n")
    log = load_interactions(path)

    assert log.num_users == 2
    assert log.num_items == 2
    assert log.num_events == 3
    assert log.user_ids == ["u1", "u2"]
    assert log.item_ids == ["i1", "i2"]


def test_load_keeps_duplicates(tmp_path):
    """Test duplicate (user, item, timestamp) lines stay distinct events."""
    path = _write(tmp_path, "u1\ti1\t10\nu1\ti1\t10\n")
    log = load_interactions(path)
    assert log.num_events == 2


def test_load_whitespace_delimiter_and_columns(tmp_path):
    """Test an ML-100K style file: user item rating timestamp."""
    path = _write(tmp_path, "196 242 3 881250949\n186 302 3 891717742\n")
    log = load_interactions(path, delimiter="whitespace", columns=(0, 1, 3))
    assert log.timestamps.tolist() == [881250949, 891717742]


def test_load_bad_timestamp_reports_line(tmp_path):
    """Test a non-numeric timestamp raises a parse error at line 1."""
    path = _write(tmp_path, "u1\ti1\tabc\n")
    with pytest.raises(ParseError) as exc:
        load_interactions(path)
    assert exc.value.line == 1
    assert "line 1" in str(exc.value)


def test_load_bad_line_in_middle(tmp_path):
    """Test the reported line number points at the malformed line."""
    path = _write(tmp_path, "u1\ti1\t10\nu1\ti2\t20\nu2\ti1\tnope\n")
    with pytest.raises(ParseError) as exc:
        load_interactions(path)
    assert exc.value.line == 3


def test_load_extra_field_reports_line(tmp_path):
    """Test a ragged line with an extra field is reported at its own line."""
    path = _write(tmp_path, "u1\ti1\t10\nu1\ti2\t20\nu2\ti1\t30\textra\nu2\ti2\t40\n")
    with pytest.raises(ParseError) as exc:
        load_interactions(path)
    assert exc.value.line == 3
    assert "line 3" in str(exc.value)


def test_load_extra_field_whitespace_delimiter(tmp_path):
    """Test field counting follows the whitespace delimiter."""
    path = _write(tmp_path, "1 2 3 4\n1 3 3 5\n2 2 3 6 9\n")
    with pytest.raises(ParseError) as exc:
        load_interactions(path, delimiter="whitespace", columns=(0, 1, 3))
    assert exc.value.line == 3


def test_load_stray_quote_reports_line(tmp_path):
    """Test a stray quote does not swallow the following lines."""
    path = _write(tmp_path, "u1\ti1\t10\nu1\ti2\t20\nu2\ti1\t\"30\nu2\ti2\t40\n")
    with pytest.raises(ParseError) as exc:
        load_interactions(path)
    assert exc.value.line == 3


def test_load_quote_inside_id_is_literal(tmp_path):
    """Test quote characters in ids are kept verbatim."""
    path = _write(tmp_path, "u1\t\"i1\t10\nu1\ti2\t20\nu2\ti3\t30\n")
    log = load_interactions(path)
    assert log.num_events == 3
    assert log.item_ids == ['"i1', "i2", "i3"]


def test_load_empty_file(tmp_path):
    """Test an empty file is an empty-corpus error."""
    path = _write(tmp_path, "")
    with pytest.raises(DataError, match="Empty corpus"):
        load_interactions(path)


def test_load_missing_file(tmp_path):
    """Test a missing file is a data error."""
    with pytest.raises(DataError):
        load_interactions(tmp_path / "missing.tsv")


def test_round_trip_preserves_event_multiset(tmp_path):
    """Test saving and reloading keeps the same raw events."""
    path = _write(tmp_path, "a\tx\t3\nb\ty\t1\na\ty\t2\na\tx\t3\n")
    log = load_interactions(path)
    copy = tmp_path / "copy.tsv"
    save_interactions(log, copy)
    again = load_interactions(copy)

    def raw(events_log):
        return Counter(
            (events_log.user_ids[u], events_log.item_ids[i], t) for u, i, t in events_log.events
        )

    assert raw(again) == raw(log)


def test_split_ten_events():
    """Test 10 events split into 7 train, 1 val, 2 test."""
    split = temporal_split(_log_for([10]), (0.7, 0.1, 0.2), min_interactions=5)
    user = split.users[0]
    assert (len(user.train_items), len(user.val_items), len(user.test_items)) == (7, 1, 2)


def test_split_five_events_rounds_train_up():
    """Test 5 events split into 4 train, 0 val, 1 test."""
    split = temporal_split(_log_for([5]), (0.7, 0.1, 0.2), min_interactions=5)
    user = split.users[0]
    assert (len(user.train_items), len(user.val_items), len(user.test_items)) == (4, 0, 1)


def test_split_drops_short_users(caplog):
    """Test users below min_interactions are dropped and logged."""
    with caplog.at_level(logging.INFO):
        split = temporal_split(_log_for([10, 3]), (0.7, 0.1, 0.2), min_interactions=5)
    assert 1 not in split.users
    assert split.dropped_users == (1,)
    assert "users_dropped" in caplog.text


def test_split_no_users_left():
    """Test a corpus where every user is dropped is a data error."""
    with pytest.raises(DataError):
        temporal_split(_log_for([2, 3]), (0.7, 0.1, 0.2), min_interactions=5)


def test_split_is_chronological_with_file_order_ties():
    """Test train‖val‖test is the time-sorted sequence, ties kept in file order."""
    events = [(0, 3, 5), (0, 1, 1), (0, 2, 5), (0, 0, 2), (0, 4, 9), (0, 5, 7)]
    split = temporal_split(InteractionLog.from_events(events), (0.5, 0.0, 0.5), min_interactions=1)
    user = split.users[0]
    ordered = np.concatenate([user.train_items, user.val_items, user.test_items]).tolist()
    assert ordered == [1, 0, 3, 2, 5, 4]
    assert user.train_times.max() <= user.test_times.min()


def test_ia_fia_split_ceiling():
    """Test the earliest ceil(0.8 * 5) items are IA."""
    assert split_ia_fia([10, 11, 12, 13, 14], 0.8) == ([10, 11, 12, 13], [14])


def test_ia_fia_full_fraction():
    """Test fraction 1.0 leaves FIA empty."""
    assert split_ia_fia([1, 2, 3], 1.0) == ([1, 2, 3], [])


def test_ia_fia_dedups_after_split():
    """Test [a, a, b] with two thirds IA gives IA={a}, FIA={b}."""
    assert split_ia_fia([7, 7, 9], 2 / 3) == ([7], [9])


def test_ia_fia_repeat_stays_ia():
    """Test an item repeated after the cut is not also an FIA target."""
    ia, fia = split_ia_fia([1, 2, 1], 0.5)
    assert ia == [1, 2]
    assert fia == []


def test_ia_fia_empty_sequence():
    """Test an empty training sequence is rejected."""
    with pytest.raises(DataError):
        split_ia_fia([], 0.8)


def test_popularity_counts_training_events_only():
    """Test z_c counts train events per item, test-only items stay 0."""
    events = [
        (0, 0, 1), (0, 0, 2), (0, 1, 3), (0, 2, 4), (0, 5, 5),
        (1, 0, 1), (1, 1, 2), (1, 3, 3), (1, 4, 4), (1, 6, 5),
        (2, 0, 1), (2, 3, 2), (2, 4, 3), (2, 1, 4), (2, 7, 5),
    ]
    split = temporal_split(InteractionLog.from_events(events), (0.8, 0.0, 0.2), min_interactions=1)
    pop = item_popularity(split)

    assert pop[0] == 4
    assert pop[1] == 3
    assert pop[5] == 0
    assert pop.counts.sum() == split.train_events


def test_split_manifest_totals(tiny_split):
    """Test the manifest sums match the split."""
    manifest = split_manifest(tiny_split)
    assert manifest.num_users == 3
    assert manifest.train_events == 15
    assert manifest.test_events == 3
    assert [row.ia for row in manifest.users] == [4, 4, 4]
    assert [row.fia for row in manifest.users] == [1, 1, 1]


def test_history_and_ia_input_truncate_to_most_recent(tiny_split):
    """Test encoder inputs keep the most recent items."""
    user = tiny_split.users[0]
    assert user.ia_input(2) == [2, 3]
    assert user.history(3) == [2, 3, 4]
