"""Interaction log ingestion, chronological splits and popularity counts."""

import csv
import logging
import math
import re
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from cadrec.core.error_handler import DataError, ParseError, log_run_event
from cadrec.core.models import SplitManifest, UserSplitCounts

logger = logging.getLogger(__name__)

# Ratio products such as 0.7 * 10 must round as written.
_RATIO_TOLERANCE = 1e-9
_PARSER_LINE = re.compile(r"line (\d+)")


def _frozen(values) -> np.ndarray:
    array = np.asarray(values, dtype=np.int64)
    array.setflags(write=False)
    return array


def _ceil(x: float) -> int:
    return math.ceil(x - _RATIO_TOLERANCE)


def _floor(x: float) -> int:
    return math.floor(x + _RATIO_TOLERANCE)


def _unique_in_order(items: Sequence[int]) -> list[int]:
    return list(dict.fromkeys(int(i) for i in items))


@dataclass(frozen=True)
class InteractionLog:
    """Timestamped (user, item) events with contiguous integer ids."""

    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    user_ids: list[str]
    item_ids: list[str]

    def __post_init__(self):
        if not (len(self.users) == len(self.items) == len(self.timestamps)):
            raise DataError("users, items and timestamps must have equal length")
        if self.num_users <= 0 or self.num_items <= 0:
            raise DataError("interaction log needs at least one user and one item")
        if len(self.users) and (self.users.max() >= self.num_users or self.items.max() >= self.num_items):
            raise DataError("event index out of range")

    @classmethod
    def from_events(
        cls,
        events: Sequence[tuple[int, int, int]],
        num_users: int | None = None,
        num_items: int | None = None,
    ) -> "InteractionLog":
        """Build a log from already-indexed (user, item, timestamp) triples."""
        if not events:
            raise DataError("Empty corpus: no events")
        users, items, timestamps = (np.asarray(col, dtype=np.int64) for col in zip(*events))
        m = int(num_users if num_users is not None else users.max() + 1)
        n = int(num_items if num_items is not None else items.max() + 1)
        return cls(
            users=_frozen(users),
            items=_frozen(items),
            timestamps=_frozen(timestamps),
            user_ids=[str(u) for u in range(m)],
            item_ids=[str(i) for i in range(n)],
        )

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    @property
    def num_events(self) -> int:
        return len(self.users)

    @property
    def events(self) -> list[tuple[int, int, int]]:
        return list(zip(self.users.tolist(), self.items.tolist(), self.timestamps.tolist()))


@dataclass(frozen=True)
class UserSplit:
    """Chronological partition of one user's events."""

    user: int
    train_items: np.ndarray
    train_times: np.ndarray
    val_items: np.ndarray
    val_times: np.ndarray
    test_items: np.ndarray
    test_times: np.ndarray
    ia_items: tuple[int, ...]
    fia_items: tuple[int, ...]

    def ia_input(self, max_seq_len: int) -> list[int]:
        """IA items fed to the encoder during training, most recent `max_seq_len` kept."""
        return list(self.ia_items[-max_seq_len:])

    def history(self, max_seq_len: int) -> list[int]:
        """Distinct training items fed to the encoder at evaluation time."""
        return _unique_in_order(self.train_items)[-max_seq_len:]


@dataclass(frozen=True)
class SplitDataset:
    """Per-user train/val/test partitions plus the IA/FIA sub-split of train."""

    num_users: int
    num_items: int
    users: dict[int, UserSplit]
    dropped_users: tuple[int, ...] = ()
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)

    def __iter__(self) -> Iterator[UserSplit]:
        return iter(self.users.values())

    def __len__(self) -> int:
        return len(self.users)

    @property
    def train_events(self) -> int:
        return sum(len(u.train_items) for u in self)

    def train_exclusions(self, user: int) -> np.ndarray:
        return np.unique(self.users[user].train_items)


@dataclass(frozen=True)
class PopularityTable:
    """Training interaction count z_c of every item."""

    counts: np.ndarray

    def __len__(self) -> int:
        return len(self.counts)

    def __getitem__(self, item: int) -> int:
        return int(self.counts[item])


def _check_field_counts(path: Path, delimiter: str | None) -> None:
    """Reject a line with more fields than the first data line; `None` splits on whitespace."""
    expected = None
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            found = len(line.split(delimiter))
            if expected is None:
                expected = found
            elif found > expected:
                raise ParseError(f"expected {expected} fields, found {found}", line=line_no)


def load_interactions(
    path: str | Path,
    delimiter: str = "\t",
    columns: Sequence[int] = (0, 1, 2),
) -> InteractionLog:
    """
    Load an implicit-feedback log: one `<user><sep><item><sep><timestamp>` event per line.

    Raw user and item ids are re-indexed contiguously in order of first appearance.
    Duplicate events are kept.

    Raises:
        DataError: missing or empty file
        ParseError: malformed line (carries the 1-based line number)
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Interaction file not found: {path}")

    whitespace = delimiter in ("whitespace", " ")
    _check_field_counts(path, None if whitespace else delimiter)
    try:
        frame = pd.read_csv(
            path,
            sep=r"\s+" if whitespace else delimiter,
            header=None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            quoting=csv.QUOTE_NONE,
        )
    except pd.errors.EmptyDataError as e:
        raise DataError(f"Empty corpus: {path}") from e
    except pd.errors.ParserError as e:
        match = _PARSER_LINE.search(str(e))
        raise ParseError(str(e), line=int(match.group(1)) if match else None) from e

    frame = frame.fillna("").apply(lambda col: col.str.strip())
    frame = frame[(frame != "").any(axis=1)]
    if frame.empty:
        raise DataError(f"Empty corpus: {path}")

    user_col, item_col, time_col = columns
    if frame.shape[1] <= max(columns):
        raise ParseError(
            f"expected at least {max(columns) + 1} fields, found {frame.shape[1]}",
            line=int(frame.index[0]) + 1,
        )

    events = frame.iloc[:, [user_col, item_col, time_col]].copy()
    events.columns = ["user", "item", "timestamp"]

    missing = (events["user"] == "") | (events["item"] == "") | (events["timestamp"] == "")
    if missing.any():
        line = int(events.index[missing.to_numpy()][0]) + 1
        raise ParseError("missing user, item or timestamp", line=line)

    timestamps = pd.to_numeric(events["timestamp"], errors="coerce")
    bad = timestamps.isna() | ~np.isfinite(timestamps) | (timestamps != np.floor(timestamps))
    if bad.any():
        row = events.index[bad.to_numpy()][0]
        value = events.at[row, "timestamp"]
        raise ParseError(f"cannot parse timestamp '{value}'", line=int(row) + 1)

    user_codes, user_ids = pd.factorize(events["user"])
    item_codes, item_ids = pd.factorize(events["item"])

    log = InteractionLog(
        users=_frozen(user_codes),
        items=_frozen(item_codes),
        timestamps=_frozen(timestamps.to_numpy(dtype=np.int64)),
        user_ids=[str(u) for u in user_ids],
        item_ids=[str(i) for i in item_ids],
    )
    log_run_event(
        "data_loaded",
        {"path": str(path), "users": log.num_users, "items": log.num_items, "events": log.num_events},
    )
    return log


def save_interactions(log: InteractionLog, path: str | Path, delimiter: str = "\t") -> None:
    """Write the log back with raw ids, one event per line."""
    sep = " " if delimiter == "whitespace" else delimiter
    frame = pd.DataFrame(
        {
            "user": np.asarray(log.user_ids, dtype=object)[log.users],
            "item": np.asarray(log.item_ids, dtype=object)[log.items],
            "timestamp": log.timestamps,
        }
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, sep=sep, header=False, index=False)


def split_ia_fia(train_seq: Sequence[int], ia_fraction: float) -> tuple[list[int], list[int]]:
    """
    Split a chronological training sequence into IA (input) and FIA (target) items.

    The earliest ceil(ia_fraction * len) events are IA, the rest FIA. Each side is
    deduplicated in order of first occurrence; FIA drops items already in IA.
    """
    if len(train_seq) == 0:
        raise DataError("train_seq must be nonempty")
    if not 0.0 < ia_fraction <= 1.0:
        raise DataError(f"ia_fraction must be in (0, 1], got {ia_fraction}")
    cut = max(1, _ceil(ia_fraction * len(train_seq)))
    ia = _unique_in_order(train_seq[:cut])
    seen = set(ia)
    fia = [item for item in _unique_in_order(train_seq[cut:]) if item not in seen]
    return ia, fia


def temporal_split(
    log: InteractionLog,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    min_interactions: int = 5,
    ia_fraction: float = 0.8,
) -> SplitDataset:
    """
    Partition every user's events chronologically into train/val/test.

    Train takes ceil(r_train * n) events, test floor(r_test * n), val the
    remainder. Equal timestamps keep their file order. Users with fewer than
    `min_interactions` events are dropped and logged.
    """
    train_ratio, _, test_ratio = ratios
    if abs(sum(ratios) - 1.0) > _RATIO_TOLERANCE:
        raise DataError(f"split ratios must sum to 1, got {ratios}")

    order = np.lexsort((np.arange(log.num_events), log.timestamps, log.users))
    users = log.users[order]
    items = log.items[order]
    times = log.timestamps[order]
    starts = np.flatnonzero(np.r_[True, users[1:] != users[:-1]])
    ends = np.r_[starts[1:], len(users)]

    splits: dict[int, UserSplit] = {}
    dropped: list[int] = []
    no_val = 0
    for start, end in zip(starts, ends):
        user = int(users[start])
        n = int(end - start)
        if n < min_interactions:
            dropped.append(user)
            continue
        n_train = min(n, _ceil(train_ratio * n))
        n_test = min(n - n_train, _floor(test_ratio * n))
        n_val = n - n_train - n_test
        if n_val == 0:
            no_val += 1

        seq_items = items[start:end]
        seq_times = times[start:end]
        train = seq_items[:n_train]
        ia, fia = split_ia_fia(train.tolist(), ia_fraction)
        splits[user] = UserSplit(
            user=user,
            train_items=_frozen(train),
            train_times=_frozen(seq_times[:n_train]),
            val_items=_frozen(seq_items[n_train : n_train + n_val]),
            val_times=_frozen(seq_times[n_train : n_train + n_val]),
            test_items=_frozen(seq_items[n_train + n_val :]),
            test_times=_frozen(seq_times[n_train + n_val :]),
            ia_items=tuple(ia),
            fia_items=tuple(fia),
        )

    if dropped:
        log_run_event(
            "users_dropped",
            {"count": len(dropped), "min_interactions": min_interactions},
        )
        logger.debug(f"Dropped users: {[log.user_ids[u] for u in dropped]}")
    if no_val:
        logger.info(f"{no_val} users have no validation events; they are still trained and tested")
    if not splits:
        raise DataError(f"No user has at least {min_interactions} interactions")

    return SplitDataset(
        num_users=log.num_users,
        num_items=log.num_items,
        users=splits,
        dropped_users=tuple(dropped),
        user_ids=log.user_ids,
        item_ids=log.item_ids,
    )


def item_popularity(split: SplitDataset) -> PopularityTable:
    """Count training events per item; validation and test events never count."""
    train = [u.train_items for u in split]
    flat = np.concatenate(train) if train else np.empty(0, dtype=np.int64)
    counts = np.bincount(flat, minlength=split.num_items).astype(np.int64)
    counts.setflags(write=False)
    return PopularityTable(counts=counts)


def split_manifest(split: SplitDataset) -> SplitManifest:
    """Summarize per-user partition sizes."""
    rows = [
        UserSplitCounts(
            user=split.user_ids[u.user] if split.user_ids else str(u.user),
            train=len(u.train_items),
            val=len(u.val_items),
            test=len(u.test_items),
            ia=len(u.ia_items),
            fia=len(u.fia_items),
        )
        for u in split
    ]
    val_events = sum(r.val for r in rows)
    test_events = sum(r.test for r in rows)
    train_events = sum(r.train for r in rows)
    return SplitManifest(
        num_users=split.num_users,
        num_items=split.num_items,
        num_events=train_events + val_events + test_events,
        train_events=train_events,
        val_events=val_events,
        test_events=test_events,
        dropped_users=[split.user_ids[u] if split.user_ids else str(u) for u in split.dropped_users],
        users=rows,
    )
