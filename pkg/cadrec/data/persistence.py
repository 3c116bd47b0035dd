"""Checkpoint codec and the text/CSV artifacts written by every command."""

import logging
import struct
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import pandas as pd

from cadrec.core.config import RunConfig, SynthConfig
from cadrec.core.error_handler import DataError, ModelError, log_run_event
from cadrec.core.models import DiagnosticRow, EpochLog, RankingReport, SplitManifest, SweepRow
from cadrec.data.interactions import SplitDataset
from cadrec.services.encoders import ModelParams
from cadrec.services.synth import GroundTruth

logger = logging.getLogger(__name__)

MAGIC = b"CADRECKP"
VERSION = 1
# version, M, N, d_m, z_h, z_l, number of tensor sections
HEADER = struct.Struct("<7I")
SECTION_NAMES = ("item_embeddings", "indiv_bias", "w_query", "w_key", "w_value")


def save_checkpoint(params: ModelParams, path: str | Path) -> Path:
    """
    Write params as a little-endian binary checkpoint.

    Layout: magic, header, then per tensor: uint16 name length, utf-8 name,
    uint8 ndim, uint32 shape, float64 data in C order. Identical params give
    identical bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = params.tensors()
    chunks = [
        MAGIC,
        HEADER.pack(
            VERSION,
            params.num_users,
            params.num_items,
            params.d_m,
            params.num_heads,
            params.num_layers,
            len(tensors),
        ),
    ]
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    path.write_bytes(b"".join(chunks))
    log_run_event("checkpoint_written", {"path": str(path), "bytes": path.stat().st_size})
    return path


class _Reader:
    def __init__(self, payload: bytes, source: Path):
        self.payload = payload
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise ModelError(f"Truncated checkpoint: {self.source}")
        chunk = self.payload[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> ModelParams:
    """Read a checkpoint written by `save_checkpoint`."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise ModelError(f"Not a checkpoint file: {path}")
    version, m, n, d_m, z_h, z_l, count = HEADER.unpack(reader.take(HEADER.size))
    if version != VERSION:
        raise ModelError(f"Unsupported checkpoint version {version}")

    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64)
        tensors[name] = data.reshape(shape)

    missing = [name for name in SECTION_NAMES if name not in tensors]
    if missing:
        raise ModelError(f"Checkpoint {path} lacks tensors {missing}")
    params = ModelParams(**{name: tensors[name] for name in SECTION_NAMES})
    if (params.num_users, params.num_items, params.d_m, params.num_heads, params.num_layers) != (m, n, d_m, z_h, z_l):
        raise ModelError(f"Checkpoint {path}: header dimensions disagree with tensor shapes")
    logger.info(f"Loaded checkpoint {path}: M={m} N={n} d_m={d_m} z_h={z_h} z_l={z_l}")
    return params


def check_compatible(params: ModelParams, split: SplitDataset, config: RunConfig) -> None:
    """Raise ModelError when checkpoint dimensions do not fit the data and config."""
    expected = {
        "num_users": split.num_users,
        "num_items": split.num_items,
        "d_m": config.d_m,
        "num_heads": config.num_heads,
        "num_layers": config.num_layers,
    }
    for name, value in expected.items():
        actual = getattr(params, name)
        if actual != value:
            raise ModelError(f"Checkpoint {name}={actual} does not match data/config {name}={value}")


def write_config_snapshot(config: RunConfig | SynthConfig, out_dir: str | Path) -> Path:
    """Resolved config as `config.snapshot`; loading it back reproduces the run."""
    path = Path(out_dir) / "config.snapshot"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.to_text())
    return path


def write_index_maps(split: SplitDataset, out_dir: str | Path) -> tuple[Path, Path]:
    """Two-column `index raw_id` files for users and items."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    user_path, item_path = out / "user_index.txt", out / "item_index.txt"
    for path, ids in ((user_path, split.user_ids), (item_path, split.item_ids)):
        pd.DataFrame({"index": range(len(ids)), "raw_id": ids}).to_csv(
            path, sep="\t", header=False, index=False
        )
    return user_path, item_path


def write_split_manifest(manifest: SplitManifest, path: str | Path) -> Path:
    """Key-value manifest: corpus totals, then one line per retained user."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"num_users={manifest.num_users}",
        f"num_items={manifest.num_items}",
        f"num_events={manifest.num_events}",
        f"train_events={manifest.train_events}",
        f"val_events={manifest.val_events}",
        f"test_events={manifest.test_events}",
        f"dropped_users={','.join(manifest.dropped_users)}",
    ]
    lines.extend(
        f"user={row.user} train={row.train} val={row.val} test={row.test} ia={row.ia} fia={row.fia}"
        for row in manifest.users
    )
    path.write_text("\n".join(lines) + "\n")
    return path


def write_metrics(report: RankingReport, out_dir: str | Path, prefix: str = "") -> dict[str, Path]:
    """metrics.txt (key=value), metrics.csv (K,recall,ndcg) and diagnostics.csv (k,sd_top,sd_bottom)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "text": out / f"{prefix}metrics.txt",
        "table": out / f"{prefix}metrics.csv",
        "diagnostics": out / f"{prefix}diagnostics.csv",
    }

    lines = [f"split={report.split}", f"users={report.num_users}"]
    for row in report.metrics:
        lines.append(f"recall@{row.k}={row.recall:.6f}")
        lines.append(f"ndcg@{row.k}={row.ndcg:.6f}")
    if report.pop_correlation is not None:
        lines.append(f"pop_correlation={report.pop_correlation.rho:.6f}")
        lines.append(f"pop_correlation_degenerate={str(report.pop_correlation.degenerate).lower()}")
    paths["text"].write_text("\n".join(lines) + "\n")

    pd.DataFrame(
        [(row.k, row.recall, row.ndcg) for row in report.metrics], columns=["K", "recall", "ndcg"]
    ).to_csv(paths["table"], index=False)
    write_diagnostics(report.diagnostics, paths["diagnostics"])
    return paths


def write_diagnostics(rows: Sequence[DiagnosticRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(
        [(row.k, row.sd_top, row.sd_bottom) for row in rows], columns=["k", "sd_top", "sd_bottom"]
    ).to_csv(path, index=False)
    return path


def write_gap_pairs(first: Sequence[DiagnosticRow], second: Sequence[DiagnosticRow], path: str | Path) -> Path:
    """Side-by-side sd_gap rows of two checkpoints, matched on k."""
    other = {row.k: row for row in second}
    records = [
        (row.k, row.sd_top, row.sd_bottom, other[row.k].sd_top, other[row.k].sd_bottom)
        for row in first
        if row.k in other
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(
        records, columns=["k", "sd_top_a", "sd_bottom_a", "sd_top_b", "sd_bottom_b"]
    ).to_csv(path, index=False)
    return path


def write_topk(report: RankingReport, split: SplitDataset, path: str | Path) -> Path:
    """One line per user: raw user id followed by the ranked raw item ids."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        for user, items in sorted(report.top_k.items()):
            raw_items = " ".join(split.item_ids[i] for i in items)
            handle.write(f"{split.user_ids[user]}\t{raw_items}\n")
    return path


def write_embeddings(psi: np.ndarray, item_ids: Sequence[str], path: str | Path) -> Path:
    """`item_id v1 ... v_dm` rows for external visualization."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        for raw_id, row in zip(item_ids, psi):
            handle.write(raw_id + " " + " ".join(f"{v:.17g}" for v in row) + "\n")
    return path


def write_train_log(history: Sequence[EpochLog], path: str | Path, k: int = 20) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(
        [(e.epoch, e.loss, e.val_recall, e.val_ndcg, e.seconds) for e in history],
        columns=["epoch", "loss", f"val_R@{k}", f"val_N@{k}", "seconds"],
    ).to_csv(path, index=False)
    return path


def write_sweep(rows: Sequence[SweepRow], path: str | Path, k: int = 20) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = [{**row.params, f"recall@{k}": row.recall, f"ndcg@{k}": row.ndcg} for row in rows]
    pd.DataFrame(records).to_csv(path, index=False)
    return path


def write_ground_truth(truth: GroundTruth, path: str | Path) -> Path:
    """
    Sidecar of a synthetic corpus. The header echoes the seed and the corpus shape;
    sections list the planted user factors plus offsets b*_u, then item factors,
    z*_c and s(i).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        num_users, d_true = truth.user_factors.shape
        handle.write(
            f"# seed={truth.seed} alpha_pop={truth.alpha_pop} sigma_indi={truth.sigma_indi}"
            f" num_users={num_users} num_items={len(truth.base_popularity)} d_true={d_true}"
            f" events_per_user={truth.events_per_user}\n"
        )
        handle.write("[users] index b_u factors...\n")
        for u, (offset, factors) in enumerate(zip(truth.indi_offsets, truth.user_factors)):
            handle.write(f"{u} {offset:.17g} " + " ".join(f"{v:.17g}" for v in factors) + "\n")
        handle.write("[items] index z_c s_i factors...\n")
        rows = zip(truth.base_popularity, truth.sensitivity, truth.item_factors)
        for i, (pop, sens, factors) in enumerate(rows):
            handle.write(f"{i} {pop:.17g} {sens:.17g} " + " ".join(f"{v:.17g}" for v in factors) + "\n")
    return path
