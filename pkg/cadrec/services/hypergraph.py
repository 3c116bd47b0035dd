"""Item co-occurrence hypergraph: binary adjacency, symmetric normalization and per-user slices."""

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from cadrec.core.error_handler import ContractViolation, DataError
from cadrec.data.interactions import SplitDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperGraph:
    """
    Binary symmetric item adjacency A (with self-loops on interacted items),
    per-row nonzero counts D and Â = D^-1/2 A D^-1/2, all stored as sorted CSR.
    """

    adjacency: sp.csr_matrix
    degree: np.ndarray
    normalized: sp.csr_matrix

    @property
    def num_items(self) -> int:
        return self.adjacency.shape[0]

    def dense(self) -> np.ndarray:
        return self.normalized.toarray()


@dataclass(frozen=True)
class HyperedgeSlice:
    """Dense L x L block of Â restricted to one user's items, in the given order."""

    items: tuple[int, ...]
    sub_adjacency: np.ndarray

    def __len__(self) -> int:
        return len(self.items)


def _incidence(hyperedges: Iterable[Sequence[int]], num_items: int) -> sp.csr_matrix:
    rows: list[int] = []
    cols: list[int] = []
    for edge, items in enumerate(hyperedges):
        unique = np.unique(np.asarray(items, dtype=np.int64))
        rows.extend([edge] * len(unique))
        cols.extend(unique.tolist())
    num_edges = (rows[-1] + 1) if rows else 0
    data = np.ones(len(rows), dtype=np.float64)
    return sp.csr_matrix((data, (rows, cols)), shape=(num_edges, num_items))


def build_from_hyperedges(hyperedges: Iterable[Sequence[int]], num_items: int) -> HyperGraph:
    """
    Build the graph from explicit hyperedges (one item set per user).

    a_jk = 1 when some hyperedge holds both j and k; a_jj = 1 for every item in
    at least one hyperedge. Items in no hyperedge get an all-zero row.
    """
    incidence = _incidence(hyperedges, num_items)
    if incidence.nnz == 0:
        raise DataError("Cannot build a hypergraph from empty hyperedges")

    cooccurrence = (incidence.T @ incidence).tocsr()
    adjacency = cooccurrence.copy()
    adjacency.data = np.ones_like(adjacency.data)
    adjacency.eliminate_zeros()
    adjacency.sort_indices()

    # Nonzero count per row; equals the row sum because A is binary.
    degree = np.diff(adjacency.indptr).astype(np.float64)
    with np.errstate(divide="ignore"):
        d_inv_sqrt = 1.0 / np.sqrt(degree)
    d_inv_sqrt[np.isinf(d_inv_sqrt)] = 0.0
    scale = sp.diags(d_inv_sqrt, format="csr")
    normalized = (scale @ adjacency @ scale).tocsr()
    normalized.sort_indices()

    isolated = int(np.sum(degree == 0))
    logger.info(
        f"Hypergraph built: {num_items} items, {adjacency.nnz} nonzeros, {isolated} isolated items"
    )
    return HyperGraph(adjacency=adjacency, degree=degree, normalized=normalized)


def build_cooccurrence(split: SplitDataset, num_items: int | None = None) -> HyperGraph:
    """Build the co-occurrence graph from every retained user's full training sequence."""
    n = split.num_items if num_items is None else num_items
    return build_from_hyperedges((u.train_items for u in split), n)


def slice_graph(graph: HyperGraph, items: Sequence[int]) -> HyperedgeSlice:
    """
    Gather Â[items][:, items] as a dense block without touching the other N - L columns.

    Each row's sorted column indices are binary-searched for the requested items.
    """
    ids = np.asarray(items, dtype=np.int64)
    if len(ids) == 0:
        return HyperedgeSlice(items=(), sub_adjacency=np.zeros((0, 0)))
    if len(np.unique(ids)) != len(ids):
        raise ContractViolation("slice items must be distinct")
    if ids.min() < 0 or ids.max() >= graph.num_items:
        raise ContractViolation(f"item id out of range for {graph.num_items} items")

    matrix = graph.normalized
    block = np.zeros((len(ids), len(ids)))
    for p, item in enumerate(ids):
        start, end = matrix.indptr[item], matrix.indptr[item + 1]
        if start == end:
            continue
        columns = matrix.indices[start:end]
        positions = np.searchsorted(columns, ids)
        positions = np.minimum(positions, end - start - 1)
        hit = columns[positions] == ids
        block[p, hit] = matrix.data[start:end][positions[hit]]
    return HyperedgeSlice(items=tuple(ids.tolist()), sub_adjacency=block)


def dump_graph(graph: HyperGraph, path: str | Path) -> None:
    """Write Â as `row col value` triples."""
    coo = graph.normalized.tocoo()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        for row, col, value in zip(coo.row, coo.col, coo.data):
            handle.write(f"{row} {col} {value:.17g}\n")
