"""
Contextualized hypergraph convolution.

One user's items form a hyperedge; the layer mixes their embeddings with
a·Â[S] + b·Norm(QKᵀ/√d_m) and a shared ELU value path, heads are summed, and the
last layer is mean-pooled and L2-normalized into the user vector φ(u).
Every forward function has a matching backward so training needs no autodiff.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from cadrec.core.config import HyperParams
from cadrec.core.error_handler import ContractViolation
from cadrec.services.encoders import (
    NORM_EPS,
    ModelParams,
    perturb_with_bias,
    perturb_with_bias_backward,
)
from cadrec.services.hypergraph import HyperGraph, slice_graph

logger = logging.getLogger(__name__)

NormMode = Literal["row", "frobenius", "column"]


def elu(x: np.ndarray) -> np.ndarray:
    """ELU with alpha = 1."""
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def normalize_scores(scores: np.ndarray, mode: NormMode = "row") -> tuple[np.ndarray, np.ndarray]:
    """
    L2-normalize an attention score matrix.

    Returns the normalized matrix and the norms used (per row, per column, or a
    single Frobenius norm). Zero rows/columns stay zero.
    """
    if mode == "column":
        normalized, norms = normalize_scores(scores.T, "row")
        return normalized.T, norms
    if mode == "frobenius":
        norm = np.linalg.norm(scores)
        if norm <= NORM_EPS:
            return np.zeros_like(scores), np.array([0.0])
        return scores / norm, np.array([norm])
    if mode != "row":
        raise ContractViolation(f"unknown attention norm '{mode}'")
    norms = np.linalg.norm(scores, axis=1)
    safe = np.where(norms > NORM_EPS, norms, 1.0)
    normalized = np.where((norms > NORM_EPS)[:, None], scores / safe[:, None], 0.0)
    return normalized, norms


def normalize_scores_backward(
    normalized: np.ndarray,
    norms: np.ndarray,
    grad_normalized: np.ndarray,
    mode: NormMode = "row",
) -> np.ndarray:
    """Gradient of `normalize_scores` w.r.t. the raw scores."""
    if mode == "column":
        return normalize_scores_backward(normalized.T, norms, grad_normalized.T, "row").T
    if mode == "frobenius":
        norm = float(norms[0])
        if norm <= NORM_EPS:
            return np.zeros_like(grad_normalized)
        return (grad_normalized - normalized * np.sum(normalized * grad_normalized)) / norm
    projection = np.sum(normalized * grad_normalized, axis=1, keepdims=True)
    safe = np.where(norms > NORM_EPS, norms, 1.0)[:, None]
    grad = (grad_normalized - normalized * projection) / safe
    return np.where((norms > NORM_EPS)[:, None], grad, 0.0)


@dataclass
class HeadActivation:
    """Intermediate values of one attention head."""

    query: np.ndarray | None
    key: np.ndarray | None
    scores: np.ndarray | None
    attention: np.ndarray | None
    norms: np.ndarray | None
    mixing: np.ndarray


@dataclass
class LayerActivation:
    """Intermediate values of one HGC layer for one user."""

    inputs: np.ndarray
    values: np.ndarray
    activated: np.ndarray
    heads: list[HeadActivation]
    output: np.ndarray

    @property
    def perturbations(self) -> list[np.ndarray]:
        return [h.mixing for h in self.heads]


def _attention_terms(
    embeddings: np.ndarray,
    w_query: np.ndarray,
    w_key: np.ndarray,
    norm: NormMode,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    query = embeddings @ w_query
    key = embeddings @ w_key
    scores = query @ key.T / math.sqrt(embeddings.shape[1])
    attention, norms = normalize_scores(scores, norm)
    return query, key, scores, attention, norms


def attention_perturbation(
    embeddings: np.ndarray,
    w_query: np.ndarray,
    w_key: np.ndarray,
    delta: float,
    norm: NormMode = "row",
) -> np.ndarray:
    """Δ' = δ · Norm(QKᵀ / √d_m) with Q = E W^Q and K = E W^K."""
    if embeddings.shape[0] < 1:
        raise ContractViolation("attention needs at least one item")
    if delta == 0.0:
        return np.zeros((embeddings.shape[0], embeddings.shape[0]))
    *_, attention, _ = _attention_terms(embeddings, w_query, w_key, norm)
    return delta * attention


def _head_forward(
    adj_slice: np.ndarray,
    embeddings: np.ndarray,
    w_query: np.ndarray,
    w_key: np.ndarray,
    structure_weight: float,
    delta: float,
    norm: NormMode,
) -> HeadActivation:
    structural = structure_weight * adj_slice if structure_weight != 1.0 else adj_slice
    if delta == 0.0:
        # SA-free path: no query/key computation at all.
        return HeadActivation(None, None, None, None, None, mixing=structural)
    query, key, scores, attention, norms = _attention_terms(embeddings, w_query, w_key, norm)
    return HeadActivation(query, key, scores, attention, norms, mixing=structural + delta * attention)


def _check_shapes(adj_slice: np.ndarray, embeddings: np.ndarray, w_value: np.ndarray) -> None:
    length, d_m = embeddings.shape
    if adj_slice.shape != (length, length):
        raise ContractViolation(f"slice shape {adj_slice.shape} does not match {length} items")
    if w_value.shape != (d_m, d_m):
        raise ContractViolation(f"value projection shape {w_value.shape} does not match d_m={d_m}")


def hgc_forward(
    adj_slice: np.ndarray,
    embeddings: np.ndarray,
    w_query: np.ndarray,
    w_key: np.ndarray,
    w_value: np.ndarray,
    delta: float,
    norm: NormMode = "row",
    structure_weight: float = 1.0,
) -> np.ndarray:
    """Single head: Ê = (a·Â[S] + Δ') · ELU(E W_1)."""
    _check_shapes(adj_slice, embeddings, w_value)
    mixing = structure_weight * adj_slice + attention_perturbation(embeddings, w_query, w_key, delta, norm)
    return mixing @ elu(embeddings @ w_value)


def multi_head(head_outputs: Sequence[np.ndarray]) -> np.ndarray:
    """Aggregate heads by elementwise summation."""
    if not head_outputs:
        raise ContractViolation("multi_head needs at least one head")
    shape = head_outputs[0].shape
    if any(h.shape != shape for h in head_outputs):
        raise ContractViolation("all heads must share one shape")
    return np.sum(np.stack(head_outputs), axis=0)


def layer_forward(
    adj_slice: np.ndarray,
    embeddings: np.ndarray,
    w_query: np.ndarray,
    w_key: np.ndarray,
    w_value: np.ndarray,
    delta: float,
    norm: NormMode = "row",
    structure_weight: float = 1.0,
) -> LayerActivation:
    """One HGC layer over all heads; w_query/w_key are (z_h, d_m, d_m)."""
    _check_shapes(adj_slice, embeddings, w_value)
    values = embeddings @ w_value
    activated = elu(values)
    heads = [
        _head_forward(adj_slice, embeddings, w_query[h], w_key[h], structure_weight, delta, norm)
        for h in range(w_query.shape[0])
    ]
    output = multi_head([head.mixing @ activated for head in heads])
    return LayerActivation(embeddings, values, activated, heads, output)


def layer_backward(
    activation: LayerActivation,
    grad_output: np.ndarray,
    w_query: np.ndarray,
    w_key: np.ndarray,
    w_value: np.ndarray,
    delta: float,
    norm: NormMode = "row",
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Backpropagate through `layer_forward`.

    Returns gradients w.r.t. (inputs, w_query, w_key, w_value).
    """
    inputs = activation.inputs
    d_m = inputs.shape[1]
    total_mixing = np.sum(np.stack(activation.perturbations), axis=0)

    grad_activated = total_mixing.T @ grad_output
    grad_values = grad_activated * elu_grad(activation.values)
    grad_w_value = inputs.T @ grad_values
    grad_inputs = grad_values @ w_value.T

    grad_w_query = np.zeros_like(w_query)
    grad_w_key = np.zeros_like(w_key)
    if delta != 0.0:
        # d(loss)/d(mixing) is identical for every head.
        grad_attention = delta * (grad_output @ activation.activated.T)
        scale = 1.0 / math.sqrt(d_m)
        for h, head in enumerate(activation.heads):
            grad_scores = normalize_scores_backward(head.attention, head.norms, grad_attention, norm)
            grad_scores = grad_scores * scale
            grad_query = grad_scores @ head.key
            grad_key = grad_scores.T @ head.query
            grad_w_query[h] = inputs.T @ grad_query
            grad_w_key[h] = inputs.T @ grad_key
            grad_inputs += grad_query @ w_query[h].T + grad_key @ w_key[h].T

    return grad_inputs, grad_w_query, grad_w_key, grad_w_value


def _pool(hidden: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
    """Mean pool, its norm, and the L2-normalized user vector."""
    pooled = hidden.mean(axis=0)
    norm = float(np.linalg.norm(pooled))
    phi = pooled / norm if norm > NORM_EPS else np.zeros_like(pooled)
    return pooled, norm, phi


@dataclass
class UserForward:
    """Cached forward pass of one user, enough to run the backward pass."""

    user: int
    items: tuple[int, ...]
    adj_slice: np.ndarray
    base: np.ndarray
    inputs: np.ndarray
    layers: list[LayerActivation] = field(default_factory=list)
    pooled: np.ndarray | None = None
    pooled_norm: float = 0.0
    phi: np.ndarray | None = None


@dataclass
class UserGradients:
    """Sparse gradient contribution of one user."""

    items: np.ndarray
    item_rows: np.ndarray
    user: int
    bias_row: np.ndarray
    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray


def forward_user(
    user: int,
    items: Sequence[int],
    graph: HyperGraph,
    params: ModelParams,
    hyper: HyperParams,
    adj_slice: np.ndarray | None = None,
) -> UserForward:
    """
    Encode one user from their item list.

    E^(0) is the item block perturbed by the user's individual bias; z_l layers
    follow; φ(u) = Norm(AvgPool(h)).
    """
    if len(items) == 0:
        raise ContractViolation(f"user {user} has no input items")
    if adj_slice is None:
        adj_slice = slice_graph(graph, items).sub_adjacency
    ids = np.asarray(items, dtype=np.int64)
    base = params.item_embeddings[ids]
    if hyper.use_individual_bias:
        inputs = perturb_with_bias(base, params.indiv_bias[user])
    else:
        inputs = base.copy()

    structure_weight, delta = hyper.mixing_weights()
    state = UserForward(user=user, items=tuple(ids.tolist()), adj_slice=adj_slice, base=base, inputs=inputs)
    hidden = inputs
    for layer in range(params.num_layers):
        activation = layer_forward(
            adj_slice,
            hidden,
            params.w_query[layer],
            params.w_key[layer],
            params.w_value[layer],
            delta,
            hyper.attention_norm,
            structure_weight,
        )
        state.layers.append(activation)
        hidden = activation.output

    state.pooled, state.pooled_norm, state.phi = _pool(hidden)
    return state


def encode_user(
    user: int,
    ia_items: Sequence[int],
    graph: HyperGraph,
    params: ModelParams,
    hyper: HyperParams,
) -> np.ndarray:
    """
    φ(u): unit-norm user vector.

    Inference path: each layer is the sum over heads of `hgc_forward`, and nothing
    is cached for a backward pass.
    """
    if len(ia_items) == 0:
        raise ContractViolation(f"user {user} has no input items")
    adj_slice = slice_graph(graph, ia_items).sub_adjacency
    hidden = params.item_embeddings[np.asarray(ia_items, dtype=np.int64)]
    if hyper.use_individual_bias:
        hidden = perturb_with_bias(hidden, params.indiv_bias[user])

    structure_weight, delta = hyper.mixing_weights()
    for layer in range(params.num_layers):
        hidden = multi_head(
            [
                hgc_forward(
                    adj_slice,
                    hidden,
                    params.w_query[layer, head],
                    params.w_key[layer, head],
                    params.w_value[layer],
                    delta,
                    hyper.attention_norm,
                    structure_weight,
                )
                for head in range(params.num_heads)
            ]
        )
    return _pool(hidden)[2]


def backward_user(
    state: UserForward,
    grad_phi: np.ndarray,
    params: ModelParams,
    hyper: HyperParams,
) -> UserGradients:
    """Backpropagate d(loss)/dφ(u) to the item rows, the user's bias and the projections."""
    _, delta = hyper.mixing_weights()
    phi = state.phi
    if state.pooled_norm > NORM_EPS:
        grad_pooled = (grad_phi - phi * np.dot(phi, grad_phi)) / state.pooled_norm
    else:
        grad_pooled = np.zeros_like(grad_phi)

    length = len(state.items)
    grad_hidden = np.tile(grad_pooled / length, (length, 1))

    grad_w_query = np.zeros_like(params.w_query)
    grad_w_key = np.zeros_like(params.w_key)
    grad_w_value = np.zeros_like(params.w_value)
    for layer in reversed(range(params.num_layers)):
        grad_hidden, gq, gk, gv = layer_backward(
            state.layers[layer],
            grad_hidden,
            params.w_query[layer],
            params.w_key[layer],
            params.w_value[layer],
            delta,
            hyper.attention_norm,
        )
        grad_w_query[layer] = gq
        grad_w_key[layer] = gk
        grad_w_value[layer] = gv

    if hyper.use_individual_bias:
        item_rows, bias_row = perturb_with_bias_backward(
            state.base, params.indiv_bias[state.user], grad_hidden
        )
    else:
        item_rows, bias_row = grad_hidden, np.zeros(params.d_m)

    return UserGradients(
        items=np.asarray(state.items, dtype=np.int64),
        item_rows=item_rows,
        user=state.user,
        bias_row=bias_row,
        w_query=grad_w_query,
        w_key=grad_w_key,
        w_value=grad_w_value,
    )
