"""Scoring, weighted multi-label cross-entropy, gradient-corrected updates and gradient checks."""

import logging
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import expit

from cadrec.core.config import HyperParams
from cadrec.core.error_handler import ContractViolation, NumericalError
from cadrec.data.interactions import SplitDataset
from cadrec.services.encoders import ModelParams, PopularityEncoder
from cadrec.services.hgc_layer import UserGradients, backward_user, forward_user
from cadrec.services.hypergraph import HyperGraph

logger = logging.getLogger(__name__)

ScoreMode = Literal["train", "test"]


@dataclass(frozen=True)
class UserTargets:
    """Encoder input and positive targets of one user."""

    user: int
    inputs: tuple[int, ...]
    ia: tuple[int, ...]
    fia: tuple[int, ...]


@dataclass(frozen=True)
class RatingBatch:
    """Users of one training step with their IA/FIA targets."""

    users: tuple[UserTargets, ...]
    num_items: int

    def __len__(self) -> int:
        return len(self.users)

    def ia_counts(self) -> np.ndarray:
        """How many batch users hold each item in their encoder input."""
        if not self.users:
            return np.zeros(self.num_items, dtype=np.int64)
        flat = np.concatenate([np.asarray(t.inputs, dtype=np.int64) for t in self.users])
        return np.bincount(flat, minlength=self.num_items)


def make_batch(split: SplitDataset, users: Iterable[int], max_seq_len: int = 200) -> RatingBatch:
    """Assemble a RatingBatch from split users."""
    targets = []
    for user in users:
        record = split.users[user]
        targets.append(
            UserTargets(
                user=user,
                inputs=tuple(record.ia_input(max_seq_len)),
                ia=record.ia_items,
                fia=record.fia_items,
            )
        )
    return RatingBatch(users=tuple(targets), num_items=split.num_items)


def score(
    phi: np.ndarray,
    psi: np.ndarray,
    user_pop: np.ndarray | None = None,
    item_pop: np.ndarray | None = None,
    beta1: float = 0.0,
    mode: ScoreMode = "test",
):
    """
    Rating of item(s) psi for user vector phi.

    Train: <[φ, β1·ē_u], [ψ, β1·e_i]> = φ·ψ + β1²·(ē_u·e_i). Test: φ·ψ.
    `psi`/`item_pop` may be a single vector or an (n, d_m) block.
    """
    rating = psi @ phi
    if mode == "train" and user_pop is not None and item_pop is not None:
        rating = rating + (beta1 * beta1) * (item_pop @ user_pop)
    elif mode not in ("train", "test"):
        raise ContractViolation(f"unknown score mode '{mode}'")
    return rating


def label_vector(ia: Sequence[int], fia: Sequence[int], num_items: int) -> np.ndarray:
    """γ: 1 on IA ∪ FIA items, 0 elsewhere."""
    labels = np.zeros(num_items)
    labels[np.asarray(list(ia) + list(fia), dtype=np.int64)] = 1.0
    return labels


def weight_vector(
    user: int,
    ia: Sequence[int],
    fia: Sequence[int],
    lambda1: float,
    lambda2: float,
    num_items: int,
) -> np.ndarray:
    """C_{u,*}: λ1 on IA items, λ2 on FIA items, 0 elsewhere."""
    overlap = set(ia) & set(fia)
    if overlap:
        raise ContractViolation(f"user {user}: IA and FIA overlap on {sorted(overlap)[:5]}")
    weights = np.zeros(num_items)
    weights[np.asarray(list(ia), dtype=np.int64)] = lambda1
    weights[np.asarray(list(fia), dtype=np.int64)] = lambda2
    return weights


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    """log σ(x) = -log(1 + e^-x), stable for large |x|."""
    return -np.logaddexp(0.0, -x)


def rating_loss(ratings: np.ndarray, weights: np.ndarray, labels: np.ndarray) -> float:
    """-Σ_i c_i γ_i log σ(r_i) for one user."""
    mask = (weights * labels) != 0
    return float(-np.sum(weights[mask] * labels[mask] * log_sigmoid(ratings[mask])))


def regularizer_value(
    params: ModelParams,
    counts: np.ndarray,
    beta2: float,
    form: Literal["squared", "norm"] = "squared",
) -> float:
    """β2 Σ_u Σ_{i∈S(u)} ‖ψ(i)‖² (or ‖ψ(i)‖ for the `norm` form)."""
    if beta2 == 0.0:
        return 0.0
    active = np.flatnonzero(counts)
    rows = params.item_embeddings[active]
    if form == "squared":
        per_item = np.sum(rows * rows, axis=1)
    else:
        per_item = np.linalg.norm(rows, axis=1)
    return float(beta2 * np.sum(counts[active] * per_item))


def regularizer_gradient(
    params: ModelParams,
    counts: np.ndarray,
    beta2: float,
    form: Literal["squared", "norm"] = "squared",
) -> np.ndarray:
    """Gradient of `regularizer_value` w.r.t. the item embeddings."""
    grad = np.zeros_like(params.item_embeddings)
    if beta2 == 0.0:
        return grad
    active = np.flatnonzero(counts)
    rows = params.item_embeddings[active]
    if form == "squared":
        grad[active] = 2.0 * beta2 * counts[active][:, None] * rows
    else:
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        grad[active] = beta2 * counts[active][:, None] * rows / np.maximum(norms, 1e-12)
    return grad


@dataclass
class UserPass:
    loss: float
    gradients: UserGradients
    score_rows: np.ndarray
    score_grads: np.ndarray


def _user_pass(
    target: UserTargets,
    graph: HyperGraph,
    params: ModelParams,
    hyper: HyperParams,
    pop: PopularityEncoder | None,
) -> UserPass:
    state = forward_user(target.user, target.inputs, graph, params, hyper)
    phi = state.phi

    weights = weight_vector(target.user, target.ia, target.fia, hyper.lambda1, hyper.lambda2, params.num_items)
    labels = label_vector(target.ia, target.fia, params.num_items)
    if hyper.use_popularity and pop is not None:
        ratings = score(phi, params.item_embeddings, pop.user(target.inputs), pop.items, hyper.beta1, "train")
    else:
        ratings = score(phi, params.item_embeddings, mode="test")
    loss = rating_loss(ratings, weights, labels)

    # Only IA ∪ FIA ratings carry weight, so only their rows get gradient.
    coefficients = weights * labels
    positives = np.flatnonzero(coefficients)
    grad_ratings = -coefficients[positives] * expit(-ratings[positives])
    grad_phi = params.item_embeddings[positives].T @ grad_ratings
    score_grads = grad_ratings[:, None] * phi[None, :]

    gradients = backward_user(state, grad_phi, params, hyper)
    return UserPass(loss, gradients, positives, score_grads)


def _reduce(passes: Iterable[UserPass], params: ModelParams) -> tuple[float, ModelParams]:
    grads = params.zeros_like()
    total = 0.0
    for result in passes:
        total += result.loss
        g = result.gradients
        np.add.at(grads.item_embeddings, g.items, g.item_rows)
        np.add.at(grads.item_embeddings, result.score_rows, result.score_grads)
        grads.indiv_bias[g.user] += g.bias_row
        grads.w_query += g.w_query
        grads.w_key += g.w_key
        grads.w_value += g.w_value
    return total, grads


def rating_loss_and_gradients(
    batch: RatingBatch,
    params: ModelParams,
    graph: HyperGraph,
    hyper: HyperParams,
    pop: PopularityEncoder | None = None,
    executor: Executor | None = None,
) -> tuple[float, ModelParams]:
    """
    Weighted rating loss of a batch and its analytic gradient.

    Each user is scored against all N items; per-user passes may run on
    `executor` and are reduced in batch order.
    """
    def run(target: UserTargets) -> UserPass:
        return _user_pass(target, graph, params, hyper, pop)

    passes = executor.map(run, batch.users) if executor is not None else map(run, batch.users)
    return _reduce(passes, params)


def total_loss(
    batch: RatingBatch,
    params: ModelParams,
    graph: HyperGraph,
    hyper: HyperParams,
    pop: PopularityEncoder | None = None,
) -> float:
    """Σ_u [-C_u ⊙ γᵀ log σ(r_u)] + β2 Σ_{i∈S(u)} ‖ψ(i)‖²."""
    return total_loss_and_gradients(batch, params, graph, hyper, pop)[0]


def total_loss_and_gradients(
    batch: RatingBatch,
    params: ModelParams,
    graph: HyperGraph,
    hyper: HyperParams,
    pop: PopularityEncoder | None = None,
    executor: Executor | None = None,
    decoupled_decay: bool = False,
) -> tuple[float, ModelParams]:
    """
    Full loss value and gradient.

    With `decoupled_decay` the regularizer stays in the value but not in the
    gradient, because the optimizer applies it as a decay of the IA rows.
    """
    loss, grads = rating_loss_and_gradients(batch, params, graph, hyper, pop, executor)
    counts = batch.ia_counts()
    if not decoupled_decay:
        grads.item_embeddings += regularizer_gradient(params, counts, hyper.beta2, hyper.regularizer)
    return loss + regularizer_value(params, counts, hyper.beta2, hyper.regularizer), grads


def check_gradients_finite(grads: ModelParams) -> None:
    for name, array in grads.tensors().items():
        if not np.all(np.isfinite(array)):
            raise NumericalError(f"Non-finite gradient for '{name}'; step rejected", parameter=name)


def decay_item_embeddings(
    embeddings: np.ndarray,
    counts: np.ndarray,
    learning_rate: float,
    beta2: float,
    form: Literal["squared", "norm"] = "squared",
) -> None:
    """
    In-place decoupled decay of IA item embeddings.

    squared: ψ ← (1 - n_i·η·β2)·ψ, n_i = number of batch users with i in their input.
    norm:    ψ ← ψ - n_i·η·β2·ψ/‖ψ‖.
    Items with n_i = 0 are untouched.
    """
    if beta2 == 0.0:
        return
    active = np.flatnonzero(counts)
    if form == "squared":
        embeddings[active] *= (1.0 - counts[active] * learning_rate * beta2)[:, None]
    else:
        rows = embeddings[active]
        norms = np.maximum(np.linalg.norm(rows, axis=1, keepdims=True), 1e-12)
        embeddings[active] = rows - (counts[active] * learning_rate * beta2)[:, None] * rows / norms


def update_step(
    params: ModelParams,
    grads: ModelParams,
    counts: np.ndarray,
    learning_rate: float,
    beta2: float,
    form: Literal["squared", "norm"] = "squared",
) -> ModelParams:
    """
    Plain gradient step with decoupled decay on IA item embeddings only.

    ψ(i) ← (1 - Σ_u I(i∈S(u))·η·β2)·ψ(i) - η·∂L/∂ψ(i); every other tensor takes
    θ ← θ - η·∂L/∂θ. Raises NumericalError (and leaves params untouched) on a
    non-finite gradient.
    """
    check_gradients_finite(grads)
    decay_item_embeddings(params.item_embeddings, counts, learning_rate, beta2, form)
    for name, array in params.tensors().items():
        array -= learning_rate * getattr(grads, name)
    return params


def numerical_gradient(loss_fn: Callable[[], float], array: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of `loss_fn` w.r.t. every coordinate of `array` (perturbed in place)."""
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + step
        plus = loss_fn()
        array[index] = original - step
        minus = loss_fn()
        array[index] = original
        grad[index] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|g_a - g_n| / max(1e-8, |g_a| + |g_n|), elementwise."""
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def grad_check(
    loss_fn: Callable[[], float],
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    step: float = 1e-5,
) -> dict[str, float]:
    """
    Compare analytic gradients with central differences, tensor by tensor.

    `loss_fn` must read the arrays in `params` (they are perturbed in place and
    restored). Returns the max relative error per tensor.
    """
    errors = {}
    for name, array in params.items():
        numeric = numerical_gradient(loss_fn, array, step)
        errors[name] = float(np.max(relative_error(analytic[name], numeric))) if array.size else 0.0
        logger.debug(f"grad_check {name}: max relative error {errors[name]:.3e}")
    return errors
