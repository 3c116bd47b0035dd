"""Trainable embedding tables, popularity positional encoding and individual-bias perturbation."""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, fields

import numpy as np

from cadrec.core.error_handler import ConfigError, ContractViolation, NumericalError
from cadrec.data.interactions import PopularityTable

logger = logging.getLogger(__name__)

NORM_EPS = 1e-12
POSITION_BASE = 10000.0


@dataclass
class ModelParams:
    """
    Full trainable state.

    Shapes: item_embeddings (N, d_m), indiv_bias (M, d_m),
    w_query / w_key (z_l, z_h, d_m, d_m), w_value (z_l, d_m, d_m).
    The value projection is shared by the heads of a layer.
    """

    item_embeddings: np.ndarray
    indiv_bias: np.ndarray
    w_query: np.ndarray
    w_key: np.ndarray
    w_value: np.ndarray

    @property
    def num_items(self) -> int:
        return self.item_embeddings.shape[0]

    @property
    def num_users(self) -> int:
        return self.indiv_bias.shape[0]

    @property
    def d_m(self) -> int:
        return self.item_embeddings.shape[1]

    @property
    def num_layers(self) -> int:
        return self.w_query.shape[0]

    @property
    def num_heads(self) -> int:
        return self.w_query.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        """Named views of every tensor, in checkpoint order."""
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "ModelParams":
        return ModelParams(**{name: array.copy() for name, array in self.tensors().items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(**{name: np.zeros_like(array) for name, array in self.tensors().items()})

    def check_finite(self) -> None:
        for name, array in self.tensors().items():
            if not np.all(np.isfinite(array)):
                raise NumericalError(f"Parameter '{name}' contains NaN or Inf", parameter=name)


def init_params(
    num_users: int,
    num_items: int,
    d_m: int,
    num_heads: int,
    seed: int,
    num_layers: int = 1,
) -> ModelParams:
    """
    Initialize the trainable state from a seeded generator.

    Item embeddings ~ Uniform(-1, 1); individual biases start at zero so the
    perturbation is the identity; projections ~ Uniform(-a, a), a = sqrt(6 / (2 d_m)).
    """
    if d_m <= 0 or d_m % 2:
        raise ConfigError(f"d_m must be a positive even number, got {d_m}", field="d_m")
    if min(num_users, num_items, num_heads, num_layers) <= 0:
        raise ConfigError("model dimensions must be positive", field="num_heads")

    rng = np.random.default_rng(seed)
    bound = math.sqrt(6.0 / (2 * d_m))
    return ModelParams(
        item_embeddings=rng.uniform(-1.0, 1.0, size=(num_items, d_m)),
        indiv_bias=np.zeros((num_users, d_m)),
        w_query=rng.uniform(-bound, bound, size=(num_layers, num_heads, d_m, d_m)),
        w_key=rng.uniform(-bound, bound, size=(num_layers, num_heads, d_m, d_m)),
        w_value=rng.uniform(-bound, bound, size=(num_layers, d_m, d_m)),
    )


def popularity_encodings(counts: Sequence[float] | np.ndarray, d_m: int) -> np.ndarray:
    """
    Sinusoidal encodings of interaction counts, one row per count.

    Column j (0-based, even) is sin(z / 10000^(j/d_m)); the following odd column is
    cos with the same frequency.
    """
    if d_m % 2:
        raise ConfigError(f"d_m must be even, got {d_m}", field="d_m")
    z = np.asarray(counts, dtype=np.float64).reshape(-1)
    if np.any(z < 0):
        raise ContractViolation("popularity counts must be non-negative")
    frequencies = POSITION_BASE ** (-np.arange(0, d_m, 2) / d_m)
    angles = z[:, None] * frequencies[None, :]
    encoded = np.empty((len(z), d_m))
    encoded[:, 0::2] = np.sin(angles)
    encoded[:, 1::2] = np.cos(angles)
    return encoded


def popularity_encoding(z_c: float, d_m: int) -> np.ndarray:
    """Encoding of a single count."""
    return popularity_encodings([z_c], d_m)[0]


def bucket_counts(counts: np.ndarray) -> np.ndarray:
    """Log-bucketed counts floor(log2(1 + z))."""
    return np.floor(np.log2(1.0 + np.asarray(counts, dtype=np.float64)))


def user_popularity(
    ia_items: Sequence[int],
    pop_table: PopularityTable,
    d_m: int,
    log_buckets: bool = False,
) -> np.ndarray:
    """Mean popularity encoding over a user's IA items."""
    if len(ia_items) == 0:
        raise ContractViolation("user_popularity needs at least one IA item")
    counts = pop_table.counts[np.asarray(ia_items, dtype=np.int64)]
    if log_buckets:
        counts = bucket_counts(counts)
    return popularity_encodings(counts, d_m).mean(axis=0)


class PopularityEncoder:
    """
    Caches the training-score encoding of every item; encodings are constants, never trained.

    Raw encodings have squared norm d_m / 2, so the cached rows are rescaled to unit
    norm. The popularity term of a training score is then bounded by beta1 ** 2 and
    cannot drown out phi . psi as d_m grows.
    """

    def __init__(self, pop_table: PopularityTable, d_m: int, log_buckets: bool = False):
        counts = pop_table.counts
        if log_buckets:
            counts = bucket_counts(counts)
        self.d_m = d_m
        self.items = popularity_encodings(counts, d_m) / math.sqrt(d_m / 2)
        self.items.setflags(write=False)

    def user(self, ia_items: Sequence[int]) -> np.ndarray:
        if len(ia_items) == 0:
            raise ContractViolation("user popularity needs at least one IA item")
        return self.items[np.asarray(ia_items, dtype=np.int64)].mean(axis=0)


def _unit(vector: np.ndarray) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(vector))
    if norm <= NORM_EPS:
        return np.zeros_like(vector), norm
    return vector / norm, norm


def perturb_with_bias(item_vecs: np.ndarray, user_bias: np.ndarray) -> np.ndarray:
    """
    Add sign(psi) * Norm(e_indi) to item vectors (one vector or an L x d_m block).

    sign(0) is 0 and a zero bias leaves the vectors unchanged.
    """
    item_vecs = np.asarray(item_vecs, dtype=np.float64)
    if item_vecs.shape[-1] != user_bias.shape[-1]:
        raise ContractViolation(
            f"dimension mismatch: items {item_vecs.shape[-1]} vs bias {user_bias.shape[-1]}"
        )
    direction, _ = _unit(user_bias)
    return item_vecs + np.sign(item_vecs) * direction


def perturb_with_bias_backward(
    item_vecs: np.ndarray,
    user_bias: np.ndarray,
    grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Gradients of `perturb_with_bias` w.r.t. the item block and the bias vector.

    The sign term is piecewise constant, so item gradients pass straight through.
    At a zero bias the normalization passes the gradient with unit Jacobian.
    """
    grad_direction = np.sum(grad_out * np.sign(item_vecs), axis=0)
    direction, norm = _unit(user_bias)
    if norm <= NORM_EPS:
        return grad_out, grad_direction
    grad_bias = (grad_direction - direction * np.dot(direction, grad_direction)) / norm
    return grad_out, grad_bias
