"""Losses, per-point gradients, and the hashing reduction for two models.

Least squares:  f(x, y; theta) = (theta . x - y)^2
Logistic:       f(x, y; theta) = ln(1 + exp(-y theta . x)),  y in {-1, +1}

For unit-norm features both gradient norms are monotone functions of an
inner product between a fixed per-point vector and a parameter-only
query vector, which is what lets the hash tables be built once:

  least squares  |grad| = 2 |[theta, -1] . [x, y]|
  logistic       |grad| = 1 / (exp(y theta . x) + 1), monotone in -theta . (y x)

The absolute value in the least-squares case is handled by the
quadratic feature expansion T(v) = flatten(v (x) v), which satisfies
T(u) . T(v) = (u . v)^2 so that sign hashes of T-vectors rank points by
the squared inner product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LEAST_SQUARES",
    "LOGISTIC",
    "ModelSpec",
    "loss",
    "gradient",
    "full_gradient",
    "per_point_gradients",
    "mean_loss",
    "quadratic_transform",
    "stored_vector",
    "query_vector",
    "hash_inputs",
    "hash_query",
    "hash_dim",
]

LEAST_SQUARES = "least_squares"
LOGISTIC = "logistic"


@dataclass(frozen=True)
class ModelSpec:
    """Model kind, feature dimension, and the least-squares expansion flag.

    ``use_quadratic_transform`` only applies to least squares; with it
    the hashed space has dimension (d+1)^2, without it d+1.  Logistic
    hashing always uses the plain d-dimensional reduction.
    """

    kind: str
    d: int
    use_quadratic_transform: bool = True

    def __post_init__(self) -> None:
        if self.kind not in (LEAST_SQUARES, LOGISTIC):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.d < 1:
            raise ValueError(f"feature dimension must be >= 1, got {self.d}")


def _check_dims(spec: ModelSpec, theta: np.ndarray, x: np.ndarray) -> None:
    if theta.shape != (spec.d,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({spec.d},)")
    if x.shape != (spec.d,):
        raise ValueError(f"x has shape {x.shape}, expected ({spec.d},)")


def loss(spec: ModelSpec, theta: np.ndarray, x: np.ndarray, y: float) -> float:
    """Per-point loss; the logistic branch never overflows."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_dims(spec, theta, x)
    if spec.kind == LEAST_SQUARES:
        r = float(theta @ x) - y
        return r * r
    z = y * float(theta @ x)
    # ln(1 + e^-z) = log1p(e^-z) for z >= 0, -z + log1p(e^z) otherwise
    if z >= 0.0:
        return math.log1p(math.exp(-z))
    return -z + math.log1p(math.exp(z))


def gradient(spec: ModelSpec, theta: np.ndarray, x: np.ndarray, y: float) -> np.ndarray:
    """Per-point gradient of ``loss`` with respect to theta."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_dims(spec, theta, x)
    if spec.kind == LEAST_SQUARES:
        return 2.0 * (float(theta @ x) - y) * x
    z = y * float(theta @ x)
    # 1 / (e^z + 1) = sigmoid(-z), computed on the non-overflowing side
    if z >= 0.0:
        e = math.exp(-z)
        s = e / (1.0 + e)
    else:
        s = 1.0 / (1.0 + math.exp(z))
    return (-y * s) * x


def per_point_gradients(spec: ModelSpec, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """All N per-point gradients as an (N, d) matrix (vectorized)."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    margins = x @ theta
    if spec.kind == LEAST_SQUARES:
        return (2.0 * (margins - y))[:, None] * x
    z = y * margins
    s = np.empty_like(z)
    pos = z >= 0.0
    e = np.exp(-z[pos])
    s[pos] = e / (1.0 + e)
    s[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
    return (-y * s)[:, None] * x


def full_gradient(spec: ModelSpec, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the per-point gradients (diagnostic ground truth)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("full_gradient needs a non-empty (N, d) feature matrix")
    return per_point_gradients(spec, theta, x, y).mean(axis=0)


def mean_loss(spec: ModelSpec, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Mean loss over a dataset, vectorized and overflow-safe."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    margins = x @ theta
    if spec.kind == LEAST_SQUARES:
        r = margins - y
        return float(np.mean(r * r))
    z = y * margins
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = np.log1p(np.exp(-z[pos]))
    out[~pos] = -z[~pos] + np.log1p(np.exp(z[~pos]))
    return float(np.mean(out))


def quadratic_transform(v: np.ndarray) -> np.ndarray:
    """Row-major flattening of v (x) v, so T(u) . T(v) = (u . v)^2."""
    v = np.asarray(v, dtype=np.float64)
    return np.outer(v, v).ravel()


def stored_vector(spec: ModelSpec, x: np.ndarray, y: float) -> np.ndarray:
    """The vector indexed in the hash tables for one training point.

    Least squares stores [x, y] (expanded by T when the flag is on);
    logistic stores y * x.  Assumes x is already unit-normalized.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.d,):
        raise ValueError(f"x has shape {x.shape}, expected ({spec.d},)")
    if spec.kind == LOGISTIC:
        return y * x
    base = np.append(x, y)
    return quadratic_transform(base) if spec.use_quadratic_transform else base


def query_vector(spec: ModelSpec, theta: np.ndarray) -> np.ndarray:
    """The query vector hashed at a given parameter value.

    Least squares queries with [theta, -1] (expanded by T when the flag
    is on); logistic queries with -theta.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if spec.kind == LOGISTIC:
        return -theta
    base = np.append(theta, -1.0)
    return quadratic_transform(base) if spec.use_quadratic_transform else base


def hash_inputs(spec: ModelSpec, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, bool]:
    """Base stored matrix plus the quadratic flag for ``build_tables``.

    The quadratic expansion is left implicit: the returned rows are the
    pre-expansion vectors, and the flag tells the index to hash their
    outer products.  Codes and collision probabilities are identical to
    materializing ``stored_vector`` for every point.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if spec.kind == LOGISTIC:
        return y[:, None] * x, False
    base = np.concatenate([x, y[:, None]], axis=1)
    return base, spec.use_quadratic_transform


def hash_query(spec: ModelSpec, theta: np.ndarray) -> np.ndarray:
    """Base query vector matching ``hash_inputs`` (pre-expansion space)."""
    theta = np.asarray(theta, dtype=np.float64)
    if spec.kind == LOGISTIC:
        return -theta
    q = np.empty(theta.shape[0] + 1)
    q[:-1] = theta
    q[-1] = -1.0
    return q


def hash_dim(spec: ModelSpec) -> int:
    """Dimensionality of the hashed space (what HashFamilyParams.dim needs)."""
    if spec.kind == LOGISTIC:
        return spec.d
    base = spec.d + 1
    return base * base if spec.use_quadratic_transform else base
