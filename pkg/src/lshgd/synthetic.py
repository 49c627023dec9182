"""Synthetic datasets with controlled gradient-norm profiles.

The power-law construction plants a parameter vector theta* and gives
point i a residual of magnitude scale * (rank+1)**-a at theta*, with
points paired as (x, -x) sharing a magnitude so that the planted theta*
is exactly the least-squares optimum (the residual field sums to zero
against the features).  Gradient norms at and near theta* then follow
the power law, with all residuals positive so that the signed inner
product [theta, -1] . [x, y] ranks points by gradient magnitude even
without the quadratic expansion.

The equal-gradient construction gives every point the same gradient
norm and the same collision probability with the query at a designated
theta while spreading gradient directions, which is the regime where
adaptive and uniform sampling provably coincide.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset
from .rng import generator

__all__ = [
    "power_law_least_squares",
    "logistic_synthetic",
    "equal_gradient_dataset",
]


def _random_unit(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def power_law_least_squares(
    n: int,
    d: int,
    exponent: float = 1.5,
    scale: float = 1.0,
    theta_scale: float = 1.0,
    seed: int = 0,
) -> tuple[Dataset, np.ndarray]:
    """Paired power-law regression set; returns (dataset, planted theta*).

    ``n`` must be even.  Rows 2j and 2j+1 are (x_j, -x_j) with unit x_j,
    both carrying residual +scale*(j+1)**-exponent at theta*, so the
    per-point gradient norms at theta* are 2*scale*(j+1)**-exponent and
    theta* is the exact global minimizer.
    """
    if n % 2:
        raise ValueError(f"paired construction needs an even n, got {n}")
    rng = generator(seed)
    half = n // 2
    dirs = _random_unit(rng, half, d)
    theta_star = theta_scale * _random_unit(rng, 1, d)[0]
    r = scale * (np.arange(1, half + 1, dtype=np.float64)) ** (-exponent)
    x = np.empty((n, d))
    y = np.empty(n)
    x[0::2] = dirs
    x[1::2] = -dirs
    proj = dirs @ theta_star
    y[0::2] = proj - r
    y[1::2] = -proj - r
    ds = Dataset(x, y, name=f"power-law(n={n},d={d},a={exponent})")
    return ds, theta_star


def logistic_synthetic(
    n: int, d: int, seed: int = 0, separation: float = 1.0
) -> Dataset:
    """Binary labels in {-1, +1} with unit features and spread margins."""
    rng = generator(seed)
    u = _random_unit(rng, 1, d)[0]
    labels = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    margins = rng.uniform(0.0, separation, size=n)
    noise = _random_unit(rng, n, d)
    x = labels[:, None] * margins[:, None] * u + noise
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return Dataset(x, labels, name=f"logistic(n={n},d={d})")


def equal_gradient_dataset(
    n: int, d: int, residual: float = 0.05, seed: int = 0
) -> tuple[Dataset, np.ndarray]:
    """Least-squares set where every point has the same gradient norm and
    the same collision probability with the query at the returned theta.

    Labels are balanced +1/-1; features share a controlled component
    along theta so that every residual equals ``residual`` exactly,
    while the orthogonal components spread the gradient directions.
    Stored vectors [x, y] all have norm sqrt(2), so equal residuals give
    equal query cosines.
    """
    if n % 2:
        raise ValueError(f"balanced labels need an even n, got {n}")
    if d < 2:
        raise ValueError("need d >= 2 to spread directions")
    rng = generator(seed)
    axis = _random_unit(rng, 1, d)[0]
    theta_norm = np.sqrt(2.0)
    theta = theta_norm * axis
    labels = np.empty(n)
    labels[: n // 2] = 1.0
    labels[n // 2 :] = -1.0
    beta = (labels + residual) / theta_norm
    if np.any(np.abs(beta) >= 1.0):
        raise ValueError("residual too large for unit features at this theta norm")
    ortho = rng.standard_normal((n, d))
    ortho -= np.outer(ortho @ axis, axis)
    ortho /= np.linalg.norm(ortho, axis=1, keepdims=True)
    x = beta[:, None] * axis + np.sqrt(1.0 - beta**2)[:, None] * ortho
    ds = Dataset(x, labels, name=f"equal-gradient(n={n},d={d})")
    return ds, theta
