"""Monte-Carlo verification of the estimator's claimed properties.

Three families of checks, all at a frozen parameter vector:

* ``estimator_stats`` measures the mean and covariance trace of the
  one-sample gradient estimators.  The adaptive estimator's mean must
  match the full gradient (unbiasedness); the uniform estimator's trace
  has the closed form (1/N) sum |g_i|^2 - |mean g|^2, exposed as
  ``sgd_trace_exact``.

* ``lemma1_check`` evaluates the variance-comparison inequality

      (1/N) sum_i |g_i|^2 * (sum_j P(i, j in bucket) / p_i) / p_i
          <  sum_i |g_i|^2

  with the pairwise bucket co-occupancy probabilities estimated by
  counting over independent table rebuilds (no closed form is
  attempted) and p_i = cp_i^K.

* the probes compare the two samplers on the quantities the adaptive
  scheme is supposed to improve: the gradient norm of sampled points
  and the angular similarity of the (weighted) estimate to the full
  gradient, where angular similarity is 1 - arccos(cos)/pi.

Every entry point takes an explicit seed; Monte-Carlo accumulation uses
a chunk-merged Welford accumulator so results are stable and
order-insensitive.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import models as _models
from .data import Dataset
from .hashing import build_tables
from .hashing import HashFamilyParams
from .models import ModelSpec
from .optim import LearningRateSchedule, OptimizerState, sgd_step
from .rng import generator, spawn_seeds
from .sampling import SamplerConfig, draw

__all__ = [
    "EstimatorStats",
    "Lemma1Report",
    "ProbeReport",
    "estimator_stats",
    "sgd_trace_exact",
    "lemma1_check",
    "gradient_norm_probe",
    "cosine_probe",
    "optimal_weights",
    "angular_similarity",
    "warm_start",
    "max_workers",
]


def max_workers() -> int:
    """Parallelism cap for independent diagnostic trials (LGD_THREADS)."""
    raw = os.environ.get("LGD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"LGD_THREADS must be an integer, got {raw!r}") from None


class _Moments:
    """Chunk-merged Welford accumulator for vector-valued samples."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros(dim)

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(batch)
        b = batch.shape[0]
        if b == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        if self.count == 0:
            self.count, self.mean, self._m2 = b, b_mean, b_m2
            return
        delta = b_mean - self.mean
        total = self.count + b
        self._m2 += b_m2 + delta**2 * (self.count * b / total)
        self.mean = self.mean + delta * (b / total)
        self.count = total

    def trace_covariance(self) -> float:
        """Population form: mean squared norm minus squared norm of mean."""
        if self.count < 2:
            raise ValueError("need at least 2 samples for a covariance trace")
        return float(self._m2.sum() / self.count)


@dataclass(frozen=True)
class EstimatorStats:
    mean_estimate: np.ndarray
    trace_covariance: float
    draws: int
    fallback_rate: float

    def to_dict(self) -> dict:
        return {
            "mean_estimate": [float(v) for v in self.mean_estimate],
            "trace_covariance": self.trace_covariance,
            "draws": self.draws,
            "fallback_rate": self.fallback_rate,
        }


_CHUNK = 512


def estimator_stats(
    model: ModelSpec,
    ds: Dataset,
    theta: np.ndarray,
    sampler_kind: str,
    n_draws: int,
    seed: int,
    *,
    k: int = 5,
    l: int = 100,
    density: float = 1.0,
    coef: str = "sign",
    rebuild_every: int = 1,
    max_probes: int | None = None,
) -> EstimatorStats:
    """Monte-Carlo mean and covariance trace of one estimator at frozen theta.

    For the adaptive sampler, fresh hash tables are rebuilt every
    ``rebuild_every`` draws so the expectation ranges over the hash
    randomness as well as the draw randomness.
    """
    if n_draws < 2:
        raise ValueError(f"need at least 2 draws, got {n_draws}")
    if sampler_kind not in ("lgd", "sgd"):
        raise ValueError(f"unknown sampler kind {sampler_kind!r}")
    theta = np.asarray(theta, dtype=np.float64)
    grads = _models.per_point_gradients(model, theta, ds.x, ds.y)
    moments = _Moments(ds.d)
    draw_seed, table_root = (int(s) for s in spawn_seeds(seed, 2))
    rng = generator(draw_seed)
    fallbacks = 0
    if sampler_kind == "sgd":
        done = 0
        while done < n_draws:
            b = min(_CHUNK, n_draws - done)
            moments.update(grads[rng.integers(ds.n, size=b)])
            done += b
        return EstimatorStats(moments.mean, moments.trace_covariance(), n_draws, 0.0)

    base, quadratic = _models.hash_inputs(model, ds.x, ds.y)
    dim = base.shape[1] ** 2 if quadratic else base.shape[1]
    query = _models.hash_query(model, theta)
    cfg = SamplerConfig(max_probes=max_probes)
    n_rebuilds = -(-n_draws // rebuild_every)
    table_seeds = spawn_seeds(table_root, n_rebuilds)
    buffer = np.empty((_CHUNK, ds.d))
    filled = 0
    done = 0
    tables = None
    for trial in range(n_rebuilds):
        params = HashFamilyParams(
            k=k, l=l, dim=dim, density=density, seed=int(table_seeds[trial]), coef=coef
        )
        tables = build_tables(base, params, quadratic=quadratic)
        for _ in range(min(rebuild_every, n_draws - done)):
            s = draw(tables, query, cfg, rng)
            if s.fallback:
                fallbacks += 1
            buffer[filled] = grads[s.index] / (s.probability * ds.n)
            filled += 1
            done += 1
            if filled == _CHUNK:
                moments.update(buffer)
                filled = 0
    if filled:
        moments.update(buffer[:filled])
    return EstimatorStats(
        moments.mean, moments.trace_covariance(), n_draws, fallbacks / n_draws
    )


def sgd_trace_exact(model: ModelSpec, ds: Dataset, theta: np.ndarray) -> float:
    """Closed-form covariance trace of the uniform one-sample estimator."""
    grads = _models.per_point_gradients(model, theta, ds.x, ds.y)
    sq = np.einsum("ij,ij->i", grads, grads)
    mean = grads.mean(axis=0)
    return float(sq.mean() - mean @ mean)


@dataclass(frozen=True)
class Lemma1Report:
    lhs: float
    rhs: float
    holds: bool
    lhs_se: float
    trials: int
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "holds": self.holds,
            "lhs_se": self.lhs_se,
            "trials": self.trials,
            "degenerate": self.degenerate,
        }


def lemma1_check(
    model: ModelSpec,
    ds: Dataset,
    theta: np.ndarray,
    trials: int,
    seed: int,
    *,
    k: int = 5,
    l: int = 10,
    density: float = 1.0,
    coef: str = "sign",
    n_batches: int = 10,
) -> Lemma1Report:
    """Empirical status of the variance-comparison inequality.

    The pairwise bucket co-occupancy P(x_i, x_j in bucket) is counted
    over ``trials`` independent table rebuilds (each table contributes
    one sample); p_i = cp_i^K uses the single-probe convention.
    ``holds`` requires the 95% upper confidence bound of the estimated
    left side to stay below the exact right side; the standard error
    comes from batch means over the rebuilds.
    """
    if ds.n > 256:
        raise ValueError("joint bucket probabilities are only estimable for N <= 256")
    if trials < n_batches:
        raise ValueError(f"need at least {n_batches} trials, got {trials}")
    theta = np.asarray(theta, dtype=np.float64)
    grads = _models.per_point_gradients(model, theta, ds.x, ds.y)
    norms_sq = np.einsum("ij,ij->i", grads, grads)
    rhs = float(norms_sq.sum())

    base, quadratic = _models.hash_inputs(model, ds.x, ds.y)
    dim = base.shape[1] ** 2 if quadratic else base.shape[1]
    query = _models.hash_query(model, theta)
    qn = float(np.linalg.norm(query))
    cos = (base @ query) / (np.linalg.norm(base, axis=1) * qn)
    if quadratic:
        cos = cos**2
    cp = 1.0 - np.arccos(np.clip(cos, -1.0, 1.0)) / np.pi
    p = cp**k
    if np.any(p <= 0.0):
        raise ValueError("a point has zero collision probability; LHS is unbounded")

    table_seeds = spawn_seeds(seed, trials)
    batch_lhs = []
    per_batch = trials // n_batches
    co = np.zeros((ds.n, ds.n))
    batch_co = np.zeros((ds.n, ds.n))
    batch_count = 0
    for trial in range(trials):
        params = HashFamilyParams(
            k=k, l=l, dim=dim, density=density, seed=int(table_seeds[trial]), coef=coef
        )
        tables = build_tables(base, params, quadratic=quadratic, keep_codes=True)
        member = tables.membership(query).astype(np.float64)
        batch_co += member.T @ member
        batch_count += 1
        if batch_count == per_batch:
            co += batch_co
            p_hat = batch_co / (per_batch * l)
            batch_lhs.append(
                float(np.sum(norms_sq * (p_hat @ (1.0 / p)) / p) / ds.n)
            )
            batch_co = np.zeros((ds.n, ds.n))
            batch_count = 0
    used = per_batch * n_batches
    p_pair = co / (used * l)
    lhs = float(np.sum(norms_sq * (p_pair @ (1.0 / p)) / p) / ds.n)
    se = float(np.std(batch_lhs, ddof=1) / np.sqrt(len(batch_lhs)))
    holds = bool(lhs + 1.96 * se < rhs)
    return Lemma1Report(
        lhs=lhs, rhs=rhs, holds=holds, lhs_se=se, trials=used, degenerate=ds.n == 1
    )


def angular_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """1 - arccos(cos(u, v)) / pi, in [0, 1]; 0.5 for a zero vector."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.5
    cos = np.clip(float(u @ v) / (nu * nv), -1.0, 1.0)
    return 1.0 - float(np.arccos(cos)) / np.pi


@dataclass(frozen=True)
class ProbeReport:
    """Per-sampler means of one probe metric, with running averages."""

    metric: str
    lgd_mean: float
    sgd_mean: float
    lgd_running: np.ndarray
    sgd_running: np.ndarray
    draws: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "lgd_mean": self.lgd_mean,
            "sgd_mean": self.sgd_mean,
            "lgd_running": [float(v) for v in self.lgd_running],
            "sgd_running": [float(v) for v in self.sgd_running],
            "draws": self.draws,
            "degenerate": self.degenerate,
        }


def _probe_samples(
    model: ModelSpec,
    ds: Dataset,
    theta: np.ndarray,
    n_draws: int,
    seed: int,
    k: int,
    l: int,
    density: float,
    coef: str,
    max_probes: int | None,
):
    """Shared probe driver: one table build, paired LGD and SGD draws."""
    theta = np.asarray(theta, dtype=np.float64)
    grads = _models.per_point_gradients(model, theta, ds.x, ds.y)
    table_seed, lgd_seed, sgd_seed = (int(s) for s in spawn_seeds(seed, 3))
    base, quadratic = _models.hash_inputs(model, ds.x, ds.y)
    dim = base.shape[1] ** 2 if quadratic else base.shape[1]
    params = HashFamilyParams(
        k=k, l=l, dim=dim, density=density, seed=table_seed, coef=coef
    )
    tables = build_tables(base, params, quadratic=quadratic)
    query = _models.hash_query(model, theta)
    cfg = SamplerConfig(max_probes=max_probes)
    rng = generator(lgd_seed)
    lgd_draws = [draw(tables, query, cfg, rng) for _ in range(n_draws)]
    sgd_idx = generator(sgd_seed).integers(ds.n, size=n_draws)
    return grads, lgd_draws, sgd_idx


def _running_mean(values: np.ndarray) -> np.ndarray:
    return np.cumsum(values) / np.arange(1, len(values) + 1)


def gradient_norm_probe(
    model: ModelSpec,
    ds: Dataset,
    theta: np.ndarray,
    n_draws: int,
    seed: int,
    *,
    k: int = 5,
    l: int = 100,
    density: float = 1.0,
    coef: str = "sign",
    max_probes: int | None = None,
) -> ProbeReport:
    """Average gradient L2 norm of the points each sampler draws.

    Uses the raw (unweighted) norms of sampled points; tables are built
    once at the frozen theta.
    """
    grads, lgd_draws, sgd_idx = _probe_samples(
        model, ds, theta, n_draws, seed, k, l, density, coef, max_probes
    )
    norms = np.linalg.norm(grads, axis=1)
    lgd_vals = np.array([norms[s.index] for s in lgd_draws])
    sgd_vals = norms[sgd_idx]
    return ProbeReport(
        metric="gradient_norm",
        lgd_mean=float(lgd_vals.mean()),
        sgd_mean=float(sgd_vals.mean()),
        lgd_running=_running_mean(lgd_vals),
        sgd_running=_running_mean(sgd_vals),
        draws=n_draws,
        degenerate=bool(np.allclose(norms, norms[0])),
    )


def cosine_probe(
    model: ModelSpec,
    ds: Dataset,
    theta: np.ndarray,
    n_draws: int,
    seed: int,
    *,
    k: int = 5,
    l: int = 100,
    density: float = 1.0,
    coef: str = "sign",
    max_probes: int | None = None,
) -> ProbeReport:
    """Mean angular similarity of each sampler's estimate to the full gradient.

    The adaptive estimate is importance-weighted (weights do not change
    its direction, but fallback draws do enter as plain gradients); the
    uniform estimate is the raw sampled gradient.
    """
    grads, lgd_draws, sgd_idx = _probe_samples(
        model, ds, theta, n_draws, seed, k, l, density, coef, max_probes
    )
    full = grads.mean(axis=0)
    degenerate = not np.any(full)
    lgd_vals = np.array(
        [
            angular_similarity(grads[s.index] / (s.probability * ds.n), full)
            for s in lgd_draws
        ]
    )
    sgd_vals = np.array([angular_similarity(grads[j], full) for j in sgd_idx])
    return ProbeReport(
        metric="angular_similarity",
        lgd_mean=float(lgd_vals.mean()),
        sgd_mean=float(sgd_vals.mean()),
        lgd_running=_running_mean(lgd_vals),
        sgd_running=_running_mean(sgd_vals),
        draws=n_draws,
        degenerate=degenerate,
    )


def optimal_weights(model: ModelSpec, ds: Dataset, theta: np.ndarray) -> np.ndarray:
    """Variance-minimizing sampling weights: |g_i| / sum_j |g_j|."""
    grads = _models.per_point_gradients(model, theta, ds.x, ds.y)
    norms = np.linalg.norm(grads, axis=1)
    total = norms.sum()
    if total == 0.0:
        raise ValueError("all per-point gradients are zero at this theta")
    return norms / total


def warm_start(
    model: ModelSpec, ds: Dataset, epochs: float, eta: float, seed: int
) -> np.ndarray:
    """Theta after a short plain-SGD cold start (probe preconditioning)."""
    state = OptimizerState(
        theta=np.zeros(model.d),
        schedule=LearningRateSchedule(kind="constant", eta0=eta),
    )
    rng = generator(seed)
    for _ in range(int(round(epochs * ds.n))):
        sgd_step(state, model, ds, rng)
    return state.theta
