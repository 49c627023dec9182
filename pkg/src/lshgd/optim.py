"""Training loops: hash-sampled gradient descent and the uniform baseline.

Both loops perform theta <- theta - eta_t * g_t where g_t is a one-point
gradient estimate.  The uniform (SGD) estimate is the raw gradient of a
uniformly drawn point.  The adaptive (LGD) estimate draws the point
from the hash tables and multiplies its gradient by 1 / (p * N), the
exact inverse selection probability, which restores unbiasedness.
Fallback draws arrive with p = 1/N, so their weight is exactly 1 and
they degrade gracefully into plain SGD steps; they are counted on the
trace.  Tables are built once per run: for linear models the stored
vectors do not depend on theta.

Learning rates are constant, step decay, or exponential decay, and an
AdaGrad per-dimension scaling can be layered on either sampler.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import models as _models
from .data import Dataset
from .hashing import HashFamilyParams, HashTableSet, build_tables
from .models import ModelSpec
from .rng import generator, spawn_seeds
from .sampling import SampleDraw, SamplerConfig, draw

__all__ = [
    "LearningRateSchedule",
    "AdaGradState",
    "GradientEstimate",
    "OptimizerState",
    "RunConfig",
    "TraceRecord",
    "ConvergenceTrace",
    "DivergenceError",
    "adagrad_scale",
    "sgd_step",
    "lgd_step",
    "build_model_tables",
    "run",
    "sweep_step_size",
]

CONSTANT = "constant"
STEP_DECAY = "step_decay"
EXP_DECAY = "exp_decay"


@dataclass(frozen=True)
class LearningRateSchedule:
    """eta_t for t = 0, 1, 2, ...; always strictly positive.

    constant:    eta0
    step_decay:  eta0 * factor^(t // interval)
    exp_decay:   eta0 * factor^(t / interval)
    """

    kind: str = CONSTANT
    eta0: float = 0.01
    factor: float = 0.5
    interval: int = 1000

    def __post_init__(self) -> None:
        if self.kind not in (CONSTANT, STEP_DECAY, EXP_DECAY):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.eta0 <= 0.0 or self.factor <= 0.0 or self.interval < 1:
            raise ValueError("schedule needs eta0 > 0, factor > 0, interval >= 1")

    def rate(self, t: int) -> float:
        if self.kind == CONSTANT:
            return self.eta0
        if self.kind == STEP_DECAY:
            return self.eta0 * self.factor ** (t // self.interval)
        return self.eta0 * self.factor ** (t / self.interval)


@dataclass
class AdaGradState:
    """Per-dimension sum of squared gradient components, plus stabilizer."""

    accumulator: np.ndarray
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, d: int, epsilon: float = 1e-8) -> "AdaGradState":
        return cls(np.zeros(d), epsilon)


def adagrad_scale(state: AdaGradState, g: np.ndarray, eta: float) -> np.ndarray:
    """Accumulate g*g and return the per-dimension step eta*g/(sqrt(acc)+eps).

    Dimensions whose accumulator is still exactly zero (only possible
    when g is zero there too) step by zero.
    """
    state.accumulator += g * g
    denom = np.sqrt(state.accumulator) + state.epsilon
    return np.divide(eta * g, denom, out=np.zeros_like(g), where=denom > 0.0)


@dataclass(frozen=True)
class GradientEstimate:
    """One descent direction: gradient times importance weight."""

    vector: np.ndarray
    weight: float
    source: SampleDraw | int


@dataclass
class OptimizerState:
    theta: np.ndarray
    schedule: LearningRateSchedule
    t: int = 0
    adagrad: AdaGradState | None = None


def _apply(state: OptimizerState, estimate: np.ndarray) -> None:
    eta = state.schedule.rate(state.t)
    if state.adagrad is not None:
        state.theta -= adagrad_scale(state.adagrad, estimate, eta)
    else:
        state.theta -= eta * estimate
    state.t += 1


def sgd_step(
    state: OptimizerState, model: ModelSpec, ds: Dataset, rng: np.random.Generator
) -> GradientEstimate:
    """Uniform one-sample step; mutates ``state`` and returns the estimate."""
    j = int(rng.integers(ds.n))
    g = _models.gradient(model, state.theta, ds.x[j], float(ds.y[j]))
    _apply(state, g)
    return GradientEstimate(vector=g, weight=1.0, source=j)


def lgd_step(
    state: OptimizerState,
    model: ModelSpec,
    ds: Dataset,
    tables: HashTableSet,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> GradientEstimate:
    """Adaptive step: hash-table draw, gradient of the original point,
    importance weight 1 / (p * N).  Mutates ``state``."""
    query = _models.hash_query(model, state.theta)
    s = draw(tables, query, cfg, rng)
    g = _models.gradient(model, state.theta, ds.x[s.index], float(ds.y[s.index]))
    weight = 1.0 / (s.probability * ds.n)
    estimate = g * weight
    _apply(state, estimate)
    return GradientEstimate(vector=estimate, weight=weight, source=s)


def build_model_tables(
    model: ModelSpec,
    ds: Dataset,
    k: int,
    l: int,
    density: float,
    seed: int,
    *,
    coef: str = "sign",
    center: bool = False,
) -> HashTableSet:
    """Hash the model's stored vectors for ``ds`` into a fresh table set."""
    base, quadratic = _models.hash_inputs(model, ds.x, ds.y)
    if center:
        from .data import center_stored

        base, _ = center_stored(base)
    dim = base.shape[1] ** 2 if quadratic else base.shape[1]
    params = HashFamilyParams(k=k, l=l, dim=dim, density=density, seed=seed, coef=coef)
    return build_tables(base, params, quadratic=quadratic)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run needs besides the data and model."""

    sampler: str = "lgd"  # "lgd" or "sgd"
    schedule: LearningRateSchedule = field(default_factory=LearningRateSchedule)
    adagrad: bool = False
    epochs: float = 1.0
    eval_every: float = 0.25  # epoch fraction between trace records
    seed: int = 0
    k: int = 5
    l: int = 100
    density: float = 1.0 / 30.0
    max_probes: int | None = None
    loss_target: float | None = None
    center_stored: bool = False

    def __post_init__(self) -> None:
        if self.sampler not in ("lgd", "sgd"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.epochs < 0.0:
            raise ValueError("epochs must be >= 0")
        if self.eval_every <= 0.0:
            raise ValueError("eval cadence must be > 0")


@dataclass(frozen=True)
class TraceRecord:
    epoch: float
    wall_ns: int
    train_loss: float
    test_loss: float
    fallbacks: int
    l_p50: float
    l_p99: float


@dataclass
class ConvergenceTrace:
    """Per-checkpoint records of one run, plus sampler statistics.

    ``wall_ns`` accumulates a monotonic clock around step bodies only;
    evaluation passes are excluded.  Everything except ``wall_ns`` is a
    deterministic function of (config, seed).
    """

    sampler: str
    seed: int
    records: list[TraceRecord] = field(default_factory=list)
    l_histogram: dict[int, int] = field(default_factory=dict)
    fallback_count: int = 0
    steps: int = 0

    def final_train_loss(self) -> float:
        return self.records[-1].train_loss

    def deterministic_dict(self) -> dict:
        return {
            "sampler": self.sampler,
            "seed": self.seed,
            "steps": self.steps,
            "fallbacks": self.fallback_count,
            "l_histogram": {str(k): v for k, v in sorted(self.l_histogram.items())},
            "records": [
                {
                    "epoch": r.epoch,
                    "train_loss": r.train_loss,
                    "test_loss": r.test_loss,
                    "fallbacks": r.fallbacks,
                    "l_p50": r.l_p50,
                    "l_p99": r.l_p99,
                }
                for r in self.records
            ],
        }

    def timing_dict(self) -> dict:
        return {"wall_ns": [r.wall_ns for r in self.records]}


def _percentile_from_counts(counts: dict[int, int], q: float) -> float:
    total = sum(counts.values())
    if total == 0:
        return float("nan")
    target = q * (total - 1)
    seen = 0
    for value in sorted(counts):
        seen += counts[value]
        if seen - 1 >= target:
            return float(value)
    return float(max(counts))


def run(
    model: ModelSpec,
    train: Dataset,
    cfg: RunConfig,
    test: Dataset | None = None,
) -> ConvergenceTrace:
    """Train for the epoch budget, recording the trace at the eval cadence.

    Deterministic given (config, seed) and a single thread.  Child seeds
    for table construction and the two samplers are derived from
    ``cfg.seed`` in a fixed order.  Raises DivergenceError naming the
    step when any recorded loss turns non-finite.
    """
    table_seed, sampler_seed = (int(s) for s in spawn_seeds(cfg.seed, 2))
    state = OptimizerState(
        theta=np.zeros(model.d),
        schedule=cfg.schedule,
        adagrad=AdaGradState.fresh(model.d) if cfg.adagrad else None,
    )
    tables: HashTableSet | None = None
    sampler_cfg = SamplerConfig(max_probes=cfg.max_probes)
    if cfg.sampler == "lgd":
        tables = build_model_tables(
            model, train, cfg.k, cfg.l, cfg.density, table_seed,
            center=cfg.center_stored,
        )
    rng = generator(sampler_seed)
    trace = ConvergenceTrace(sampler=cfg.sampler, seed=cfg.seed)
    total_steps = int(round(cfg.epochs * train.n))
    eval_interval = max(1, int(round(cfg.eval_every * train.n)))
    wall_ns = 0

    def record() -> None:
        train_loss = _models.mean_loss(model, state.theta, train.x, train.y)
        test_loss = (
            _models.mean_loss(model, state.theta, test.x, test.y)
            if test is not None
            else float("nan")
        )
        if not np.isfinite(train_loss):
            raise DivergenceError(
                f"non-finite training loss at step {state.t} "
                f"(sampler={cfg.sampler}, eta0={cfg.schedule.eta0})"
            )
        trace.records.append(
            TraceRecord(
                epoch=state.t / train.n,
                wall_ns=wall_ns,
                train_loss=train_loss,
                test_loss=test_loss,
                fallbacks=trace.fallback_count,
                l_p50=_percentile_from_counts(trace.l_histogram, 0.50),
                l_p99=_percentile_from_counts(trace.l_histogram, 0.99),
            )
        )

    record()
    for step in range(total_steps):
        tic = time.perf_counter_ns()
        if cfg.sampler == "lgd":
            est = lgd_step(state, model, train, tables, sampler_cfg, rng)
        else:
            est = sgd_step(state, model, train, rng)
        wall_ns += time.perf_counter_ns() - tic
        trace.steps += 1
        if isinstance(est.source, SampleDraw):
            s = est.source
            trace.l_histogram[s.tables_probed] = (
                trace.l_histogram.get(s.tables_probed, 0) + 1
            )
            if s.fallback:
                trace.fallback_count += 1
        if (step + 1) % eval_interval == 0 or step + 1 == total_steps:
            record()
            if (
                cfg.loss_target is not None
                and trace.records[-1].train_loss <= cfg.loss_target
            ):
                break
    return trace


def sweep_step_size(
    model: ModelSpec,
    train: Dataset,
    etas: list[float],
    base_cfg: RunConfig,
    budget_epochs: float = 0.5,
) -> float:
    """Pick the step size whose short run converges best for both samplers.

    Runs each candidate for a small budget with the LGD and SGD loops
    and returns the eta with the lowest worst-case final loss; divergent
    candidates are discarded.
    """
    best_eta, best_loss = None, np.inf
    for eta in etas:
        worst = -np.inf
        for sampler in ("lgd", "sgd"):
            cfg = RunConfig(
                sampler=sampler,
                schedule=LearningRateSchedule(kind=base_cfg.schedule.kind, eta0=eta),
                adagrad=base_cfg.adagrad,
                epochs=budget_epochs,
                eval_every=budget_epochs,
                seed=base_cfg.seed,
                k=base_cfg.k,
                l=base_cfg.l,
                density=base_cfg.density,
            )
            try:
                trace = run(model, train, cfg)
            except DivergenceError:
                worst = np.inf
                break
            worst = max(worst, trace.final_train_loss())
        if worst < best_loss:
            best_loss, best_eta = worst, eta
    if best_eta is None:
        raise DivergenceError("every candidate step size diverged during the sweep")
    return best_eta
