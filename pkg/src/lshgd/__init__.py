"""Gradient descent with adaptive hash-table sampling.

The per-iteration training sample is drawn from locality-sensitive hash
tables keyed by the current parameters instead of uniformly; the exact
selection probability of each draw importance-weights its gradient so
the update stays an unbiased estimate of the full gradient, while the
draw itself costs a handful of sparse sign projections.
"""

from .data import Dataset, LabeledPoint, PreprocessConfig, load_csv, normalize, split
from .diagnostics import (
    EstimatorStats,
    Lemma1Report,
    ProbeReport,
    cosine_probe,
    estimator_stats,
    gradient_norm_probe,
    lemma1_check,
    optimal_weights,
    sgd_trace_exact,
)
from .hashing import (
    HashFamilyParams,
    HashTableSet,
    SparseSignProjection,
    build_family,
    build_tables,
    collision_probability,
    compute_code,
)
from .models import ModelSpec, full_gradient, gradient, loss, quadratic_transform
from .optim import (
    AdaGradState,
    ConvergenceTrace,
    GradientEstimate,
    LearningRateSchedule,
    OptimizerState,
    RunConfig,
    adagrad_scale,
    build_model_tables,
    lgd_step,
    run,
    sgd_step,
    sweep_step_size,
)
from .sampling import SampleDraw, SamplerConfig, draw, draw_batch, selection_probability

__version__ = "0.1.0"
