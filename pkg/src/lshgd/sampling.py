"""Adaptive draws from the hash tables with exact selection probabilities.

A draw probes the tables in a fresh uniformly-random order without
replacement.  At the first non-empty bucket for the query's code it
returns a uniformly-random member together with

    p = cp^K * (1 - cp^K)^(l-1) / |bucket|,

where cp is the single-hash collision probability of the returned point
with the query and l counts the probed tables including the successful
one.  Probing without replacement guarantees termination; the
(1 - cp^K)^(l-1) factor treats the l-1 empty probes as independent
misses of the returned point, which is an approximation inherited from
the estimator this feeds (empty buckets are rare in the intended
operating regime, so l is almost always 1 and the factor is 1).

If every probed bucket is empty the fallback policy either raises or
emits a uniform index with probability 1/N, flagged on the record so
consumers can count or exclude it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hashing import HashTableSet

__all__ = [
    "SampleDraw",
    "SamplerConfig",
    "BucketExhaustionError",
    "selection_probability",
    "draw",
    "draw_batch",
]

FALLBACK_UNIFORM = "uniform"
FALLBACK_ERROR = "error"


class BucketExhaustionError(RuntimeError):
    """Every probed bucket was empty under the error fallback policy."""


@dataclass(slots=True)
class SampleDraw:
    """One adaptive sample and everything needed to recompute its probability.

    Treat as immutable; slots keep construction cheap on the draw path.
    """

    index: int
    probability: float
    bucket_size: int
    tables_probed: int
    fallback: bool = False


@dataclass(frozen=True)
class SamplerConfig:
    """Probe budget and exhaustion policy.

    ``max_probes`` defaults to all L tables.  ``fallback`` selects what
    happens when every probed bucket is empty.
    """

    max_probes: int | None = None
    fallback: str = FALLBACK_UNIFORM

    def __post_init__(self) -> None:
        if self.max_probes is not None and self.max_probes < 1:
            raise ValueError(f"max_probes must be >= 1, got {self.max_probes}")
        if self.fallback not in (FALLBACK_UNIFORM, FALLBACK_ERROR):
            raise ValueError(f"unknown fallback policy {self.fallback!r}")


def selection_probability(cp: float, k: int, l: int, s: int) -> float:
    """cp^k * (1 - cp^k)^(l-1) / s, the exact draw probability."""
    if not 0.0 <= cp <= 1.0:
        raise ValueError(f"collision probability {cp} outside [0, 1]")
    if l < 1 or s < 1 or k < 1:
        raise ValueError(f"need k, l, s >= 1, got k={k} l={l} s={s}")
    q = cp**k
    return q * (1.0 - q) ** (l - 1) / s


def _probe_order(n_tables: int, max_probes: int, rng: np.random.Generator):
    """Yield up to ``max_probes`` distinct table indices, uniformly ordered.

    The first index comes from a single integer draw; the (rare) rest of
    the permutation is only materialized when the first bucket is empty.
    """
    first = int(rng.integers(n_tables))
    yield first
    if max_probes == 1:
        return
    rest = rng.permutation(n_tables)
    emitted = 1
    for t in rest:
        if t == first:
            continue
        yield int(t)
        emitted += 1
        if emitted == max_probes:
            return


def _query_norm(tables: HashTableSet, query: np.ndarray) -> float:
    n = float(query @ query) ** 0.5
    if n == 0.0:
        raise ValueError("query vector must be nonzero")
    return n


def _check_query(tables: HashTableSet, query: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (tables.vectors.shape[1],):
        raise ValueError(
            f"query has shape {query.shape}, expected ({tables.vectors.shape[1]},)"
        )
    return query


def draw(
    tables: HashTableSet,
    query: np.ndarray,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> SampleDraw:
    """Draw one stored index for ``query`` per the table-probing scheme.

    ``query`` lives in the same space as the rows the tables were built
    from (the base space when the index hashes outer products).  The
    typical draw costs one table probe (K projections) plus one random
    double (split into the table pick and the bucket pick, which stay
    independent and uniform), so the fast path is kept deliberately
    lean: validation happens up front and every quantity is computed
    exactly once.
    """
    if query.shape[0] != tables.vectors.shape[1] or query.ndim != 1:
        raise ValueError(
            f"query has shape {query.shape}, expected ({tables.vectors.shape[1]},)"
        )
    qnorm = math.sqrt(query @ query)
    if qnorm == 0.0:
        raise ValueError("query vector must be nonzero")
    k = tables.params.k
    n_tables = tables.params.l
    quadratic = tables.quadratic
    dense = None if quadratic else tables.family._dense
    # One double supplies both picks; the fractional part left after the
    # table pick is still uniform and independent of it.
    u = rng.random() * n_tables
    first = int(u)
    u -= first
    if dense is not None:
        sums = (dense[first * k : first * k + k] @ query).tolist()
        code = 0
        for bit in range(k):
            if sums[bit] >= 0.0:
                code |= 1 << bit
    else:
        code = tables.query_code(query, first)
    bucket = tables.tables[first].get(code)
    if bucket is not None:
        m = len(bucket)
        index = int(bucket[int(u * m)])
        cos = (tables.vectors[index] @ query) / (tables.norms[index] * qnorm)
        if quadratic:
            cos = cos * cos
        cp = 1.0 - math.acos(max(-1.0, min(1.0, cos))) / math.pi
        return SampleDraw(index, cp**k / m, m, 1, False)
    return _draw_slow(tables, query, qnorm, first, cfg, rng)


def _draw_slow(
    tables: HashTableSet,
    query: np.ndarray,
    qnorm: float,
    first: int,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> SampleDraw:
    """Continue probing in random order after an empty first bucket."""
    k = tables.params.k
    n_tables = tables.params.l
    max_probes = min(cfg.max_probes or n_tables, n_tables)
    probed = 1
    if probed < max_probes:
        for t in rng.permutation(n_tables):
            t = int(t)
            if t == first:
                continue
            probed += 1
            bucket = tables.tables[t].get(tables.query_code(query, t))
            if bucket is not None:
                m = len(bucket)
                index = int(bucket[rng.integers(m)])
                cp = tables.collision_with(index, query, qnorm)
                q = cp**k
                return SampleDraw(
                    index, q * (1.0 - q) ** (probed - 1) / m, m, probed, False
                )
            if probed == max_probes:
                break
    if cfg.fallback == FALLBACK_ERROR:
        raise BucketExhaustionError(
            f"all {probed} probed buckets were empty for this query"
        )
    n = tables.n_points
    return SampleDraw(
        index=int(rng.integers(n)),
        probability=1.0 / n,
        bucket_size=n,
        tables_probed=probed,
        fallback=True,
    )


def draw_batch(
    tables: HashTableSet,
    query: np.ndarray,
    m: int,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> list[SampleDraw]:
    """Draw ``m`` samples, spilling across tables when buckets run short.

    If the first non-empty bucket holds at least ``m`` members, the batch
    is m distinct uniform members of it.  Otherwise the whole bucket is
    taken and probing continues through the remaining tables, skipping
    indices already collected, until the batch is full or the probe
    budget is exhausted; any shortfall is filled per the fallback
    policy.  Every draw records the probe count and bucket size at its
    own collection time.
    """
    if m < 1:
        raise ValueError(f"batch size must be >= 1, got {m}")
    query = _check_query(tables, query)
    qnorm = _query_norm(tables, query)
    max_probes = min(cfg.max_probes or tables.n_tables, tables.n_tables)
    k = tables.params.k
    out: list[SampleDraw] = []
    taken: set[int] = set()
    probed = 0
    for t in _probe_order(tables.n_tables, max_probes, rng):
        probed += 1
        bucket = tables.bucket(t, tables.query_code(query, t))
        if bucket is None:
            continue
        fresh = (
            bucket
            if not taken
            else bucket[~np.isin(bucket, np.fromiter(taken, dtype=np.int64))]
        )
        if fresh.size == 0:
            continue
        want = min(m - len(out), fresh.size)
        picks = rng.choice(fresh, size=want, replace=False)
        for index in picks:
            index = int(index)
            cp = tables.collision_with(index, query, qnorm)
            out.append(
                SampleDraw(
                    index=index,
                    probability=selection_probability(cp, k, probed, len(bucket)),
                    bucket_size=len(bucket),
                    tables_probed=probed,
                )
            )
            taken.add(index)
        if len(out) == m:
            return out
    if cfg.fallback == FALLBACK_ERROR:
        raise BucketExhaustionError(
            f"collected {len(out)} of {m} requested samples before exhausting tables"
        )
    n = tables.n_points
    while len(out) < m:
        out.append(
            SampleDraw(
                index=int(rng.integers(n)),
                probability=1.0 / n,
                bucket_size=n,
                tables_probed=probed,
                fallback=True,
            )
        )
    return out
