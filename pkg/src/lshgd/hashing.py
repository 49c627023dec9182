"""Sparse signed-random-projection hashing and the (K, L) table index.

One hash bit is the sign of a sparse random projection: each coordinate
enters the projection with probability ``density`` and carries a +1/-1
coefficient.  ``K`` bits concatenate into one table's bucket key and
``L`` independent tables give the sampler its retries.  Two vectors
collide on a single (dense, sign-only) hash with probability

    cp(x, q) = 1 - arccos(cos(x, q)) / pi,

which is monotone in cosine similarity.  Tables are built once over the
stored vectors and are immutable afterwards; queries cost
K * density * dim multiplications per probed table.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .rng import generator

__all__ = [
    "COEF_SIGN",
    "COEF_GAUSSIAN",
    "HashFamilyParams",
    "SparseSignProjection",
    "SrpFamily",
    "HashTableSet",
    "build_family",
    "compute_code",
    "build_tables",
    "collision_probability",
    "empirical_collision_rate",
    "save_tables",
    "load_tables",
]

_POINT_CHUNK = 2048  # rows hashed per vectorized pass during a build


COEF_SIGN = "sign"
COEF_GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class HashFamilyParams:
    """Parameters of one hash family: K bits per table, L tables.

    ``dim`` is the dimensionality of the hashed space (the stored and
    query vectors as seen by the projections, after any feature
    expansion).  ``density`` is the expected fraction of nonzero
    projection coefficients; 1/30 matches the sparse regime the sampler
    is sized for, 1.0 gives dense projections.

    ``coef`` selects the nonzero coefficients: ``sign`` draws +1/-1
    equiprobably (cheapest, and statistically indistinguishable from
    the arccos collision law on generic directions), ``gaussian`` draws
    N(0, 1) amplitudes, for which the law 1 - theta/pi is exact for
    arbitrary, even adversarially structured, inputs.  Use ``gaussian``
    whenever downstream estimates divide by the formula and need it to
    be exact.
    """

    k: int
    l: int
    dim: int
    density: float = 1.0 / 30.0
    seed: int = 0
    coef: str = COEF_SIGN

    def __post_init__(self) -> None:
        if self.k < 1 or self.l < 1 or self.dim < 1:
            raise ValueError(
                f"k, l, dim must all be >= 1, got k={self.k} l={self.l} dim={self.dim}"
            )
        if self.k > 64:
            raise ValueError(f"codes are packed into 64-bit words; k={self.k} > 64")
        if not 0.0 < self.density <= 1.0:
            raise ValueError(f"density must lie in (0, 1], got {self.density}")
        if self.coef not in (COEF_SIGN, COEF_GAUSSIAN):
            raise ValueError(f"unknown coefficient style {self.coef!r}")


@dataclass(frozen=True)
class SparseSignProjection:
    """One hash function: coordinate indices (strictly increasing) and signs.

    For the default sign family every coefficient is +1 or -1; the
    gaussian variant stores real amplitudes in the same field.
    """

    indices: np.ndarray  # int64, strictly increasing, all < dim
    signs: np.ndarray  # float64; +1/-1 for the sign family


class SrpFamily:
    """L*K sparse sign projections drawn deterministically from a seed.

    Internally the family is stored as flat index/sign arrays with
    per-hash offsets so that codes for many vectors can be computed with
    gather + segmented-sum instead of per-projection loops.
    """

    def __init__(self, params: HashFamilyParams):
        self.params = params
        rng = generator(params.seed)
        n_hashes = params.l * params.k
        # Inclusion mask first, then coefficients, in one documented draw order.
        mask = rng.random((n_hashes, params.dim)) < params.density
        if params.coef == COEF_SIGN:
            signs = np.where(rng.random((n_hashes, params.dim)) < 0.5, -1.0, 1.0)
        else:
            signs = rng.standard_normal((n_hashes, params.dim))
        counts = mask.sum(axis=1)
        self._offsets = np.zeros(n_hashes + 1, dtype=np.int64)
        np.cumsum(counts, out=self._offsets[1:])
        flat = np.flatnonzero(mask.ravel())
        self._indices = (flat % params.dim).astype(np.int64)
        self._signs = signs.ravel()[flat]
        # The full projection matrix doubles code computation as one BLAS
        # matmul; keep it unless it is large enough that the sparse
        # gather path is the better trade.
        self._dense = np.where(mask, signs, 0.0) if n_hashes * params.dim <= 4_000_000 else None
        # Per-table slices plus reduceat segment starts for the K hashes.
        self._table_slices = [
            slice(self._offsets[t * params.k], self._offsets[(t + 1) * params.k])
            for t in range(params.l)
        ]
        self._table_segments = [
            self._offsets[t * params.k : (t + 1) * params.k] - self._offsets[t * params.k]
            for t in range(params.l)
        ]
        self._code_weights = np.uint64(1) << np.arange(params.k, dtype=np.uint64)
        self._quad_rows: np.ndarray | None = None
        self._quad_cols: np.ndarray | None = None

    @property
    def n_hashes(self) -> int:
        return self.params.l * self.params.k

    def projection(self, table: int, bit: int) -> SparseSignProjection:
        """The (table, bit) hash function as an index/sign record."""
        h = table * self.params.k + bit
        lo, hi = self._offsets[h], self._offsets[h + 1]
        return SparseSignProjection(self._indices[lo:hi], self._signs[lo:hi])

    @staticmethod
    def _segment_sums(values: np.ndarray, segments: np.ndarray) -> np.ndarray:
        """Per-hash projection values from flat entry products.

        ``segments`` holds each hash's start offset into the columns of
        ``values``; zero-entry hashes sum to 0.
        """
        width = values.shape[1]
        if width == 0:
            return np.zeros((values.shape[0], len(segments)))
        if segments[-1] >= width:
            # A trailing zero-entry hash would index past the end; pad
            # one zero column so every segment start is valid.
            values = np.concatenate([values, np.zeros((values.shape[0], 1))], axis=1)
        sums = np.add.reduceat(values, segments, axis=1)
        # reduceat yields a[start] rather than 0 for empty segments.
        empty = segments == np.append(segments[1:], width)
        if empty.any():
            sums[:, empty] = 0.0
        return sums

    def _segment_codes(self, values: np.ndarray, table: int) -> np.ndarray:
        """Pack per-entry products into K-bit codes for one table.

        Zero projections take bit 1 via the >= 0 tie rule.
        """
        sums = self._segment_sums(values, self._table_segments[table])
        bits = (sums >= 0.0).astype(np.uint64)
        return bits @ self._code_weights

    def _pack(self, sums: np.ndarray) -> np.ndarray:
        """(N, L) codes from per-hash projection values (N, L*K)."""
        bits = (sums >= 0.0).astype(np.uint64)
        return bits.reshape(-1, self.params.l, self.params.k) @ self._code_weights

    def _expand(self, base: np.ndarray) -> np.ndarray:
        """Materialize the outer-product rows (small inputs only)."""
        return np.einsum("ni,nj->nij", base, base).reshape(base.shape[0], -1)

    def _check_plain(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.atleast_2d(vectors)
        if vectors.shape[1] != self.params.dim:
            raise ValueError(
                f"expected vectors of dim {self.params.dim}, got {vectors.shape[1]}"
            )
        return vectors

    def _check_base(self, base: np.ndarray) -> np.ndarray:
        base = np.atleast_2d(base)
        m = base.shape[1]
        if m * m != self.params.dim:
            raise ValueError(
                f"family dim {self.params.dim} is not the square of base dim {m}"
            )
        return base

    def codes(self, vectors: np.ndarray, table: int) -> np.ndarray:
        """K-bit codes of ``vectors`` (rows) under one table's meta-hash."""
        vectors = self._check_plain(vectors)
        if self._dense is not None:
            k = self.params.k
            sums = vectors @ self._dense[table * k : (table + 1) * k].T
            bits = (sums >= 0.0).astype(np.uint64)
            return bits @ self._code_weights
        sl = self._table_slices[table]
        values = vectors[:, self._indices[sl]] * self._signs[sl]
        return self._segment_codes(values, table)

    def codes_quadratic(self, base: np.ndarray, table: int) -> np.ndarray:
        """Codes of the flattened outer products of ``base`` rows.

        Equivalent to ``codes`` after expanding each row u to the
        row-major outer product u (x) u; large inputs avoid materializing
        the dim = m*m expansion, since entry (i, j) of it is u[i]*u[j].
        """
        base = self._check_base(base)
        if self._dense is not None:
            return self.codes(self._expand(base), table)
        m = base.shape[1]
        self._ensure_quad_index(m)
        sl = self._table_slices[table]
        values = base[:, self._quad_rows[sl]] * base[:, self._quad_cols[sl]]
        values *= self._signs[sl]
        return self._segment_codes(values, table)

    def _ensure_quad_index(self, m: int) -> None:
        if self._quad_rows is None:
            self._quad_rows, self._quad_cols = np.divmod(self._indices, m)

    def codes_matrix(self, vectors: np.ndarray, *, quadratic: bool = False) -> np.ndarray:
        """(L, N) code matrix for all tables at once.

        One BLAS multiply when the family keeps its dense matrix; a
        single gather pass when that intermediate stays small; otherwise
        a per-table loop.
        """
        vectors = self._check_base(vectors) if quadratic else self._check_plain(vectors)
        n = vectors.shape[0]
        if self._dense is not None and (
            not quadratic or n * self.params.dim <= 4_000_000
        ):
            flat = self._expand(vectors) if quadratic else vectors
            return np.ascontiguousarray(self._pack(flat @ self._dense.T).T)
        total = int(self._offsets[-1])
        if n * max(total, 1) > 4_000_000:
            per_table = self.codes_quadratic if quadratic else self.codes
            return np.stack([per_table(vectors, t) for t in range(self.params.l)])
        if quadratic:
            self._ensure_quad_index(vectors.shape[1])
            values = vectors[:, self._quad_rows] * vectors[:, self._quad_cols]
            values *= self._signs
        else:
            values = vectors[:, self._indices] * self._signs
        sums = self._segment_sums(values, self._offsets[:-1])
        return np.ascontiguousarray(self._pack(sums).T)


def build_family(params: HashFamilyParams) -> SrpFamily:
    """Draw the L*K sparse sign projections for ``params``.

    Deterministic in ``params.seed``; each projection includes every
    coordinate independently with probability ``density`` and assigns
    +1/-1 coefficients equiprobably.
    """
    return SrpFamily(params)


def compute_code(family: SrpFamily, v: np.ndarray, table: int) -> int:
    """K-bit code of a single vector for one table.

    Bit k is 1 iff the k-th projection's sparse dot product with ``v``
    is >= 0 (an exact zero hashes to 1).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != family.params.dim:
        raise ValueError(f"expected a vector of dim {family.params.dim}, got {v.shape}")
    return int(family.codes(v[None, :], table)[0])


def collision_probability(x: np.ndarray, q: np.ndarray) -> float:
    """Single-hash collision probability 1 - arccos(cos(x, q)) / pi."""
    x = np.asarray(x, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    nx = float(np.linalg.norm(x))
    nq = float(np.linalg.norm(q))
    if nx == 0.0 or nq == 0.0:
        raise ValueError("collision probability is undefined for zero vectors")
    cos = np.clip(float(x @ q) / (nx * nq), -1.0, 1.0)
    return 1.0 - float(np.arccos(cos)) / np.pi


def _cp_from_cosine(cos: float, quadratic: bool) -> float:
    """cp given the base-space cosine; the outer-product expansion squares it."""
    if quadratic:
        cos = cos * cos
    return 1.0 - float(np.arccos(np.clip(cos, -1.0, 1.0))) / np.pi


@dataclass
class HashTableSet:
    """L immutable hash tables over one set of stored vectors.

    Buckets map a packed code to the indices of the stored points whose
    meta-hash equals it, in insertion (dataset) order.  Only indices are
    stored; ``vectors`` is a reference to the caller's matrix, kept so
    draws can recompute collision probabilities.  When ``quadratic`` is
    true the rows of ``vectors`` are base vectors u and the hashed point
    is the flattened outer product u (x) u.
    """

    params: HashFamilyParams
    family: SrpFamily
    tables: list[dict[int, np.ndarray]]
    vectors: np.ndarray
    norms: np.ndarray
    quadratic: bool = False
    point_codes: np.ndarray | None = field(default=None, repr=False)  # (L, N)

    @property
    def n_points(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_tables(self) -> int:
        return self.params.l

    def query_code(self, query: np.ndarray, table: int) -> int:
        """Code of a query (given in the same space as ``vectors`` rows).

        Hot path for the sampler: one mat-vec against the table's K
        projections when the dense matrix is kept, falling back to the
        general gather machinery otherwise.
        """
        fam = self.family
        if fam._dense is not None and not self.quadratic:
            k = fam.params.k
            sums = fam._dense[table * k : (table + 1) * k] @ query
            code = 0
            for bit in range(k):
                if sums[bit] >= 0.0:
                    code |= 1 << bit
            return code
        q = np.atleast_2d(np.asarray(query, dtype=np.float64))
        if self.quadratic:
            return int(fam.codes_quadratic(q, table)[0])
        return int(fam.codes(q, table)[0])

    def query_codes(self, query: np.ndarray) -> np.ndarray:
        """Codes of a query for all L tables."""
        return np.array(
            [self.query_code(query, t) for t in range(self.n_tables)], dtype=np.uint64
        )

    def bucket(self, table: int, code: int) -> np.ndarray | None:
        return self.tables[table].get(int(code))

    def collision_with(self, index: int, query: np.ndarray, query_norm: float) -> float:
        """cp between stored point ``index`` and the query.

        ``query_norm`` is the plain L2 norm of ``query`` in the space the
        rows live in; for quadratic tables the expansion's cosine is the
        square of the base cosine, since T(u).T(v) = (u.v)^2 and
        |T(u)| = |u|^2.
        """
        cos = float(self.vectors[index] @ query) / (self.norms[index] * query_norm)
        if self.quadratic:
            cos = cos * cos
        if cos > 1.0:
            cos = 1.0
        elif cos < -1.0:
            cos = -1.0
        return 1.0 - math.acos(cos) / math.pi

    def membership(self, query: np.ndarray) -> np.ndarray:
        """Boolean (L, N) matrix: point j shares the query's code in table t.

        Requires the build to have kept ``point_codes``.
        """
        if self.point_codes is None:
            raise ValueError("tables were built without keep_codes=True")
        return self.point_codes == self.query_codes(query)[:, None]


def build_tables(
    vectors: np.ndarray,
    params: HashFamilyParams,
    *,
    quadratic: bool = False,
    keep_codes: bool = False,
) -> HashTableSet:
    """Hash every row of ``vectors`` into all L tables.

    Each point lands in exactly one bucket per table; bucket contents
    are dataset indices in insertion order.  With ``quadratic`` the rows
    are base vectors whose outer-product expansion is hashed
    (``params.dim`` must equal ``m*m`` for rows of length m).
    ``keep_codes`` retains the (L, N) code matrix for diagnostics.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValueError("vectors must be a non-empty 2-d array")
    m = vectors.shape[1]
    expected = m * m if quadratic else m
    if params.dim != expected:
        raise ValueError(
            f"params.dim={params.dim} does not match {'squared ' if quadratic else ''}"
            f"vector dim {expected}"
        )
    family = build_family(params)
    n = vectors.shape[0]
    code_matrix = np.empty((params.l, n), dtype=np.uint64)
    for lo in range(0, n, _POINT_CHUNK):
        hi = min(lo + _POINT_CHUNK, n)
        code_matrix[:, lo:hi] = family.codes_matrix(vectors[lo:hi], quadratic=quadratic)
    tables: list[dict[int, np.ndarray]] = []
    for t in range(params.l):
        codes_t = code_matrix[t]
        order = np.argsort(codes_t, kind="stable")
        sorted_codes = codes_t[order]
        bounds = np.flatnonzero(sorted_codes[1:] != sorted_codes[:-1]) + 1
        edges = [0, *bounds.tolist(), n]
        buckets: dict[int, np.ndarray] = {}
        for a, b in zip(edges[:-1], edges[1:]):
            buckets[int(sorted_codes[a])] = order[a:b]
        tables.append(buckets)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("stored vectors must be nonzero to be hashed meaningfully")
    return HashTableSet(
        params=params,
        family=family,
        tables=tables,
        vectors=vectors,
        norms=norms,
        quadratic=quadratic,
        point_codes=code_matrix if keep_codes else None,
    )


def empirical_collision_rate(
    x: np.ndarray,
    q: np.ndarray,
    n_projections: int,
    density: float = 1.0,
    seed: int = 0,
    coef: str = COEF_SIGN,
) -> float:
    """Fraction of independent projections on which x and q agree.

    Monte-Carlo counterpart of ``collision_probability`` with the same
    >= 0 tie rule; converges at the usual M**-0.5 rate.
    """
    x = np.asarray(x, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    rng = generator(seed)
    d = x.shape[0]
    agree = 0
    chunk = max(1, min(n_projections, 4_000_000 // max(d, 1)))
    done = 0
    while done < n_projections:
        m = min(chunk, n_projections - done)
        mask = rng.random((m, d)) < density
        if coef == COEF_SIGN:
            w = np.where(rng.random((m, d)) < 0.5, -1.0, 1.0)
        else:
            w = rng.standard_normal((m, d))
        w *= mask
        agree += int(np.count_nonzero((w @ x >= 0.0) == (w @ q >= 0.0)))
        done += m
    return agree / n_projections


_MAGIC = b"LGDT"
_VERSION = 1


def save_tables(tables: HashTableSet, path: str) -> None:
    """Write a binary snapshot of a table set.

    Layout (little-endian): magic ``LGDT``, u32 version, u32 K, u32 L,
    u64 dim, f64 density, u64 seed, u8 coefficient style (0 sign,
    1 gaussian), u8 quadratic flag, u64 n_points, then per table a u64
    bucket count followed by (u64 code, u64 size, size * u64 indices)
    records with codes in ascending order, and a trailing u32 CRC32 of
    everything before it.  Stored vectors are not serialized; loading
    re-derives the projections from the seed.
    """
    p = tables.params
    parts = [
        _MAGIC,
        struct.pack(
            "<IIIQdQBBQ",
            _VERSION,
            p.k,
            p.l,
            p.dim,
            p.density,
            p.seed,
            0 if p.coef == COEF_SIGN else 1,
            1 if tables.quadratic else 0,
            tables.n_points,
        ),
    ]
    for t in range(p.l):
        buckets = tables.tables[t]
        parts.append(struct.pack("<Q", len(buckets)))
        for code in sorted(buckets):
            idx = np.asarray(buckets[code], dtype="<u8")
            parts.append(struct.pack("<QQ", code, idx.size))
            parts.append(idx.tobytes())
    payload = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_tables(path: str, vectors: np.ndarray) -> HashTableSet:
    """Load a snapshot and re-attach the stored vectors it was built from."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or zlib.crc32(blob[:-4]) != struct.unpack("<I", blob[-4:])[0]:
        raise ValueError(f"snapshot checksum mismatch in {path!r}")
    payload = blob[:-4]
    if payload[:4] != _MAGIC:
        raise ValueError(f"{path!r} is not a table snapshot")
    off = 4
    version, k, l, dim, density, seed, coef_flag, quad_flag, n_points = (
        struct.unpack_from("<IIIQdQBBQ", payload, off)
    )
    off += struct.calcsize("<IIIQdQBBQ")
    if version != _VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    params = HashFamilyParams(
        k=k, l=l, dim=dim, density=density, seed=int(seed),
        coef=COEF_SIGN if coef_flag == 0 else COEF_GAUSSIAN,
    )
    quadratic = bool(quad_flag)
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[0] != n_points:
        raise ValueError(
            f"snapshot indexes {n_points} points but {vectors.shape[0]} vectors given"
        )
    tables: list[dict[int, np.ndarray]] = []
    for _ in range(l):
        (n_buckets,) = struct.unpack_from("<Q", payload, off)
        off += 8
        buckets: dict[int, np.ndarray] = {}
        for _ in range(n_buckets):
            code, size = struct.unpack_from("<QQ", payload, off)
            off += 16
            idx = np.frombuffer(payload, dtype="<u8", count=size, offset=off).astype(
                np.int64
            )
            off += 8 * size
            buckets[int(code)] = idx
        tables.append(buckets)
    family = build_family(params)
    norms = np.linalg.norm(vectors, axis=1)
    return HashTableSet(
        params=params,
        family=family,
        tables=tables,
        vectors=vectors,
        norms=norms,
        quadratic=quadratic,
    )
