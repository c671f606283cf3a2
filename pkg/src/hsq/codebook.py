"""Shared vector codebooks.

A codebook is a d'-by-m matrix whose columns are unit-norm direction
vectors on the hyper-sphere. Every device and the coordinator hold the
same matrix; only a column index ever crosses the wire. Generation is a
pure function of (method, dim, count, seed) on the portable stream from
:mod:`hsq.rng`, so a seed alone is enough to share a codebook.

Column generation avoids LAPACK so the matrix is reproducible from the
seed on any platform: orthonormalization is done by modified Gram-Schmidt
with one re-orthogonalization pass. The pseudoinverse and the singular
values are derived metadata (computed from the columns at construction)
and are allowed to use the dense linear-algebra routines.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidShape, RankDeficient, WireFormatError
from .rng import Stream

UNIT_NORM_TOL = 1e-12
IDENTITY_TOL = 1e-9
RANK_TOL = 1e-10

KMEANS_POOL_FACTOR = 256
KMEANS_ITERATIONS = 25

CODEBOOK_MAGIC = b"HSQC"
CODEBOOK_VERSION = 1


class CodebookMethod(enum.Enum):
    """How the codewords are placed on the hyper-sphere."""

    SOB = "sob"                          # standard orthonormal basis e_1..e_d'
    RANDOM_ROTATION = "random-rotation"  # Haar rotation of the SOB
    RANDOM_GAUSSIAN = "random-gaussian"  # normalized Gaussian directions
    KMEANS_GAUSSIAN = "kmeans-gaussian"  # Lloyd centers of a Gaussian pool
    CUSTOM = "custom"                    # caller-supplied columns


_METHOD_CODES = {
    CodebookMethod.SOB: 0,
    CodebookMethod.RANDOM_ROTATION: 1,
    CodebookMethod.RANDOM_GAUSSIAN: 2,
    CodebookMethod.KMEANS_GAUSSIAN: 3,
    CodebookMethod.CUSTOM: 255,
}
_CODE_METHODS = {v: k for k, v in _METHOD_CODES.items()}


@dataclass(frozen=True)
class Codebook:
    """Immutable codebook with precomputed decode/encode metadata.

    Attributes:
        dim: segment length d' (rows).
        count: number of codewords m (columns), m >= dim.
        columns: d'-by-m float64 matrix, each column unit norm.
        pinv: m-by-d' pseudoinverse columns.T @ inv(columns @ columns.T).
        sigma_min: smallest singular value of ``columns``.
        sigma_max: largest singular value of ``columns``.
        seed: generation seed (0 for custom matrices).
        method: how the columns were produced.
    """

    dim: int
    count: int
    columns: np.ndarray
    pinv: np.ndarray
    sigma_min: float
    sigma_max: float
    seed: int
    method: CodebookMethod

    @classmethod
    def from_columns(cls, columns: np.ndarray, seed: int = 0,
                     method: CodebookMethod = CodebookMethod.CUSTOM) -> "Codebook":
        """Build a codebook from explicit columns, validating invariants.

        Raises:
            InvalidShape: not a 2-D matrix with count >= dim, or columns
                that are not unit norm.
            RankDeficient: smallest singular value below 1e-10.
        """
        columns = np.ascontiguousarray(columns, dtype=np.float64)
        if columns.ndim != 2:
            raise InvalidShape(f"codebook must be a 2-D matrix, got ndim={columns.ndim}")
        dim, count = columns.shape
        if dim < 1:
            raise InvalidShape("segment length must be at least 1")
        if count < dim:
            raise InvalidShape(f"need at least as many codewords as dimensions, got m={count} < {dim}")
        norms = np.linalg.norm(columns, axis=0)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            worst = float(np.max(np.abs(norms - 1.0)))
            raise InvalidShape(f"codewords must be unit norm (worst deviation {worst:.3e})")

        gram = columns @ columns.T
        eigvals = np.linalg.eigvalsh(gram)
        sigma_min = float(np.sqrt(max(eigvals[0], 0.0)))
        sigma_max = float(np.sqrt(max(eigvals[-1], 0.0)))
        if sigma_min < RANK_TOL:
            raise RankDeficient(f"sigma_min = {sigma_min:.3e} < {RANK_TOL:g}; try another seed")
        pinv = np.linalg.solve(gram, columns).T
        return cls(dim=dim, count=count, columns=columns, pinv=pinv,
                   sigma_min=sigma_min, sigma_max=sigma_max,
                   seed=int(seed), method=method)


def pseudoinverse(columns: np.ndarray) -> np.ndarray:
    """Min-norm right inverse C.T @ inv(C @ C.T) of a full-row-rank matrix."""
    gram = columns @ columns.T
    eigvals = np.linalg.eigvalsh(gram)
    if np.sqrt(max(eigvals[0], 0.0)) < RANK_TOL:
        raise RankDeficient("matrix is numerically rank deficient")
    return np.linalg.solve(gram, columns).T


def _orthonormalize(a: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    Equivalent to the Q of a QR factorization whose R has positive
    diagonal, so the result is independent of any factorization
    convention. Square Gaussian input yields a Haar-distributed rotation.
    """
    n = a.shape[0]
    q = np.array(a, dtype=np.float64)
    for j in range(n):
        v = q[:, j]
        for _ in range(2):  # second pass controls cancellation error
            for i in range(j):
                v = v - (q[:, i] @ v) * q[:, i]
        norm = np.linalg.norm(v)
        if norm < RANK_TOL:
            raise RankDeficient(f"orthonormalization collapsed at column {j}")
        q[:, j] = v / norm
    return q


def _kmeans_columns(dim: int, count: int, stream: Stream) -> np.ndarray:
    """Lloyd iterations on a seeded Gaussian pool, centers normalized."""
    pool = stream.derive("pool").normal_matrix(KMEANS_POOL_FACTOR * count, dim)
    init = stream.derive("init").choice_without_replacement(pool.shape[0], count)
    centers = pool[init].copy()

    pool_sq = np.einsum("ij,ij->i", pool, pool)
    for _ in range(KMEANS_ITERATIONS):
        # squared distances via the expansion ||x - c||^2 = ||x||^2 - 2 x.c + ||c||^2
        cross = pool @ centers.T
        center_sq = np.einsum("ij,ij->i", centers, centers)
        assign = np.argmin(pool_sq[:, None] - 2.0 * cross + center_sq[None, :], axis=1)
        dists = pool_sq - 2.0 * cross[np.arange(pool.shape[0]), assign] + center_sq[assign]
        for c in range(count):
            members = assign == c
            if np.any(members):
                centers[c] = pool[members].mean(axis=0)
            else:
                # re-seed an empty cluster from the globally farthest point
                far = int(np.argmax(dists))
                centers[c] = pool[far]
                dists[far] = -np.inf
    norms = np.linalg.norm(centers, axis=1, keepdims=True)
    return (centers / norms).T


def generate(method: CodebookMethod | str, dim: int, count: int, seed: int) -> Codebook:
    """Generate the shared codebook for (method, dim, count, seed).

    Deterministic: the same arguments reproduce the same columns
    bit-for-bit in any process, which is what lets a coordinator ship a
    seed instead of the matrix itself.

    Args:
        method: placement method; SOB and RANDOM_ROTATION require count == dim.
        dim: segment length d'.
        count: number of codewords m >= dim.
        seed: 64-bit generation seed.

    Raises:
        InvalidShape: impossible dim/count combination.
        RankDeficient: the sampled matrix is numerically rank deficient
            (resolve by retrying with a different seed).
    """
    method = CodebookMethod(method)
    if dim < 1:
        raise InvalidShape("segment length must be at least 1")
    if count < dim:
        raise InvalidShape(f"need count >= dim for full row rank, got m={count} < d'={dim}")
    if method in (CodebookMethod.SOB, CodebookMethod.RANDOM_ROTATION) and count != dim:
        raise InvalidShape(f"{method.value} codebooks are square, got dim={dim} count={count}")
    if method is CodebookMethod.CUSTOM:
        raise InvalidShape("custom codebooks are built via Codebook.from_columns")

    stream = Stream(seed).derive("codebook", method.value, dim, count)
    if method is CodebookMethod.SOB:
        columns = np.eye(dim)
    elif method is CodebookMethod.RANDOM_ROTATION:
        columns = _orthonormalize(stream.normal_matrix(dim, dim))
    elif method is CodebookMethod.RANDOM_GAUSSIAN:
        raw = stream.normal_matrix(count, dim)
        columns = (raw / np.linalg.norm(raw, axis=1, keepdims=True)).T
    else:
        columns = _kmeans_columns(dim, count, stream)
    return Codebook.from_columns(columns, seed=seed, method=method)


# ---------------------------------------------------------------------------
# Johnson-Lindenstrauss sketching of the projection matrices
# ---------------------------------------------------------------------------

class SketchPath(enum.Enum):
    """Which projection the sketch replaces."""

    UNBIASED = "unbiased"  # rows of the pseudoinverse
    GREEDY = "greedy"      # rows of columns.T (correlations)


@dataclass(frozen=True)
class SketchedCodebook:
    """Seeded Gaussian sketch of a codebook's projection matrix.

    ``project(g)`` approximates ``pinv @ g`` (unbiased path) or
    ``columns.T @ g`` (greedy path) as ``bar_c @ (h.T @ g / sqrt(k))``
    with ``bar_c = M @ h / sqrt(k)``. The two 1/sqrt(k) factors combine
    to 1/k, which is exactly the unbiased scaling since
    E[h @ h.T] = k * I for i.i.d. standard normal entries.
    """

    base: Codebook
    sketch_dim: int
    path: SketchPath
    h: np.ndarray       # dim x k
    bar_c: np.ndarray   # m x k

    def project(self, g: np.ndarray) -> np.ndarray:
        """Approximate the m correlation/projection coefficients of g."""
        return self.bar_c @ (self.h.T @ g / np.sqrt(self.sketch_dim))


def sketch(cb: Codebook, k: int, seed: int,
           path: SketchPath | str = SketchPath.UNBIASED) -> SketchedCodebook:
    """Sketch a codebook's projection matrix down to k inner products.

    Requires 1 <= k < dim; with k = dim there is nothing to save (use the
    exact matrices instead).
    """
    path = SketchPath(path)
    if not 1 <= k < cb.dim:
        raise InvalidShape(f"sketch size must satisfy 1 <= k < dim, got k={k}, dim={cb.dim}")
    h = Stream(seed).derive("sketch", path.value, k).normal_matrix(cb.dim, k)
    m = cb.pinv if path is SketchPath.UNBIASED else cb.columns.T
    bar_c = m @ h / np.sqrt(k)
    return SketchedCodebook(base=cb, sketch_dim=k, path=path, h=h, bar_c=bar_c)


# ---------------------------------------------------------------------------
# On-disk format: magic "HSQC", version, dims, method, seed, row-major f64 LE
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sHIIBQ")


def save_codebook(cb: Codebook, path: str) -> None:
    """Write a codebook to the self-describing little-endian binary format."""
    header = _HEADER.pack(CODEBOOK_MAGIC, CODEBOOK_VERSION, cb.dim, cb.count,
                          _METHOD_CODES[cb.method], cb.seed)
    body = cb.columns.astype("<f8").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)


def load_codebook(path: str) -> Codebook:
    """Read a codebook file, re-validating the unit-norm invariant."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise WireFormatError("codebook file truncated")
    magic, version, dim, count, method_code, seed = _HEADER.unpack_from(data)
    if magic != CODEBOOK_MAGIC:
        raise WireFormatError(f"bad magic {magic!r}, expected {CODEBOOK_MAGIC!r}")
    if version != CODEBOOK_VERSION:
        raise WireFormatError(f"unsupported codebook version {version}")
    if method_code not in _CODE_METHODS:
        raise WireFormatError(f"unknown method code {method_code}")
    expected = _HEADER.size + 8 * dim * count
    if len(data) != expected:
        raise WireFormatError(f"codebook file has {len(data)} bytes, expected {expected}")
    columns = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(dim, count)
    try:
        return Codebook.from_columns(columns, seed=seed, method=_CODE_METHODS[method_code])
    except InvalidShape as exc:
        raise WireFormatError(f"codebook file violates invariants: {exc}") from exc
