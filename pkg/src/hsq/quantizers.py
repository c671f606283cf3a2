"""Hyper-sphere gradient quantization.

A d-dimensional gradient is split into segments of length d' (the last
one zero-padded) and each segment is reduced to a tuple: the index of a
codeword that stands in for the segment's direction, plus a signed
scalar pseudo-norm that carries its magnitude. Two selection rules are
provided:

* unbiased: the codeword is drawn with probability proportional to
  |p_i| where p = pinv @ g, and u = sign(p_i) * ||p||_1. Averaged over
  the draw, u * c equals g exactly.
* greedy: the codeword maximizing |g . c| is chosen deterministically
  and u = g . c, which minimizes the residual ||g - u c|| over the
  codebook but is biased.

Pseudo-norms are further rounded stochastically onto an (s+1)-level grid
spanning [u_min, u_max] of the current gradient, so a segment costs
ceil(log2 m) + ceil(log2 (s+1)) bits on the wire. With s = 0 the exact
pseudo-norm travels as a 32-bit float instead.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .codebook import Codebook
from .errors import DimensionMismatch, EmptyInput, InvalidGradient, Overflow, OutOfRange
from .rng import Stream

# Absolute slack when checking u against [u_min, u_max]; values inside it
# are clamped, values beyond it are errors.
RANGE_SLACK = 1e-12


class Variant(enum.Enum):
    UNBIASED = "unbiased"
    GREEDY = "greedy"


@dataclass
class SegmentCode:
    """One quantized gradient segment.

    ``pseudo_norm`` is the exact signed scalar u produced by codeword
    selection. ``level`` is its grid index after stochastic rounding, or
    None in exact-norm mode (s = 0), where the f32-rounded u itself is
    what the wire carries.
    """

    codeword_index: int
    pseudo_norm: float
    level: int | None


@dataclass
class CompressedGradient:
    """A whole gradient as an ordered list of segment codes.

    u_min/u_max are the extreme pseudo-norms of this gradient, rounded
    outward to f32 (they travel as 32-bit floats), so every segment's u
    stays inside the transmitted interval.
    """

    total_dim: int
    segment_dim: int
    codeword_count: int
    levels: int
    u_min: float
    u_max: float
    segments: list[SegmentCode]

    def num_segments(self) -> int:
        return len(self.segments)


def _check_gradient(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1:
        raise InvalidGradient(f"gradient must be 1-D, got ndim={g.ndim}")
    if not np.all(np.isfinite(g)):
        raise InvalidGradient("gradient contains NaN or Inf")
    return g


def quantize_unbiased(g_segment: np.ndarray, cb: Codebook, rng: Stream) -> tuple[float, int]:
    """Probabilistic codeword selection; unbiased in expectation.

    Consumes exactly one uniform draw from ``rng`` (inverse CDF over the
    selection probabilities), so results are reproducible from the
    stream seed alone.

    Returns:
        (u, codeword_index) with u = sign(p_i) * ||p||_1, or (0.0, 0)
        for the all-zero segment.
    """
    g = _check_gradient(g_segment)
    if g.shape[0] != cb.dim:
        raise DimensionMismatch(f"segment length {g.shape[0]} != codebook dim {cb.dim}")
    if not np.any(g):
        return 0.0, 0
    p = cb.pinv @ g
    abs_p = np.abs(p)
    l1 = float(abs_p.sum())
    cdf = np.cumsum(abs_p / l1)
    i = int(np.searchsorted(cdf, rng.uniform(), side="right"))
    i = min(i, cb.count - 1)  # guard the cumsum's last-entry rounding
    return float(math.copysign(l1, p[i])), i


def quantize_greedy(g_segment: np.ndarray, cb: Codebook) -> tuple[float, int]:
    """Deterministic selection of the max-|correlation| codeword.

    Ties break toward the lowest index. Returns (u, codeword_index) with
    u = g . c, or (0.0, 0) for the all-zero segment.
    """
    g = _check_gradient(g_segment)
    if g.shape[0] != cb.dim:
        raise DimensionMismatch(f"segment length {g.shape[0]} != codebook dim {cb.dim}")
    if not np.any(g):
        return 0.0, 0
    corr = cb.columns.T @ g
    i = int(np.argmax(np.abs(corr)))
    return float(corr[i]), i


def quantize_pseudo_norm(u: float, u_min: float, u_max: float, s: int, rng: Stream) -> int:
    """Stochastically round u onto the s+1 grid points of [u_min, u_max].

    Rounds to one of the two adjacent grid points with probabilities
    chosen so the decoded expectation equals u. Consumes one uniform.

    Raises:
        OutOfRange: u outside [u_min, u_max] by more than the slack.
    """
    if s < 1:
        raise ValueError("grid rounding needs s >= 1; s = 0 transmits exact norms")
    if u_max < u_min:
        raise OutOfRange(f"empty interval: u_min={u_min} > u_max={u_max}")
    if u < u_min - RANGE_SLACK or u > u_max + RANGE_SLACK:
        raise OutOfRange(f"u={u} outside [{u_min}, {u_max}]")
    u = min(max(u, u_min), u_max)
    delta = (u_max - u_min) / s
    if delta == 0.0:
        return 0
    k = min(int((u - u_min) / delta), s - 1)
    p_lower = ((k + 1) * delta + u_min - u) / delta
    return k if rng.uniform() < p_lower else k + 1


def decode_pseudo_norm(level: int, u_min: float, u_max: float, s: int) -> float:
    """Grid value u_min + level * (u_max - u_min) / s."""
    if s < 1:
        raise ValueError("no grid when s = 0")
    return u_min + level * ((u_max - u_min) / s)


def segment_gradient(g: np.ndarray, segment_dim: int) -> np.ndarray:
    """Reshape to ceil(d/d') rows of length d', zero-padding the tail."""
    d = g.shape[0]
    n_seg = -(-d // segment_dim)
    padded = np.zeros(n_seg * segment_dim)
    padded[:d] = g
    return padded.reshape(n_seg, segment_dim)


def _f32_down(x: float) -> float:
    f = float(np.float32(x))
    if f > x:
        f = float(np.nextafter(np.float32(f), np.float32(-np.inf)))
    return f


def _f32_up(x: float) -> float:
    f = float(np.float32(x))
    if f < x:
        f = float(np.nextafter(np.float32(f), np.float32(np.inf)))
    return f


def compress(g: np.ndarray, cb: Codebook, s: int,
             variant: Variant | str = Variant.GREEDY,
             rng: Stream | None = None) -> CompressedGradient:
    """Quantize a full gradient segment by segment.

    u_min/u_max are taken over this gradient's own segment pseudo-norms
    and rounded outward to f32 before the grid is built, so quantization
    happens against exactly the interval the receiver will see. Each
    segment draws from its own substream ``rng.derive(j)``, which makes
    the result independent of segment evaluation order.

    Args:
        g: gradient of any length (the tail segment is zero-padded).
        s: pseudo-norm grid levels; 0 transmits exact (f32) norms.
        rng: required unless the variant is greedy and s == 0.
    """
    variant = Variant(variant)
    g = _check_gradient(g)
    if g.shape[0] < 1:
        raise InvalidGradient("empty gradient")
    if s < 0:
        raise ValueError(f"level count must be >= 0, got {s}")
    if rng is None:
        if variant is Variant.UNBIASED or s >= 1:
            raise ValueError("an rng stream is required for stochastic quantization")
        rng = Stream(0)  # never consumed

    segments = segment_gradient(g, cb.dim)
    streams = [rng.derive(j) for j in range(segments.shape[0])]
    if variant is Variant.UNBIASED:
        picks = [quantize_unbiased(seg, cb, st) for seg, st in zip(segments, streams)]
    else:
        picks = [quantize_greedy(seg, cb) for seg in segments]

    norms = [u for u, _ in picks]
    u_min = _f32_down(min(norms))
    u_max = _f32_up(max(norms))
    if not (math.isfinite(u_min) and math.isfinite(u_max)):
        raise Overflow("pseudo-norms exceed the 32-bit float range of the wire format")

    codes = []
    for (u, idx), st in zip(picks, streams):
        if s >= 1:
            level = quantize_pseudo_norm(u, u_min, u_max, s, st)
            codes.append(SegmentCode(codeword_index=idx, pseudo_norm=u, level=level))
        else:
            codes.append(SegmentCode(codeword_index=idx, pseudo_norm=float(np.float32(u)), level=None))
    return CompressedGradient(total_dim=g.shape[0], segment_dim=cb.dim,
                              codeword_count=cb.count, levels=s,
                              u_min=u_min, u_max=u_max, segments=codes)


def decode(cg: CompressedGradient, cb: Codebook) -> np.ndarray:
    """Reconstruct the gradient: concatenate u~ * c per segment, strip padding."""
    if cg.segment_dim != cb.dim or cg.codeword_count != cb.count:
        raise DimensionMismatch(
            f"compressed gradient carries d'={cg.segment_dim}, m={cg.codeword_count}; "
            f"codebook has d'={cb.dim}, m={cb.count}")
    out = np.empty(len(cg.segments) * cb.dim)
    for j, seg in enumerate(cg.segments):
        if seg.level is not None:
            u = decode_pseudo_norm(seg.level, cg.u_min, cg.u_max, cg.levels)
        else:
            u = seg.pseudo_norm
        out[j * cb.dim:(j + 1) * cb.dim] = u * cb.columns[:, seg.codeword_index]
    return out[:cg.total_dim]


def aggregate(compressed: list[CompressedGradient], cb: Codebook) -> np.ndarray:
    """Coordinator-side mean of the decoded gradients."""
    if not compressed:
        raise EmptyInput("nothing to aggregate")
    first = compressed[0]
    total = decode(first, cb)
    for cg in compressed[1:]:
        if cg.total_dim != first.total_dim:
            raise DimensionMismatch(
                f"cannot aggregate gradients of dims {first.total_dim} and {cg.total_dim}")
        total += decode(cg, cb)
    return total / len(compressed)


def sample_unbiased_codes(g_segment: np.ndarray, cb: Codebook, n: int,
                          rng: Stream) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Monte-Carlo draws of the unbiased selector for one segment.

    Returns (indices, u values) for n independent draws; equivalent to n
    calls of :func:`quantize_unbiased` with fresh uniforms, but fast
    enough for 1e5-sample estimator checks.
    """
    g = _check_gradient(g_segment)
    if not np.any(g):
        return np.zeros(n, dtype=np.int64), np.zeros(n)
    p = cb.pinv @ g
    abs_p = np.abs(p)
    l1 = float(abs_p.sum())
    cdf = np.cumsum(abs_p / l1)
    idx = np.searchsorted(cdf, rng.uniforms(n), side="right")
    np.minimum(idx, cb.count - 1, out=idx)
    return idx, np.copysign(l1, p[idx])
