"""Flat parameter vectors and deterministic, hierarchical random streams.

A parameter vector is a plain 1-D float64 numpy array. Every function here
rejects NaN/Inf at its boundary instead of propagating it: with scaling
factors around 1e6 in play, silent overflow is the easiest bug to miss.
"""

from __future__ import annotations

import numpy as np

# Type aliases used throughout the package.
ParamVector = np.ndarray
RngStream = np.random.Generator


class NonFiniteError(ValueError):
    """A vector crossed a module boundary carrying a NaN or Inf entry."""


def check_finite(v: np.ndarray, context: str = "") -> np.ndarray:
    """Raise NonFiniteError naming the first bad index if v is not all-finite."""
    if not np.all(np.isfinite(v)):
        idx = int(np.flatnonzero(~np.isfinite(np.ravel(v)))[0])
        where = f" in {context}" if context else ""
        raise NonFiniteError(f"non-finite entry at flat index {idx}{where}")
    return v


def as_vector(values) -> ParamVector:
    """Coerce to a finite 1-D float64 array."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    check_finite(v, "as_vector")
    return v


def linear_combine(ca: float, a: ParamVector, cb: float, b: ParamVector) -> ParamVector:
    """Return ca*a + cb*b componentwise."""
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = ca * a + cb * b
    check_finite(out, "linear_combine result")
    return out


def l2_norm(a: ParamVector) -> float:
    """Euclidean norm, computed with rescaling so large entries do not overflow."""
    check_finite(a, "l2_norm input")
    m = float(np.max(np.abs(a))) if a.size else 0.0
    if m == 0.0:
        return 0.0
    scaled = a / m
    return m * float(np.sqrt(np.dot(scaled, scaled)))


def derive_stream(master_seed: int, round_idx: int, actor_id: int) -> RngStream:
    """Deterministic stream keyed by (master seed, round, actor).

    Identical lineage gives an identical sequence; any differing component
    gives an independent stream. Round -1 is reserved for pre-training setup
    (server init, data generation, partitioning).
    """
    if master_seed < 0 or round_idx < -1 or actor_id < 0:
        raise ValueError("lineage components out of range")
    seq = np.random.SeedSequence([master_seed, round_idx + 1, actor_id])
    return np.random.default_rng(seq)


def gaussian_vector(stream: RngStream, dim: int) -> ParamVector:
    """dim independent standard-normal draws from the stream."""
    if dim < 0:
        raise ValueError("dim must be >= 0")
    return stream.standard_normal(dim)
