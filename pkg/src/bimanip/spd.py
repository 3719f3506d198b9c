"""Affine-invariant geometry on symmetric positive definite matrices.

Points are SPD matrices and tangent vectors are symmetric matrices
attached to a base point. All geometry (log/exp maps, parallel
transport, geodesics, distances, Frechet means) uses the
affine-invariant metric

    <U, V>_S = tr(S^-1 U S^-1 V),

whose geodesic between A and B is A^{1/2} (A^{-1/2} B A^{-1/2})^s A^{1/2}.
Matrix functions go through symmetric eigendecomposition, and every
returned matrix is symmetrized to kill floating point drift.

The alignment objective ``spd_objective`` is the squared ambient
Frobenius norm of the log map, which coincides with squared geodesic
distance only at an identity base point; ``distance`` is the intrinsic
metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ValidationError

# Relative symmetry tolerance for type invariants.
_SYM_RTOL = 1e-10
# Eigenvalues below this fraction of the largest are an error in log_map.
_EIG_RTOL = 1e-12


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _check_square(entries: np.ndarray, name: str) -> np.ndarray:
    entries = np.asarray(entries, dtype=float)
    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        raise ValidationError(f"{name} must be a square matrix, "
                              f"got shape {entries.shape}")
    if not np.all(np.isfinite(entries)):
        raise ValidationError(f"{name} has non-finite entries")
    return entries


def _check_symmetric(entries: np.ndarray, name: str) -> None:
    scale = max(1.0, float(np.max(np.abs(entries))))
    if float(np.max(np.abs(entries - entries.T))) > _SYM_RTOL * scale:
        raise ValidationError(f"{name} is not symmetric within "
                              f"relative tolerance {_SYM_RTOL}")


@dataclass(frozen=True)
class SpdMatrix:
    """A symmetric positive definite matrix (validated on construction)."""

    dim: int
    entries: np.ndarray

    def __post_init__(self):
        entries = _check_square(self.entries, "SpdMatrix.entries")
        if self.dim != entries.shape[0] or self.dim < 1:
            raise ValidationError(
                f"dim={self.dim} does not match entries shape {entries.shape}")
        _check_symmetric(entries, "SpdMatrix.entries")
        entries = _symmetrize(entries)
        w = np.linalg.eigvalsh(entries)
        if w[0] <= 0.0:
            raise ValidationError(
                f"matrix is not positive definite (min eigenvalue {w[0]:g})")
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_entries(cls, entries) -> "SpdMatrix":
        entries = _check_square(entries, "SpdMatrix.entries")
        return cls(dim=entries.shape[0], entries=entries)

    @classmethod
    def identity(cls, dim: int) -> "SpdMatrix":
        return cls(dim=dim, entries=np.eye(dim))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "entries": [float(x) for x in self.entries.ravel()]}

    @classmethod
    def from_dict(cls, payload: dict) -> "SpdMatrix":
        try:
            dim = int(payload["dim"])
            flat = np.asarray(payload["entries"], dtype=float)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed SpdMatrix payload: {exc}") from exc
        if flat.shape != (dim * dim,):
            raise ValidationError(
                f"SpdMatrix payload has {flat.size} entries, expected {dim * dim}")
        return cls(dim=dim, entries=flat.reshape(dim, dim))


@dataclass(frozen=True)
class TangentMatrix:
    """A symmetric tangent matrix attached to an SPD base point."""

    dim: int
    entries: np.ndarray
    base: SpdMatrix

    def __post_init__(self):
        entries = _check_square(self.entries, "TangentMatrix.entries")
        if self.dim != entries.shape[0]:
            raise ValidationError(
                f"dim={self.dim} does not match entries shape {entries.shape}")
        if self.base.dim != self.dim:
            raise ValidationError(
                f"tangent dim {self.dim} does not match base dim {self.base.dim}")
        _check_symmetric(entries, "TangentMatrix.entries")
        entries = _symmetrize(entries)
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)


def _require_same_dim(a: SpdMatrix, b: SpdMatrix) -> None:
    if a.dim != b.dim:
        raise ValidationError(f"dimension mismatch: {a.dim} vs {b.dim}")


def _spd_factor(arr: np.ndarray):
    """Eigendecomposition of an SPD array, rejecting near-singular input."""
    w, v = np.linalg.eigh(arr)
    if w[0] <= _EIG_RTOL * w[-1] or w[0] <= 0.0:
        raise ValidationError(
            f"matrix is numerically singular for the log map "
            f"(eigenvalues in [{w[0]:g}, {w[-1]:g}])")
    return w, v


def _log_map_arr(base: np.ndarray, target: np.ndarray) -> np.ndarray:
    w, v = _spd_factor(base)
    s = np.sqrt(w)
    half = (v * s) @ v.T
    inv_half = (v / s) @ v.T
    inner = _symmetrize(inv_half @ target @ inv_half)
    wi, vi = _spd_factor(inner)
    logm = (vi * np.log(wi)) @ vi.T
    return _symmetrize(half @ logm @ half)


def _exp_map_arr(base: np.ndarray, tangent: np.ndarray) -> np.ndarray:
    w, v = _spd_factor(base)
    s = np.sqrt(w)
    half = (v * s) @ v.T
    inv_half = (v / s) @ v.T
    inner = _symmetrize(inv_half @ tangent @ inv_half)
    wi, vi = np.linalg.eigh(inner)
    expm = (vi * np.exp(wi)) @ vi.T
    return _symmetrize(half @ expm @ half)


def _transport_arr(src: np.ndarray, dst: np.ndarray, tan: np.ndarray) -> np.ndarray:
    # E = dst^{1/2} (dst^{-1/2} src dst^{-1/2})^{-1/2} dst^{-1/2} is the
    # principal square root of dst @ src^{-1}, using only symmetric roots.
    w, v = _spd_factor(dst)
    s = np.sqrt(w)
    half = (v * s) @ v.T
    inv_half = (v / s) @ v.T
    inner = _symmetrize(inv_half @ src @ inv_half)
    wi, vi = _spd_factor(inner)
    inner_inv_sqrt = (vi / np.sqrt(wi)) @ vi.T
    e = half @ inner_inv_sqrt @ inv_half
    return _symmetrize(e @ tan @ e.T)


def log_map(base: SpdMatrix, target: SpdMatrix) -> TangentMatrix:
    """Log map of ``target`` at ``base``:
    base^{1/2} logm(base^{-1/2} target base^{-1/2}) base^{1/2}."""
    _require_same_dim(base, target)
    return TangentMatrix(dim=base.dim,
                         entries=_log_map_arr(base.entries, target.entries),
                         base=base)


def exp_map(base: SpdMatrix, tangent: TangentMatrix) -> SpdMatrix:
    """Exponential map, the inverse of :func:`log_map`."""
    if not np.array_equal(tangent.base.entries, base.entries):
        raise ValidationError("tangent is not attached to the given base point")
    return SpdMatrix(dim=base.dim,
                     entries=_exp_map_arr(base.entries, tangent.entries))


def parallel_transport(source: SpdMatrix, dest: SpdMatrix,
                       tangent: TangentMatrix) -> TangentMatrix:
    """Transport ``tangent`` from T_source to T_dest along the geodesic.

    Uses Gamma(V) = A V A^T with A = (dest source^-1)^{1/2}; the
    affine-invariant inner product of transported tangents is preserved.
    """
    _require_same_dim(source, dest)
    if not np.array_equal(tangent.base.entries, source.entries):
        raise ValidationError("tangent is not attached to the source point")
    return TangentMatrix(
        dim=dest.dim,
        entries=_transport_arr(source.entries, dest.entries, tangent.entries),
        base=dest)


def tangent_inner(u: TangentMatrix, v: TangentMatrix) -> float:
    """Affine-invariant inner product <U, V>_S = tr(S^-1 U S^-1 V)."""
    if not np.array_equal(u.base.entries, v.base.entries):
        raise ValidationError("tangents live at different base points")
    s_inv_u = np.linalg.solve(u.base.entries, u.entries)
    s_inv_v = np.linalg.solve(u.base.entries, v.entries)
    return float(np.trace(s_inv_u @ s_inv_v))


def distance(a: SpdMatrix, b: SpdMatrix) -> float:
    """Geodesic distance ||logm(a^{-1/2} b a^{-1/2})||_F."""
    _require_same_dim(a, b)
    w = scipy.linalg.eigh(b.entries, a.entries, eigvals_only=True)
    if w[0] <= 0.0:
        raise ValidationError("inputs are not a positive definite pencil")
    return float(np.sqrt(np.sum(np.log(w) ** 2)))


def geodesic(a: SpdMatrix, b: SpdMatrix, s: float) -> SpdMatrix:
    """Point at parameter ``s`` on the geodesic from ``a`` to ``b``."""
    _require_same_dim(a, b)
    if not 0.0 <= s <= 1.0:
        raise ValidationError(f"geodesic parameter must be in [0, 1], got {s}")
    w, v = _spd_factor(a.entries)
    sq = np.sqrt(w)
    half = (v * sq) @ v.T
    inv_half = (v / sq) @ v.T
    inner = _symmetrize(inv_half @ b.entries @ inv_half)
    wi, vi = _spd_factor(inner)
    powm = (vi * wi ** s) @ vi.T
    return SpdMatrix(dim=a.dim, entries=_symmetrize(half @ powm @ half))


def frechet_mean(points: list[SpdMatrix], weights=None) -> SpdMatrix:
    """Weighted Karcher mean by fixed-point iteration.

    Iterates mean <- Exp_mean(sum_i w_i Log_mean(p_i)) with unit step
    until the tangent mean has Frobenius norm below 1e-9 (at most 100
    iterations). Weights must be non-negative and sum to 1 within 1e-12.
    """
    if not points:
        raise ValidationError("frechet_mean needs at least one point")
    dim = points[0].dim
    for p in points[1:]:
        _require_same_dim(points[0], p)
    n = len(points)
    if weights is None:
        weights = np.full(n, 1.0 / n)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (n,):
            raise ValidationError(
                f"got {weights.size} weights for {n} points")
        if np.any(weights < -1e-15):
            raise ValidationError("weights must be non-negative")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ValidationError(
                f"weights must sum to 1 within 1e-12, got {weights.sum()!r}")

    arrs = [p.entries for p in points]
    mean = _symmetrize(sum(w * a for w, a in zip(weights, arrs)))
    for _ in range(100):
        step = np.zeros((dim, dim))
        for w, a in zip(weights, arrs):
            if w != 0.0:
                step += w * _log_map_arr(mean, a)
        if float(np.linalg.norm(step)) < 1e-9:
            break
        mean = _exp_map_arr(mean, step)
    return SpdMatrix(dim=dim, entries=mean)


def spd_objective(current: SpdMatrix, target: SpdMatrix) -> float:
    """Alignment objective: squared Frobenius norm of Log_current(target).

    Zero iff ``current == target``. Equals squared geodesic distance only
    when the base point is the identity.
    """
    _require_same_dim(current, target)
    log = _log_map_arr(current.entries, target.entries)
    return float(np.sum(log * log))


def nearest_spd(m, floor: float) -> SpdMatrix:
    """Project a symmetric matrix to SPD by clamping eigenvalues at ``floor``."""
    m = _check_square(m, "nearest_spd input")
    if floor <= 0.0:
        raise ValidationError(f"eigenvalue floor must be positive, got {floor}")
    sym = _symmetrize(m)
    w, v = np.linalg.eigh(sym)
    w = np.maximum(w, floor)
    return SpdMatrix(dim=sym.shape[0], entries=_symmetrize((v * w) @ v.T))


def sym_to_vec(m: np.ndarray) -> np.ndarray:
    """Mandel vectorization of a symmetric matrix.

    Diagonal entries first, then upper off-diagonals (row-major) scaled
    by sqrt(2), so the Euclidean dot product of two vectors equals the
    Frobenius inner product of the matrices.
    """
    m = np.asarray(m, dtype=float)
    d = m.shape[0]
    parts = [np.diag(m)]
    off = [m[i, j] * np.sqrt(2.0) for i in range(d) for j in range(i + 1, d)]
    return np.concatenate([parts[0], np.asarray(off)]) if off else parts[0].copy()


def vec_to_sym(vec: np.ndarray, dim: int) -> np.ndarray:
    """Inverse of :func:`sym_to_vec`."""
    vec = np.asarray(vec, dtype=float)
    expected = dim * (dim + 1) // 2
    if vec.shape != (expected,):
        raise ValidationError(
            f"expected vector of length {expected} for dim {dim}, "
            f"got shape {vec.shape}")
    m = np.diag(vec[:dim]).astype(float)
    k = dim
    for i in range(dim):
        for j in range(i + 1, dim):
            m[i, j] = m[j, i] = vec[k] / np.sqrt(2.0)
            k += 1
    return m
