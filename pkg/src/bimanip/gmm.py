"""Gaussian mixture modeling of time-indexed SPD profiles.

Data points are (time, SPD matrix) pairs. The mixture is fit jointly
over a D-dimensional tangent coordinate (time stacked on the Mandel
vectorization of the SPD log-map residual, D = 1 + d(d+1)/2), with EM
whose E-step runs in the log domain and whose M-step recomputes each
component mean as a responsibility-weighted Frechet mean. Conditioning
on time (regression) produces an SPD mean via a short fixed-point
Frechet combination and a tangent-space covariance assembled after
parallel-transporting component blocks to the conditioned mean.

A Euclidean twin with the same API treats the matrices as flat vectors
throughout; its conditioned mean can leave the SPD cone and is clamped,
with clamp events counted so callers can report them.

Batched helpers below mirror the scalar routines in ``spd`` exactly
(same eigendecomposition route), stacked over the data axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .manipulability import clamp_floor
from .spd import (SpdMatrix, TangentMatrix, nearest_spd, parallel_transport,
                  spd_objective, sym_to_vec, vec_to_sym)

# Diagonal loading added to every M-step covariance: a relative term per
# the trace scale plus a tiny absolute term so constant data stays PD.
COV_FLOOR_REL = 1e-8
COV_FLOOR_ABS = 1e-12

_KMEANS_RESTARTS = 10
_KMEANS_MAX_ITER = 30
_GMR_MEAN_ITERS = 3


@dataclass(frozen=True)
class ManifoldPoint:
    """One observation: normalized task phase plus an SPD sample."""

    time: float
    bme: SpdMatrix

    def __post_init__(self):
        if not 0.0 <= self.time <= 1.0:
            raise ValidationError(f"time must be in [0, 1], got {self.time}")


@dataclass(frozen=True)
class GmrOutput:
    """Conditional mean and SPD-block tangent covariance at one time."""

    mean: SpdMatrix
    covariance: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        dd = self.mean.dim * (self.mean.dim + 1) // 2
        if cov.shape != (dd, dd):
            raise ValidationError(
                f"covariance must be ({dd}, {dd}), got {cov.shape}")
        if float(np.max(np.abs(cov - cov.T))) > 1e-9 * max(1.0, float(np.max(np.abs(cov)))):
            raise ValidationError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        w = np.linalg.eigvalsh(cov)
        if w[0] < -1e-9 * max(1.0, w[-1]):
            raise ValidationError(f"covariance not PSD (min eigenvalue {w[0]:g})")
        cov.flags.writeable = False
        object.__setattr__(self, "covariance", cov)


@dataclass(frozen=True)
class SpdGmmModel:
    """A fitted mixture over joint (time, SPD) observations.

    ``loglik_history`` records the per-iteration log-likelihood of the
    fit that produced the model; it is diagnostic only and round-trips
    through JSON as absent.
    """

    priors: np.ndarray
    mean_times: np.ndarray
    mean_spds: tuple
    covariances: np.ndarray
    metric: str
    seed: int
    loglik_history: tuple = ()

    def __post_init__(self):
        priors = np.asarray(self.priors, dtype=float)
        k = priors.size
        if k < 1 or np.any(priors < 0.0):
            raise ValidationError("priors must be non-negative and non-empty")
        if abs(float(priors.sum()) - 1.0) > 1e-12:
            raise ValidationError("priors must sum to 1 within 1e-12")
        mean_times = np.asarray(self.mean_times, dtype=float)
        if mean_times.shape != (k,):
            raise ValidationError("one time mean per component required")
        if len(self.mean_spds) != k:
            raise ValidationError("one SPD mean per component required")
        d = self.mean_spds[0].dim
        dim = 1 + d * (d + 1) // 2
        covs = np.asarray(self.covariances, dtype=float)
        if covs.shape != (k, dim, dim):
            raise ValidationError(
                f"covariances must have shape ({k}, {dim}, {dim}), got {covs.shape}")
        for c in covs:
            if np.linalg.eigvalsh(0.5 * (c + c.T))[0] <= 0.0:
                raise ValidationError("each covariance must be positive definite")
        if self.metric not in ("affine_invariant", "euclidean"):
            raise ValidationError(f"unknown metric {self.metric!r}")
        for name, arr in (("priors", priors), ("mean_times", mean_times),
                          ("covariances", covs)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "mean_spds", tuple(self.mean_spds))
        object.__setattr__(self, "loglik_history",
                           tuple(float(x) for x in self.loglik_history))

    @property
    def n_components(self) -> int:
        return int(self.priors.size)

    @property
    def dim(self) -> int:
        return self.mean_spds[0].dim

    def to_dict(self) -> dict:
        return {"K": self.n_components,
                "priors": [float(p) for p in self.priors],
                "means": [{"t": float(t), "spd": m.to_dict()}
                          for t, m in zip(self.mean_times, self.mean_spds)],
                "covariances": [[[float(x) for x in row] for row in cov]
                                for cov in self.covariances],
                "metric": self.metric,
                "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, payload: dict) -> "SpdGmmModel":
        try:
            means = payload["means"]
            return cls(priors=np.asarray(payload["priors"], dtype=float),
                       mean_times=np.asarray([m["t"] for m in means], dtype=float),
                       mean_spds=tuple(SpdMatrix.from_dict(m["spd"]) for m in means),
                       covariances=np.asarray(payload["covariances"], dtype=float),
                       metric=str(payload["metric"]),
                       seed=int(payload["seed"]))
        except (KeyError, TypeError, IndexError) as exc:
            raise ValidationError(f"malformed model payload: {exc}") from exc


# ---------------------------------------------------------------------------
# batched manifold primitives (stacked twins of the scalar routines in spd)

def _sym_roots(base: np.ndarray):
    w, v = np.linalg.eigh(base)
    if w[0] <= 0.0:
        raise NumericalError("batched base matrix lost positive definiteness")
    s = np.sqrt(w)
    return (v * s) @ v.T, (v / s) @ v.T


def _batch_apply(vs: np.ndarray, fw: np.ndarray) -> np.ndarray:
    # rebuild V f(W) V^T for stacked eigendecompositions
    return np.einsum("nij,nj,nkj->nik", vs, fw, vs)


def _batch_log_at(base: np.ndarray, mats: np.ndarray) -> np.ndarray:
    half, inv_half = _sym_roots(base)
    inner = inv_half @ mats @ inv_half
    inner = 0.5 * (inner + np.swapaxes(inner, -1, -2))
    w, v = np.linalg.eigh(inner)
    if np.any(w <= 0.0):
        raise NumericalError("log map hit a non-positive pencil eigenvalue")
    out = half @ _batch_apply(v, np.log(w)) @ half
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _batch_dist_from(base: np.ndarray, mats: np.ndarray) -> np.ndarray:
    _, inv_half = _sym_roots(base)
    inner = inv_half @ mats @ inv_half
    inner = 0.5 * (inner + np.swapaxes(inner, -1, -2))
    w = np.linalg.eigvalsh(inner)
    if np.any(w <= 0.0):
        raise NumericalError("distance hit a non-positive pencil eigenvalue")
    return np.sqrt(np.sum(np.log(w) ** 2, axis=-1))


def _exp_at(base: np.ndarray, tangent: np.ndarray) -> np.ndarray:
    half, inv_half = _sym_roots(base)
    inner = inv_half @ tangent @ inv_half
    inner = 0.5 * (inner + inner.T)
    w, v = np.linalg.eigh(inner)
    out = half @ ((v * np.exp(w)) @ v.T) @ half
    return 0.5 * (out + out.T)


def _batch_frechet(mats: np.ndarray, weights: np.ndarray,
                   max_iter: int = 100, tol: float = 1e-9) -> np.ndarray:
    mean = np.einsum("n,nij->ij", weights, mats)
    mean = 0.5 * (mean + mean.T)
    for _ in range(max_iter):
        step = np.einsum("n,nij->ij", weights, _batch_log_at(mean, mats))
        if float(np.linalg.norm(step)) < tol:
            break
        mean = _exp_at(mean, step)
    return mean


def _batch_vec(mats: np.ndarray) -> np.ndarray:
    d = mats.shape[-1]
    cols = [mats[:, i, i] for i in range(d)]
    cols += [mats[:, i, j] * math.sqrt(2.0)
             for i in range(d) for j in range(i + 1, d)]
    return np.column_stack(cols)


def vectorize_tangent(tangent: TangentMatrix) -> np.ndarray:
    """Mandel coordinates of a tangent matrix (norm-preserving)."""
    return sym_to_vec(tangent.entries)


# ---------------------------------------------------------------------------
# densities

def _log_gauss(z: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log-density of centered residual rows under N(0, cov)."""
    dim = cov.shape[0]
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance is numerically singular") from exc
    sol = np.linalg.solve(chol, z.T)
    maha = np.sum(sol ** 2, axis=0)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * (dim * math.log(2.0 * math.pi) + logdet + maha)


def manifold_gaussian_pdf(point: ManifoldPoint, mean: ManifoldPoint,
                          covariance: np.ndarray) -> float:
    """Joint (time, SPD) Gaussian density in tangent coordinates at the mean."""
    cov = np.asarray(covariance, dtype=float)
    d = mean.bme.dim
    dim = 1 + d * (d + 1) // 2
    if cov.shape != (dim, dim):
        raise ValidationError(f"covariance must be ({dim}, {dim}), got {cov.shape}")
    log = _batch_log_at(mean.bme.entries, point.bme.entries[None])[0]
    z = np.concatenate([[point.time - mean.time], sym_to_vec(log)])
    return float(np.exp(_log_gauss(z[None], cov)[0]))


# ---------------------------------------------------------------------------
# fitting

def _stack_data(data) -> tuple[np.ndarray, np.ndarray]:
    if not data:
        raise ValidationError("need at least one data point")
    d = data[0].bme.dim
    times = np.array([p.time for p in data], dtype=float)
    mats = np.stack([p.bme.entries for p in data])
    if mats.shape[1] != d:
        raise ValidationError("data points have mixed dimensions")
    return times, mats


def _joint_sq_dist(times, mats, c_time, c_mat, euclidean: bool) -> np.ndarray:
    dt2 = (times - c_time) ** 2
    if euclidean:
        diff = mats - c_mat
        return dt2 + np.sum(diff * diff, axis=(1, 2))
    return dt2 + _batch_dist_from(c_mat, mats) ** 2


def _kmeans_init(times, mats, k, rng, euclidean: bool) -> np.ndarray:
    """Geodesic k-means over the joint metric; returns best assignment."""
    n = times.size
    best_assign, best_inertia = None, np.inf
    for _ in range(_KMEANS_RESTARTS):
        idx = rng.choice(n, size=k, replace=False)
        c_times = times[idx].copy()
        c_mats = mats[idx].copy()
        assign = np.full(n, -1)
        for _ in range(_KMEANS_MAX_ITER):
            d2 = np.column_stack([
                _joint_sq_dist(times, mats, c_times[j], c_mats[j], euclidean)
                for j in range(k)])
            new_assign = np.argmin(d2, axis=1)
            taken = []
            for j in range(k):
                if not np.any(new_assign == j):
                    gap = np.min(d2, axis=1)
                    gap[taken] = -np.inf
                    far = int(np.argmax(gap))
                    new_assign[far] = j
                    taken.append(far)
            if np.array_equal(new_assign, assign):
                break
            assign = new_assign
            for j in range(k):
                members = assign == j
                c_times[j] = float(times[members].mean())
                if euclidean:
                    c_mats[j] = mats[members].mean(axis=0)
                else:
                    w = np.full(int(members.sum()), 1.0 / members.sum())
                    c_mats[j] = _batch_frechet(mats[members], w)
        d2 = np.column_stack([
            _joint_sq_dist(times, mats, c_times[j], c_mats[j], euclidean)
            for j in range(k)])
        inertia = float(np.min(d2, axis=1).sum())
        if inertia < best_inertia:
            best_inertia, best_assign = inertia, assign.copy()
    return best_assign


def _floor_cov(cov: np.ndarray) -> np.ndarray:
    dim = cov.shape[0]
    load = COV_FLOOR_REL * float(np.trace(cov)) / dim + COV_FLOOR_ABS
    return cov + load * np.eye(dim)


def _m_step(times, mats, resp, euclidean: bool):
    n, k = resp.shape
    nk = resp.sum(axis=0)
    priors = nk / n
    t_means = (resp * times[:, None]).sum(axis=0) / nk
    means, covs, residuals = [], [], []
    for j in range(k):
        w = resp[:, j] / nk[j]
        if euclidean:
            mean = np.einsum("n,nij->ij", w, mats)
            mean = 0.5 * (mean + mean.T)
            vecs = _batch_vec(mats - mean)
        else:
            mean = _batch_frechet(mats, w)
            vecs = _batch_vec(_batch_log_at(mean, mats))
        z = np.column_stack([times - t_means[j], vecs])
        cov = (resp[:, j][:, None] * z).T @ z / nk[j]
        covs.append(_floor_cov(0.5 * (cov + cov.T)))
        means.append(mean)
        residuals.append(z)
    return priors, t_means, np.stack(means), np.stack(covs)


def _e_step(times, mats, priors, t_means, means, covs, euclidean: bool):
    n = times.size
    k = priors.size
    log_r = np.empty((n, k))
    for j in range(k):
        if euclidean:
            vecs = _batch_vec(mats - means[j])
        else:
            vecs = _batch_vec(_batch_log_at(means[j], mats))
        z = np.column_stack([times - t_means[j], vecs])
        log_r[:, j] = np.log(priors[j]) + _log_gauss(z, covs[j])
    row_max = log_r.max(axis=1, keepdims=True)
    log_norm = row_max + np.log(np.exp(log_r - row_max).sum(axis=1, keepdims=True))
    loglik = float(log_norm.sum())
    return np.exp(log_r - log_norm), loglik


def _reseed_empty(times, mats, resp, t_means, means, euclidean: bool) -> np.ndarray:
    """Point the emptiest component at the worst-covered data point."""
    nk = resp.sum(axis=0)
    for j in np.flatnonzero(nk < 1e-10):
        d2 = np.column_stack([
            _joint_sq_dist(times, mats, t_means[i], means[i], euclidean)
            for i in range(resp.shape[1])])
        far = int(np.argmax(np.min(d2, axis=1)))
        resp[far] = 0.0
        resp[far, j] = 1.0
    return resp


def _fit(data, k: int, seed: int, max_iter: int, tol: float,
         euclidean: bool) -> SpdGmmModel:
    if k < 1:
        raise ValidationError("need at least one component")
    times, mats = _stack_data(data)
    if times.size < k:
        raise ValidationError(f"{k} components need at least {k} data points")
    rng = np.random.default_rng(seed)
    assign = _kmeans_init(times, mats, k, rng, euclidean)
    resp = np.zeros((times.size, k))
    resp[np.arange(times.size), assign] = 1.0

    # The Frechet-mean M-step is a near-maximizer, not an exact one, so a
    # raw loop can dip by ~1e-3 once the covariances turn anisotropic. An
    # ascent guard keeps the advertised monotone trace: a proposed update
    # that lowers the log-likelihood is reverted and the fit stops there.
    params = _m_step(times, mats, resp, euclidean)
    resp, loglik = _e_step(times, mats, *params, euclidean)
    resp = _reseed_empty(times, mats, resp, params[1], params[2], euclidean)
    history = [loglik]
    for _ in range(max_iter - 1):
        new_params = _m_step(times, mats, resp, euclidean)
        new_resp, new_loglik = _e_step(times, mats, *new_params, euclidean)
        if new_loglik < loglik:
            break
        new_resp = _reseed_empty(times, mats, new_resp, new_params[1],
                                 new_params[2], euclidean)
        history.append(new_loglik)
        converged = abs(new_loglik - loglik) < tol
        params, resp, loglik = new_params, new_resp, new_loglik
        if converged:
            break

    priors, t_means, means, covs = params
    return SpdGmmModel(
        priors=priors, mean_times=t_means,
        mean_spds=tuple(SpdMatrix.from_entries(m) for m in means),
        covariances=covs,
        metric="euclidean" if euclidean else "affine_invariant",
        seed=seed, loglik_history=tuple(history))


def em_fit(data, k: int = 5, seed: int = 0, max_iter: int = 100,
           tol: float = 1e-8) -> SpdGmmModel:
    """Fit the manifold mixture by EM (log-domain E-step, Frechet M-step)."""
    return _fit(data, k, seed, max_iter, tol, euclidean=False)


def euclid_gmm_gmr_fit(data, k: int = 5, seed: int = 0, max_iter: int = 100,
                       tol: float = 1e-8) -> SpdGmmModel:
    """Fit the flat-vector baseline mixture with the same EM machinery."""
    return _fit(data, k, seed, max_iter, tol, euclidean=True)


# ---------------------------------------------------------------------------
# conditioning (regression on time)

def _time_weights(model: SpdGmmModel, t: float) -> np.ndarray:
    log_w = np.empty(model.n_components)
    for j in range(model.n_components):
        var = model.covariances[j, 0, 0]
        log_w[j] = (np.log(model.priors[j])
                    - 0.5 * (math.log(2.0 * math.pi * var)
                             + (t - model.mean_times[j]) ** 2 / var))
    log_w -= log_w.max()
    w = np.exp(log_w)
    return w / w.sum()


def _component_conditionals(model: SpdGmmModel, t: float):
    """Per-component conditional tangent mean and covariance at time t."""
    deltas, conds = [], []
    for j in range(model.n_components):
        cov = model.covariances[j]
        s_tt = cov[0, 0]
        s_tb = cov[1:, 0]
        s_bb = cov[1:, 1:]
        deltas.append(s_tb * (t - model.mean_times[j]) / s_tt)
        conds.append(s_bb - np.outer(s_tb, s_tb) / s_tt)
    return deltas, conds


def _transport_matrix(src: SpdMatrix, dst: SpdMatrix) -> np.ndarray:
    """Mandel-coordinate matrix of the parallel transport congruence."""
    d = src.dim
    dd = d * (d + 1) // 2
    cols = np.empty((dd, dd))
    basis = []
    for i in range(d):
        e = np.zeros((d, d))
        e[i, i] = 1.0
        basis.append(e)
    for i in range(d):
        for j in range(i + 1, d):
            e = np.zeros((d, d))
            e[i, j] = e[j, i] = 1.0 / math.sqrt(2.0)
            basis.append(e)
    for idx, e in enumerate(basis):
        moved = parallel_transport(src, dst,
                                   TangentMatrix(dim=d, entries=e, base=src))
        cols[:, idx] = sym_to_vec(moved.entries)
    return cols


def gmr_condition(model: SpdGmmModel, t: float) -> GmrOutput:
    """Condition the manifold mixture on time.

    The mean combines per-component conditional points by a fixed-point
    Frechet update; component covariances are parallel-transported to
    the conditioned mean before blending.
    """
    if model.metric != "affine_invariant":
        raise ValidationError("gmr_condition expects an affine-invariant model")
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"conditioning time must be in [0, 1], got {t}")
    h = _time_weights(model, t)
    deltas, conds = _component_conditionals(model, t)
    d = model.dim
    points = []
    for j in range(model.n_components):
        tangent = vec_to_sym(deltas[j], d)
        points.append(_exp_at(model.mean_spds[j].entries, tangent))
    points = np.stack(points)

    mean = points[int(np.argmax(h))]
    for _ in range(_GMR_MEAN_ITERS):
        step = np.einsum("n,nij->ij", h, _batch_log_at(mean, points))
        mean = _exp_at(mean, step)
    mean_spd = SpdMatrix.from_entries(mean)

    us = _batch_vec(_batch_log_at(mean, points))
    u_bar = h @ us
    dd = d * (d + 1) // 2
    cov = np.zeros((dd, dd))
    for j in range(model.n_components):
        tr = _transport_matrix(model.mean_spds[j], mean_spd)
        cov += h[j] * (tr @ conds[j] @ tr.T + np.outer(us[j], us[j]))
    cov -= np.outer(u_bar, u_bar)
    return GmrOutput(mean=mean_spd, covariance=0.5 * (cov + cov.T))


def euclid_gmr_condition(model: SpdGmmModel, t: float) -> tuple[GmrOutput, int]:
    """Flat-vector conditioning; returns the output and a clamp count.

    The blended mean is assembled entrywise and may leave the SPD cone;
    it is then projected back with the manipulability eigenvalue floor
    and the event is counted (0 or 1 per call).
    """
    if model.metric != "euclidean":
        raise ValidationError("euclid_gmr_condition expects a euclidean model")
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"conditioning time must be in [0, 1], got {t}")
    h = _time_weights(model, t)
    deltas, conds = _component_conditionals(model, t)
    d = model.dim
    dd = d * (d + 1) // 2
    mean_vec = np.zeros(dd)
    for j in range(model.n_components):
        mean_vec += h[j] * (sym_to_vec(model.mean_spds[j].entries) + deltas[j])
    mean_mat = vec_to_sym(mean_vec, d)

    eigvals = np.linalg.eigvalsh(mean_mat)
    floor = clamp_floor(float(eigvals[-1]))
    clamped = int(eigvals[0] < floor)
    mean_spd = nearest_spd(mean_mat, floor=floor)

    us = np.stack([sym_to_vec(model.mean_spds[j].entries) + deltas[j] - mean_vec
                   for j in range(model.n_components)])
    cov = np.zeros((dd, dd))
    for j in range(model.n_components):
        cov += h[j] * (conds[j] + np.outer(us[j], us[j]))
    return GmrOutput(mean=mean_spd, covariance=0.5 * (cov + cov.T)), clamped


def mra(current: SpdMatrix, target: SpdMatrix) -> float:
    """Reproduction accuracy: exp(-objective), 1 iff the inputs match.

    ``current`` is the log-map base (the measured ellipsoid); ``target``
    is the reference being scored against it.  The ambient norm is not
    symmetric in the two roles away from the identity base.
    """
    return float(np.exp(-spd_objective(current, target)))
