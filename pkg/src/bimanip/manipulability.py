"""Bimanual manipulability ellipsoids and the task compatibility index.

Two coordination-specific velocity ellipsoids are provided:

  * absolute (symmetric tasks): the object-level ellipsoid obtained by
    projecting the extended Jacobian through the grasp pseudoinverse,
  * relative (asymmetric tasks): the ellipsoid of the relative Jacobian.

Both are reduced to their translational block by a weighting selector
and clamped to SPD, and both carry their force-space dual (the matrix
inverse). The task compatibility index rates how well an ellipsoid
transmits velocity along a required direction, normalized so a unit
vector along the major axis scores exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ValidationError
from .kinematics import (ChainSpec, DualArmSystem, GraspSpec, JointConfig,
                         extended_jacobian, grasp_matrix, grasp_pseudoinverse,
                         jacobian, relative_jacobian)
from .spd import SpdMatrix, nearest_spd

# Eigenvalue clamp: relative floor times the largest eigenvalue, with an
# absolute backstop so an all-zero matrix still clamps to SPD.
CLAMP_REL = 1e-6
CLAMP_ABS = 1e-9


def clamp_floor(lambda_max: float) -> float:
    return max(CLAMP_REL * max(lambda_max, 0.0), CLAMP_ABS)


class BmeMode(Enum):
    BAM = "BAM"
    BRM = "BRM"


@dataclass(frozen=True)
class WeightingMatrix:
    """Row selector (optionally scaled) extracting the translational twist."""

    selector: np.ndarray

    def __post_init__(self):
        sel = np.asarray(self.selector, dtype=float)
        if sel.ndim != 2 or sel.shape[0] > sel.shape[1]:
            raise ValidationError(
                f"selector must be a wide 2-D matrix, got shape {sel.shape}")
        if not np.all(np.isfinite(sel)):
            raise ValidationError("selector has non-finite entries")
        sv = np.linalg.svd(sel, compute_uv=False)
        if sv[-1] <= 1e-12 * sv[0] or sv[0] == 0.0:
            raise ValidationError("selector must have full row rank")
        sel = sel.copy()
        sel.flags.writeable = False
        object.__setattr__(self, "selector", sel)

    @classmethod
    def translational(cls, scale: float = 1.0) -> "WeightingMatrix":
        return cls(selector=scale * np.eye(2, 3))


@dataclass(frozen=True)
class BmeSample:
    """A manipulability ellipsoid pair at one normalized task phase."""

    time: float
    velocity_bme: SpdMatrix
    force_bme: SpdMatrix
    mode: BmeMode
    _skip_checks: bool = field(default=False, repr=False)

    def __post_init__(self):
        if self._skip_checks:
            return
        if not 0.0 <= self.time <= 1.0:
            raise ValidationError(f"time must be in [0, 1], got {self.time}")
        v = self.velocity_bme.entries
        f = self.force_bme.entries
        if v.shape != f.shape:
            raise ValidationError("velocity and force ellipsoids differ in size")
        resid = np.linalg.norm(f @ v - np.eye(v.shape[0]))
        if resid > 1e-8 * max(1.0, np.linalg.norm(v) * np.linalg.norm(f)):
            raise ValidationError(
                f"force ellipsoid is not the inverse of the velocity one "
                f"(residual {resid:g})")

    def to_dict(self) -> dict:
        return {"t": self.time, "mode": self.mode.value,
                "velocity_bme": self.velocity_bme.to_dict(),
                "force_bme": self.force_bme.to_dict()}

    @classmethod
    def from_dict(cls, payload: dict) -> "BmeSample":
        try:
            return cls(time=float(payload["t"]),
                       velocity_bme=SpdMatrix.from_dict(payload["velocity_bme"]),
                       force_bme=SpdMatrix.from_dict(payload["force_bme"]),
                       mode=BmeMode(payload["mode"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed BmeSample payload: {exc}") from exc


def _clamped_pair(raw: np.ndarray) -> tuple[SpdMatrix, SpdMatrix]:
    raw = 0.5 * (raw + raw.T)
    lam_max = float(np.linalg.eigvalsh(raw)[-1])
    vel = nearest_spd(raw, floor=clamp_floor(lam_max))
    inv = np.linalg.inv(vel.entries)
    force = SpdMatrix.from_entries(0.5 * (inv + inv.T))
    return vel, force


def bam(sys: DualArmSystem, q: JointConfig, grasp: GraspSpec,
        weighting: WeightingMatrix, time: float = 0.0) -> BmeSample:
    """Absolute (object-level) manipulability ellipsoid for symmetric tasks.

    Projects the extended Jacobian through the transposed grasp
    pseudoinverse and keeps the translational block selected by
    ``weighting``. The force ellipsoid is the matrix inverse.
    """
    g = grasp_matrix(grasp)
    g_pinv = grasp_pseudoinverse(g)
    j_e = extended_jacobian(sys, q)
    obj = g_pinv.T @ j_e
    sel = weighting.selector @ obj
    vel, force = _clamped_pair(sel @ sel.T)
    return BmeSample(time=time, velocity_bme=vel, force_bme=force,
                     mode=BmeMode.BAM)


def brm(sys: DualArmSystem, q: JointConfig,
        weighting: WeightingMatrix, time: float = 0.0) -> BmeSample:
    """Relative manipulability ellipsoid for asymmetric tasks."""
    sel = weighting.selector @ relative_jacobian(sys, q)
    vel, force = _clamped_pair(sel @ sel.T)
    return BmeSample(time=time, velocity_bme=vel, force_bme=force,
                     mode=BmeMode.BRM)


def single_arm_manipulability(chain: ChainSpec, q,
                              weighting: WeightingMatrix) -> SpdMatrix:
    """Translational velocity manipulability of one chain, SPD after clamp."""
    sel = weighting.selector @ jacobian(chain, q)
    vel, _ = _clamped_pair(sel @ sel.T)
    return vel


def tci(bme: SpdMatrix, task_direction) -> float:
    """Task compatibility index in [0, 1].

    The velocity transmission ratio along u is (u^T B^-1 u)^{-1/2};
    dividing by sqrt(lambda_max) normalizes so the major axis scores 1.
    """
    u = np.asarray(task_direction, dtype=float)
    if u.shape != (bme.dim,):
        raise ValidationError(
            f"direction must have shape ({bme.dim},), got {u.shape}")
    norm = float(np.linalg.norm(u))
    if norm == 0.0:
        raise ValidationError("task direction must be nonzero")
    if abs(norm - 1.0) > 1e-9:
        raise ValidationError(
            f"task direction must be unit norm within 1e-9, got {norm!r}")
    lam_max = float(np.linalg.eigvalsh(bme.entries)[-1])
    quad = float(u @ np.linalg.solve(bme.entries, u))
    alpha = quad ** -0.5
    return min(1.0, alpha / np.sqrt(lam_max))
