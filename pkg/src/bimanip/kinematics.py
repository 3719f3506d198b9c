"""Planar revolute-chain kinematics and dual-arm composite Jacobians.

A chain is a list of link lengths anchored at a base pose; joints are
revolute, so the end-effector pose map and its geometric Jacobian have
closed forms. On top of the single-arm pieces this module builds the
dual-arm operators used by the manipulability layer:

  * extended Jacobian diag(J_l, J_r) for object-level motion,
  * grasp matrix G = [G_l, G_r] and its Moore-Penrose pseudoinverse,
  * relative Jacobian mapping stacked joint rates to the twist of the
    right end-effector expressed in the left end-effector frame.

Everything is planar (task dimensions x, y, yaw). Singular Jacobians
are legal outputs here; the manipulability layer applies its own
eigenvalue clamp.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def _check_vec(v, length: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (length,):
        raise ValidationError(f"{name} must have shape ({length},), "
                              f"got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} has non-finite entries")
    return v


def rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


class CoordinationMode(Enum):
    SYMMETRIC = "symmetric"
    ASYMMETRIC = "asymmetric"


@dataclass(frozen=True)
class ChainSpec:
    """A planar serial chain of revolute joints."""

    link_lengths: np.ndarray
    base_position: np.ndarray
    base_orientation: float

    def __post_init__(self):
        lengths = np.asarray(self.link_lengths, dtype=float)
        if lengths.ndim != 1 or lengths.size < 2:
            raise ValidationError("a chain needs at least 2 links")
        if not np.all(np.isfinite(lengths)) or np.any(lengths <= 0.0):
            raise ValidationError("link lengths must be positive and finite")
        base = _check_vec(self.base_position, 2, "base_position")
        if not np.isfinite(self.base_orientation):
            raise ValidationError("base_orientation must be finite")
        object.__setattr__(self, "link_lengths", _freeze(lengths))
        object.__setattr__(self, "base_position", _freeze(base))
        object.__setattr__(self, "base_orientation", float(self.base_orientation))

    @property
    def dof(self) -> int:
        return int(self.link_lengths.size)

    def to_dict(self) -> dict:
        return {"link_lengths": [float(x) for x in self.link_lengths],
                "base_position": [float(x) for x in self.base_position],
                "base_orientation": self.base_orientation}

    @classmethod
    def from_dict(cls, payload: dict) -> "ChainSpec":
        try:
            return cls(link_lengths=np.asarray(payload["link_lengths"], dtype=float),
                       base_position=np.asarray(payload["base_position"], dtype=float),
                       base_orientation=float(payload["base_orientation"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed ChainSpec payload: {exc}") from exc


@dataclass(frozen=True)
class DualArmSystem:
    """Two chains plus the task coordination mode they operate under."""

    left: ChainSpec
    right: ChainSpec
    coordination_mode: CoordinationMode = CoordinationMode.SYMMETRIC

    def __post_init__(self):
        if np.allclose(self.left.base_position, self.right.base_position,
                       rtol=0.0, atol=1e-12):
            raise ValidationError("left and right base positions must differ")
        if not isinstance(self.coordination_mode, CoordinationMode):
            object.__setattr__(self, "coordination_mode",
                               CoordinationMode(self.coordination_mode))

    def to_dict(self) -> dict:
        return {"left": self.left.to_dict(), "right": self.right.to_dict(),
                "coordination_mode": self.coordination_mode.value}

    @classmethod
    def from_dict(cls, payload: dict) -> "DualArmSystem":
        try:
            return cls(left=ChainSpec.from_dict(payload["left"]),
                       right=ChainSpec.from_dict(payload["right"]),
                       coordination_mode=CoordinationMode(payload["coordination_mode"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed DualArmSystem payload: {exc}") from exc


@dataclass(frozen=True)
class JointConfig:
    """Joint angles of both arms."""

    q_left: np.ndarray
    q_right: np.ndarray

    def __post_init__(self):
        for name in ("q_left", "q_right"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim != 1 or not np.all(np.isfinite(v)):
                raise ValidationError(f"{name} must be a finite 1-D vector")
            object.__setattr__(self, name, _freeze(v))

    def validate_against(self, sys: DualArmSystem) -> None:
        if self.q_left.size != sys.left.dof:
            raise ValidationError(f"q_left has {self.q_left.size} angles, "
                                  f"left chain has {sys.left.dof} joints")
        if self.q_right.size != sys.right.dof:
            raise ValidationError(f"q_right has {self.q_right.size} angles, "
                                  f"right chain has {sys.right.dof} joints")

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.q_left, self.q_right])


@dataclass(frozen=True)
class GraspSpec:
    """Object pose plus per-arm contact offsets in the object frame."""

    object_position: np.ndarray
    left_contact_offset: np.ndarray
    right_contact_offset: np.ndarray

    def __post_init__(self):
        for name in ("object_position", "left_contact_offset",
                     "right_contact_offset"):
            object.__setattr__(self, name,
                               _freeze(_check_vec(getattr(self, name), 2, name)))

    def to_dict(self) -> dict:
        return {name: [float(x) for x in getattr(self, name)]
                for name in ("object_position", "left_contact_offset",
                             "right_contact_offset")}

    @classmethod
    def from_dict(cls, payload: dict) -> "GraspSpec":
        try:
            return cls(
                object_position=np.asarray(payload["object_position"], dtype=float),
                left_contact_offset=np.asarray(payload["left_contact_offset"], dtype=float),
                right_contact_offset=np.asarray(payload["right_contact_offset"], dtype=float))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed GraspSpec payload: {exc}") from exc


def _cumulative_angles(chain: ChainSpec, q: np.ndarray) -> np.ndarray:
    return chain.base_orientation + np.cumsum(q)


def joint_pivots(chain: ChainSpec, q) -> np.ndarray:
    """World positions of the n joint pivots (row i anchors link i)."""
    q = _check_vec(q, chain.dof, "q")
    angles = _cumulative_angles(chain, q)
    steps = chain.link_lengths[:, None] * np.column_stack(
        [np.cos(angles), np.sin(angles)])
    pivots = np.empty((chain.dof, 2))
    pivots[0] = chain.base_position
    pivots[1:] = chain.base_position + np.cumsum(steps[:-1], axis=0)
    return pivots


def forward_kinematics(chain: ChainSpec, q) -> tuple[np.ndarray, float]:
    """End-effector pose of a chain: (position 2-vector, orientation)."""
    q = _check_vec(q, chain.dof, "q")
    angles = _cumulative_angles(chain, q)
    position = chain.base_position + np.array(
        [chain.link_lengths @ np.cos(angles), chain.link_lengths @ np.sin(angles)])
    return position, float(angles[-1])


def jacobian(chain: ChainSpec, q) -> np.ndarray:
    """Geometric Jacobian (3 x n): rows are x-rate, y-rate, yaw-rate."""
    q = _check_vec(q, chain.dof, "q")
    pivots = joint_pivots(chain, q)
    p_ee, _ = forward_kinematics(chain, q)
    rel = p_ee - pivots
    jac = np.empty((3, chain.dof))
    jac[0] = -rel[:, 1]
    jac[1] = rel[:, 0]
    jac[2] = 1.0
    return jac


def skew(p) -> np.ndarray:
    """Cross-product operator.

    For a 3-vector returns the usual skew-symmetric matrix with
    skew(p) @ v == cross(p, v); for a scalar returns the planar
    rotation generator [[0, -w], [w, 0]].
    """
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValidationError("skew input must be finite")
    if p.ndim == 0:
        w = float(p)
        return np.array([[0.0, -w], [w, 0.0]])
    if p.shape == (3,):
        return np.array([[0.0, -p[2], p[1]],
                         [p[2], 0.0, -p[0]],
                         [-p[1], p[0], 0.0]])
    raise ValidationError(f"skew expects a scalar or 3-vector, got shape {p.shape}")


def extended_jacobian(sys: DualArmSystem, q: JointConfig) -> np.ndarray:
    """Block-diagonal stack diag(J_l, J_r), shape (6, n_l + n_r)."""
    q.validate_against(sys)
    j_l = jacobian(sys.left, q.q_left)
    j_r = jacobian(sys.right, q.q_right)
    out = np.zeros((6, sys.left.dof + sys.right.dof))
    out[:3, :sys.left.dof] = j_l
    out[3:, sys.left.dof:] = j_r
    return out


def _contact_map(r: np.ndarray) -> np.ndarray:
    return np.array([[1.0, 0.0, -r[1]],
                     [0.0, 1.0, r[0]],
                     [0.0, 0.0, 1.0]])


def grasp_matrix(grasp: GraspSpec) -> np.ndarray:
    """Grasp matrix G = [G_l, G_r], shape (3, 6).

    Each block G_i is the rigid-contact twist map built from the
    contact offset r_i relative to the object frame origin.
    """
    return np.hstack([_contact_map(grasp.left_contact_offset),
                      _contact_map(grasp.right_contact_offset)])


def grasp_pseudoinverse(g: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a full-row-rank grasp matrix."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 2:
        raise ValidationError("grasp matrix must be 2-D")
    sv = np.linalg.svd(g, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise ValidationError("grasp matrix is rank deficient")
    return np.linalg.pinv(g)


def relative_jacobian(sys: DualArmSystem, q: JointConfig) -> np.ndarray:
    """Relative Jacobian [-Psi Omega J_l | Omega J_r], shape (3, n_l + n_r).

    Maps stacked joint rates to the twist of the right end-effector
    expressed in the left end-effector frame: the time derivative of
    (R_l^T (p_r - p_l), theta_r - theta_l). Psi carries the moment arm
    of the frame offset p = R_l^T (p_r - p_l); Omega rotates world
    twists into the left end-effector frame.
    """
    q.validate_against(sys)
    p_l, th_l = forward_kinematics(sys.left, q.q_left)
    p_r, _ = forward_kinematics(sys.right, q.q_right)
    r_l_t = rot2(th_l).T
    p = r_l_t @ (p_r - p_l)

    omega = np.zeros((3, 3))
    omega[:2, :2] = r_l_t
    omega[2, 2] = 1.0

    psi = np.eye(3)
    psi[:2, 2] = skew(1.0) @ p

    j_l = jacobian(sys.left, q.q_left)
    j_r = jacobian(sys.right, q.q_right)
    return np.hstack([-psi @ omega @ j_l, omega @ j_r])


def relative_pose(sys: DualArmSystem, q: JointConfig) -> np.ndarray:
    """Pose of the right end-effector in the left end-effector frame."""
    q.validate_against(sys)
    p_l, th_l = forward_kinematics(sys.left, q.q_left)
    p_r, th_r = forward_kinematics(sys.right, q.q_right)
    rel = rot2(th_l).T @ (p_r - p_l)
    return np.array([rel[0], rel[1], th_r - th_l])
