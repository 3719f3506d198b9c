"""Planar dual-arm task simulator with a posture-aware scripted expert.

Two desk-scale tasks cover the two coordination regimes: a symmetric
bar lift evaluated through the absolute (object-level) ellipsoid, and
an asymmetric plate wipe evaluated through the relative one.  The
simulator is purely kinematic — actions are absolute joint targets
executed under a per-step velocity bound — and everything downstream
of a seed is bit-reproducible: demonstrations, rollouts, and metric
tables never consult the wall clock.

A rollout's policy is any callable ``sampler(obs, phases, seed)``
returning an action window; adapters are provided for diffusion
checkpoints and for demonstration replay.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import _kernels
from .diffusion import GuidanceConfig, KinematicContext, PolicyCheckpoint
from .diffusion import sample as diffusion_sample
from .errors import NumericalError, ValidationError
from .kinematics import (DualArmSystem, GraspSpec, JointConfig,
                         forward_kinematics, jacobian, relative_pose)
from .manipulability import BmeMode, BmeSample, WeightingMatrix, bam, brm, tci
from .spd import SpdMatrix, geodesic, spd_objective

OBS_FRAME_DIM = 16  # q(6) + ee_l(3) + ee_r(3) + tracked pose(3) + phase
ACTION_DIM = 8  # q(6) + grippers(2)

# scripted-expert solver: a handful of combined tracking/posture
# iterations per step, then pure tracking polish so the second-order
# error introduced by null-space motion is squeezed back out
_DLS_DAMP = 1e-3
_IK_ITERS = 8
_POLISH_ITERS = 3
_POSTURE_STEP_MAX = 0.1
_STEP_TRACK_TOL = 1e-3
_GRAD_FD = 1e-5
# per-demo posture offsets fade in over the first part of the episode:
# demonstrations agree while approaching the object and spread out once
# the hold phase carries the task
_BIAS_FLOOR = 0.35
_BIAS_RAMP_END = 0.45

Sampler = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


class TaskKind(Enum):
    BAR_LIFT = "bar_lift"
    PLATE_WIPE = "plate_wipe"


def _vec2(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (2,) or not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} must be a finite 2-vector")
    v = v.copy()
    v.flags.writeable = False
    return v


@dataclass(frozen=True)
class Scenario:
    """A task instance: arms, path, posture profile, success thresholds.

    ``posture_knots`` are (phase, SPD) pairs recorded from a reference
    expert run; the profile interpolates them along geodesics, so the
    targets handed to guidance and to the expert are reachable by
    construction.  ``guidance_scale`` is the frozen step size for
    guided sampling on this task.
    """

    name: str
    task: TaskKind
    system: DualArmSystem
    task_direction: np.ndarray
    episode_length: int
    q_init: np.ndarray
    path: Mapping[str, np.ndarray]
    posture_knots: tuple
    tracking_tol: float
    min_tci: float
    hold_fraction: float
    demo_noise: float
    trial_jitter: float
    max_joint_step: float
    guidance_scale: float
    grasp: Optional[GraspSpec] = None
    weighting: WeightingMatrix = field(
        default_factory=WeightingMatrix.translational)

    def __post_init__(self):
        u = np.asarray(self.task_direction, dtype=float)
        if u.shape != (2,) or abs(np.linalg.norm(u) - 1.0) > 1e-9:
            raise ValidationError("task_direction must be a unit 2-vector")
        u = u.copy()
        u.flags.writeable = False
        object.__setattr__(self, "task_direction", u)
        q0 = np.asarray(self.q_init, dtype=float)
        dof = self.system.left.dof + self.system.right.dof
        if q0.shape != (dof,):
            raise ValidationError(
                f"q_init must have {dof} angles, got shape {q0.shape}")
        q0 = q0.copy()
        q0.flags.writeable = False
        object.__setattr__(self, "q_init", q0)
        if self.episode_length < 2:
            raise ValidationError("episode_length must be at least 2")
        if self.task is TaskKind.BAR_LIFT:
            if self.grasp is None:
                raise ValidationError("bar_lift requires a grasp spec")
            needed = ("object_start", "object_end")
        else:
            needed = ("left_anchor", "wipe_start", "wipe_end")
        missing = [k for k in needed if k not in self.path]
        if missing:
            raise ValidationError(
                f"path is missing {missing} for task {self.task.value}")
        object.__setattr__(
            self, "path",
            {k: _vec2(self.path[k], f"path[{k}]") for k in needed})
        for fname in ("tracking_tol", "demo_noise", "trial_jitter",
                      "max_joint_step", "guidance_scale"):
            if getattr(self, fname) < 0.0:
                raise ValidationError(f"{fname} must be non-negative")
        if not 0.0 < self.hold_fraction <= 1.0:
            raise ValidationError("hold_fraction must be in (0, 1]")
        if not 0.0 <= self.min_tci <= 1.0:
            raise ValidationError("min_tci must be in [0, 1]")
        knots = tuple((float(ph), m if isinstance(m, SpdMatrix)
                       else SpdMatrix.from_entries(np.asarray(m, dtype=float)))
                      for ph, m in self.posture_knots)
        if len(knots) < 2 or knots[0][0] != 0.0 or knots[-1][0] != 1.0:
            raise ValidationError(
                "posture_knots must span phases 0.0 through 1.0")
        phases = [ph for ph, _ in knots]
        if any(b <= a for a, b in zip(phases, phases[1:])):
            raise ValidationError("posture knot phases must increase")
        object.__setattr__(self, "posture_knots", knots)

    @property
    def mode(self) -> BmeMode:
        return (BmeMode.BAM if self.task is TaskKind.BAR_LIFT
                else BmeMode.BRM)

    @property
    def kernel_mode(self) -> int:
        return (_kernels.MODE_ABSOLUTE if self.task is TaskKind.BAR_LIFT
                else _kernels.MODE_RELATIVE)

    def posture_profile(self) -> Callable[[float], SpdMatrix]:
        """Geodesic interpolation through the stored knots."""
        knots = self.posture_knots

        def profile(phase: float) -> SpdMatrix:
            ph = float(np.clip(phase, 0.0, 1.0))
            for (p0, m0), (p1, m1) in zip(knots, knots[1:]):
                if ph <= p1:
                    return geodesic(m0, m1, (ph - p0) / (p1 - p0))
            return knots[-1][1]

        return profile

    def ee_targets(self, phase: float) -> tuple[np.ndarray, np.ndarray]:
        """Desired end-effector positions at a normalized phase."""
        s = float(np.clip(phase, 0.0, 1.0))
        if self.task is TaskKind.BAR_LIFT:
            obj = (1 - s) * self.path["object_start"] \
                + s * self.path["object_end"]
            return (obj + self.grasp.left_contact_offset,
                    obj + self.grasp.right_contact_offset)
        wipe = (1 - s) * self.path["wipe_start"] + s * self.path["wipe_end"]
        return self.path["left_anchor"], wipe

    def bme_at(self, q: JointConfig, phase: float) -> BmeSample:
        if self.task is TaskKind.BAR_LIFT:
            return bam(self.system, q, self.grasp, self.weighting, time=phase)
        return brm(self.system, q, self.weighting, time=phase)

    def to_dict(self) -> dict:
        out = {
            "schema": 1,
            "name": self.name,
            "task": self.task.value,
            "system": self.system.to_dict(),
            "task_direction": [float(x) for x in self.task_direction],
            "episode_length": self.episode_length,
            "q_init": [float(x) for x in self.q_init],
            "path": {k: [float(x) for x in v] for k, v in self.path.items()},
            "posture_knots": [
                {"phase": ph, "bme": [[float(x) for x in row]
                                      for row in m.entries]}
                for ph, m in self.posture_knots],
            "tracking_tol": self.tracking_tol,
            "min_tci": self.min_tci,
            "hold_fraction": self.hold_fraction,
            "demo_noise": self.demo_noise,
            "trial_jitter": self.trial_jitter,
            "max_joint_step": self.max_joint_step,
            "guidance_scale": self.guidance_scale,
        }
        if self.grasp is not None:
            out["grasp"] = self.grasp.to_dict()
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "Scenario":
        if payload.get("schema") != 1:
            raise ValidationError(
                f"unsupported scenario schema {payload.get('schema')!r}; "
                f"this build reads schema 1")
        try:
            grasp = (GraspSpec.from_dict(payload["grasp"])
                     if "grasp" in payload else None)
            return cls(
                name=str(payload["name"]),
                task=TaskKind(payload["task"]),
                system=DualArmSystem.from_dict(payload["system"]),
                task_direction=np.asarray(payload["task_direction"], float),
                episode_length=int(payload["episode_length"]),
                q_init=np.asarray(payload["q_init"], dtype=float),
                path={k: np.asarray(v, dtype=float)
                      for k, v in payload["path"].items()},
                posture_knots=tuple(
                    (k["phase"], np.asarray(k["bme"], dtype=float))
                    for k in payload["posture_knots"]),
                tracking_tol=float(payload["tracking_tol"]),
                min_tci=float(payload["min_tci"]),
                hold_fraction=float(payload["hold_fraction"]),
                demo_noise=float(payload["demo_noise"]),
                trial_jitter=float(payload["trial_jitter"]),
                max_joint_step=float(payload["max_joint_step"]),
                guidance_scale=float(payload["guidance_scale"]),
                grasp=grasp)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed scenario payload: {exc}") from exc


def load_scenario(source) -> Scenario:
    """Read a scenario from a JSON file path or an open text stream."""
    if hasattr(source, "read"):
        return Scenario.from_dict(json.load(source))
    with open(source, "r", encoding="utf-8") as fh:
        return Scenario.from_dict(json.load(fh))


def builtin_scenario(name: str) -> Scenario:
    """Load one of the packaged scenarios ("bar_lift", "plate_wipe")."""
    path = Path(__file__).parent / "scenarios" / f"{name}.json"
    if not path.is_file():
        have = sorted(p.stem for p in path.parent.glob("*.json"))
        raise ValidationError(f"no builtin scenario {name!r}; have {have}")
    return load_scenario(path)


# ---------------------------------------------------------------------------
# observation model


def observe(scenario: Scenario, q: np.ndarray, phase: float) -> np.ndarray:
    """Feature frame for the state q: joints, effector poses, tracked
    pose (object pose or right-in-left relative pose), and phase."""
    q = np.asarray(q, dtype=float)
    sys = scenario.system
    jc = JointConfig(q[:sys.left.dof], q[sys.left.dof:])
    p_l, th_l = forward_kinematics(sys.left, jc.q_left)
    p_r, th_r = forward_kinematics(sys.right, jc.q_right)
    if scenario.task is TaskKind.BAR_LIFT:
        mid = 0.5 * (p_l + p_r)
        d = p_r - p_l
        tracked = np.array([mid[0], mid[1], np.arctan2(d[1], d[0])])
    else:
        tracked = relative_pose(sys, jc)
    return np.concatenate([q, p_l, [th_l], p_r, [th_r], tracked, [phase]])


def _tracking_error(scenario: Scenario, q: np.ndarray, phase: float) -> float:
    sys = scenario.system
    p_l, _ = forward_kinematics(sys.left, q[:sys.left.dof])
    p_r, _ = forward_kinematics(sys.right, q[sys.left.dof:])
    t_l, t_r = scenario.ee_targets(phase)
    return max(float(np.linalg.norm(p_l - t_l)),
               float(np.linalg.norm(p_r - t_r)))


# ---------------------------------------------------------------------------
# demonstrations


@dataclass(frozen=True)
class Demonstration:
    """One expert episode: per-step observation, action, and ellipsoid."""

    scenario_name: str
    observations: np.ndarray  # (L, OBS_FRAME_DIM)
    actions: np.ndarray  # (L, ACTION_DIM), absolute joint targets + grippers
    bmes: tuple
    seed: int
    noise: float

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        act = np.asarray(self.actions, dtype=float)
        if obs.ndim != 2 or act.ndim != 2 or obs.shape[0] != act.shape[0]:
            raise ValidationError("observations and actions must align")
        if len(self.bmes) != obs.shape[0]:
            raise ValidationError("one ellipsoid sample per step required")
        for a in (obs, act):
            a.flags.writeable = False
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "actions", act)

    @property
    def length(self) -> int:
        return self.observations.shape[0]

    def save(self, fp) -> None:
        header = {"schema": 1, "scenario": self.scenario_name,
                  "episode_length": self.length, "seed": self.seed,
                  "noise": self.noise}
        fp.write(json.dumps(header, sort_keys=True) + "\n")
        for k in range(self.length):
            row = {"k": k,
                   "obs": [float(x) for x in self.observations[k]],
                   "action": [float(x) for x in self.actions[k]],
                   "bme": self.bmes[k].to_dict()}
            fp.write(json.dumps(row, sort_keys=True) + "\n")

    @classmethod
    def load(cls, fp) -> "Demonstration":
        header = json.loads(fp.readline())
        if header.get("schema") != 1:
            raise ValidationError(
                f"unsupported demonstration schema {header.get('schema')!r}; "
                f"regenerate with gen-demos (this build writes schema 1)")
        obs, act, bmes = [], [], []
        for line in fp:
            if not line.strip():
                continue
            row = json.loads(line)
            obs.append(row["obs"])
            act.append(row["action"])
            bmes.append(BmeSample.from_dict(row["bme"]))
        if len(obs) != header["episode_length"]:
            raise ValidationError(
                f"demonstration truncated: header promises "
                f"{header['episode_length']} steps, found {len(obs)}")
        return cls(scenario_name=header["scenario"],
                   observations=np.asarray(obs, dtype=float),
                   actions=np.asarray(act, dtype=float),
                   bmes=tuple(bmes), seed=int(header["seed"]),
                   noise=float(header["noise"]))


def verify_demonstration(demo: Demonstration, scenario: Scenario) -> float:
    """Max entrywise gap between stored ellipsoids and ones recomputed
    from the stored joint targets.  Self-consistent files return ~0."""
    dof_l = scenario.system.left.dof
    worst = 0.0
    span = demo.length - 1
    for k in range(demo.length):
        q = demo.actions[k, :dof_l + scenario.system.right.dof]
        jc = JointConfig(q[:dof_l], q[dof_l:])
        fresh = scenario.bme_at(jc, k / span)
        worst = max(worst, float(np.max(np.abs(
            fresh.velocity_bme.entries - demo.bmes[k].velocity_bme.entries))))
    return worst


# ---------------------------------------------------------------------------
# scripted expert


def _task_state(scenario: Scenario, q: np.ndarray, phase: float):
    """Stacked position error (4,) and task Jacobian (4, dof)."""
    sys = scenario.system
    n_l = sys.left.dof
    q_l, q_r = q[:n_l], q[n_l:]
    p_l, _ = forward_kinematics(sys.left, q_l)
    p_r, _ = forward_kinematics(sys.right, q_r)
    t_l, t_r = scenario.ee_targets(phase)
    err = np.concatenate([t_l - p_l, t_r - p_r])
    jac = np.zeros((4, q.size))
    jac[:2, :n_l] = jacobian(sys.left, q_l)[:2]
    jac[2:, n_l:] = jacobian(sys.right, q_r)[:2]
    return err, jac


def _posture_gradient(scenario: Scenario, q: np.ndarray,
                      target: SpdMatrix) -> np.ndarray:
    """d(alignment objective)/dq via the single-step window kernel."""
    sys = scenario.system
    act = np.zeros((1, ACTION_DIM))
    act[0, :q.size] = q
    grad = _kernels.window_gradient(
        scenario.kernel_mode,
        sys.left.link_lengths,
        (sys.left.base_position[0], sys.left.base_position[1],
         sys.left.base_orientation),
        sys.right.link_lengths,
        (sys.right.base_position[0], sys.right.base_position[1],
         sys.right.base_orientation),
        act, np.zeros(ACTION_DIM), np.ones(ACTION_DIM),
        sys.left.dof, sys.right.dof,
        target.entries[None], _GRAD_FD)
    return np.asarray(grad)[0, :q.size]


def _expert_step(scenario: Scenario, q: np.ndarray, phase: float,
                 target: SpdMatrix, posture_gain: float,
                 jitter: Optional[np.ndarray], bias: Optional[np.ndarray],
                 step_index: int) -> np.ndarray:
    dof = q.size
    eye = np.eye(dof)
    for it in range(_IK_ITERS + _POLISH_ITERS):
        err, jac = _task_state(scenario, q, phase)
        jjt = jac @ jac.T + _DLS_DAMP ** 2 * np.eye(jac.shape[0])
        dq = jac.T @ np.linalg.solve(jjt, err)
        if it < _IK_ITERS:
            null = eye - jac.T @ np.linalg.solve(jjt, jac)
            move = -posture_gain * (null @ _posture_gradient(
                scenario, q, target))
            if it == 0 and jitter is not None:
                move += null @ jitter
            nrm = float(np.max(np.abs(move)))
            if nrm > _POSTURE_STEP_MAX:
                move *= _POSTURE_STEP_MAX / nrm
            dq = dq + move
        elif it == _IK_ITERS and bias is not None:
            # The per-demo posture offset goes in after descent so the
            # optimizer cannot iron it out within the same step; the
            # polish passes below restore task tracking around it.
            null = eye - jac.T @ np.linalg.solve(jjt, jac)
            dq = dq + null @ bias
        q = q + dq
    resid = _tracking_error(scenario, q, phase)
    if resid >= _STEP_TRACK_TOL:
        raise ValidationError(
            f"waypoint at step {step_index} unreachable: tracking residual "
            f"{resid:.2e} (phase {phase:.3f})")
    return q


def scripted_expert(scenario: Scenario,
                    posture_target_profile: Callable[[float], SpdMatrix],
                    seed: int, noise: Optional[float] = None,
                    posture_gain: float = 2.0) -> Demonstration:
    """Generate one demonstration by damped-least-squares tracking with
    null-space descent of the posture objective.

    Seeded joint-space jitter (sigma ``noise``, defaulting to the
    scenario's ``demo_noise``) creates the dataset variation: each
    demonstration draws one persistent posture offset, re-applied
    through the task null space every step so the episode settles on
    its own posture around the shared profile, plus a small per-step
    wobble.  The offset ramps up over the episode, which keeps the
    approach phase consistent across demonstrations while the hold
    phase carries the posture diversity.  Every step still tracks the
    path to 1e-3, and the same seed always yields the same episode.
    """
    sigma = scenario.demo_noise if noise is None else float(noise)
    if sigma < 0.0:
        raise ValidationError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    sys = scenario.system
    dof = sys.left.dof + sys.right.dof
    span = scenario.episode_length - 1

    q = scenario.q_init + 0.5 * sigma * rng.standard_normal(dof)
    posture_offset = sigma * rng.standard_normal(dof)
    prev_q = q.copy()
    obs_rows = np.empty((scenario.episode_length, OBS_FRAME_DIM))
    act_rows = np.empty((scenario.episode_length, ACTION_DIM))
    bmes = []
    for k in range(scenario.episode_length):
        phase = k / span
        obs_rows[k] = observe(scenario, prev_q, phase)
        target = posture_target_profile(phase)
        jitter = None
        bias = None
        if sigma > 0.0:
            jitter = 0.1 * sigma * rng.standard_normal(dof)
            bias = (_BIAS_FLOOR + (1.0 - _BIAS_FLOOR)
                    * min(1.0, phase / _BIAS_RAMP_END)) * posture_offset
        q = _expert_step(scenario, q, phase, target, posture_gain, jitter,
                         bias, k)
        act_rows[k, :dof] = q
        act_rows[k, dof:] = 1.0  # grippers closed throughout both tasks
        bmes.append(scenario.bme_at(JointConfig(q[:sys.left.dof],
                                                q[sys.left.dof:]), phase))
        prev_q = q
    return Demonstration(scenario_name=scenario.name, observations=obs_rows,
                         actions=act_rows, bmes=tuple(bmes), seed=seed,
                         noise=sigma)


def demo_training_pairs(demos: Sequence[Demonstration], horizon_obs: int,
                        horizon_act: int) -> tuple[np.ndarray, np.ndarray]:
    """Slice demonstrations into (stacked observation, action window)
    pairs for policy training.  Observation stacks repeat the first
    frame at the episode start, matching the rollout-time convention."""
    if not demos:
        raise ValidationError("need at least one demonstration")
    obs_out, win_out = [], []
    for demo in demos:
        span = demo.length - horizon_act
        if span < 0:
            raise ValidationError(
                f"episode of length {demo.length} is shorter than the "
                f"action window ({horizon_act})")
        for t in range(span + 1):
            idx = np.maximum(np.arange(t - horizon_obs + 1, t + 1), 0)
            obs_out.append(demo.observations[idx].ravel())
            win_out.append(demo.actions[t:t + horizon_act])
    return np.asarray(obs_out), np.asarray(win_out)


# ---------------------------------------------------------------------------
# rollouts


@dataclass(frozen=True)
class RolloutReport:
    """Per-step traces plus the success verdict for one episode."""

    success: bool
    tracking_trace: np.ndarray
    tci_trace: np.ndarray
    g_b_trace: np.ndarray
    failure: Optional[str] = None

    def __post_init__(self):
        n = self.tracking_trace.shape[0]
        if self.tci_trace.shape != (n,) or self.g_b_trace.shape != (n,):
            raise ValidationError("traces must share the episode length")


def success_predicate(tracking_trace: np.ndarray, tci_trace: np.ndarray,
                      scenario: Scenario) -> bool:
    """Tracking within tolerance for at least 95% of steps AND mean TCI
    over the closing (task-critical) segment at or above the floor."""
    tracking_trace = np.asarray(tracking_trace, dtype=float)
    tci_trace = np.asarray(tci_trace, dtype=float)
    if tracking_trace.size != scenario.episode_length:
        raise ValidationError("trace length must match the episode")
    ok = float(np.mean(tracking_trace < scenario.tracking_tol))
    crit = tci_trace[_critical_start(scenario):]
    return ok >= 0.95 and float(crit.mean()) >= scenario.min_tci


def _critical_start(scenario: Scenario) -> int:
    return scenario.episode_length \
        - int(np.ceil(scenario.hold_fraction * scenario.episode_length))


def critical_tci(report: RolloutReport, scenario: Scenario) -> float:
    return float(report.tci_trace[_critical_start(scenario):].mean())


def rollout(sampler: Sampler, scenario: Scenario, seed: int,
            chunk: int) -> RolloutReport:
    """Run one episode, querying the sampler for an action window every
    ``chunk`` steps and executing it open-loop under the joint-velocity
    bound.  Non-finite actions abort the episode as a recorded failure
    with the remaining trace entries left at their failure values."""
    if chunk < 1 or chunk > scenario.episode_length:
        raise ValidationError("chunk must be in [1, episode_length]")
    rng = np.random.default_rng(seed)
    sys = scenario.system
    dof = sys.left.dof + sys.right.dof
    span = scenario.episode_length - 1
    profile = scenario.posture_profile()

    q = scenario.q_init + scenario.trial_jitter * rng.standard_normal(dof)
    frame = observe(scenario, q, 0.0)
    frames = [frame, frame]  # (previous, current) observation stack
    tracking = np.full(scenario.episode_length, np.inf)
    tci_tr = np.zeros(scenario.episode_length)
    g_b = np.full(scenario.episode_length, np.inf)
    failure = None

    k = 0
    while k < scenario.episode_length:
        phases = np.clip(np.arange(k, k + chunk) / span, 0.0, 1.0)
        window = np.asarray(sampler(np.concatenate(frames), phases,
                                    int(rng.integers(2 ** 31))), dtype=float)
        if window.shape != (chunk, ACTION_DIM):
            raise ValidationError(
                f"sampler returned shape {window.shape}, expected "
                f"{(chunk, ACTION_DIM)}")
        if not np.all(np.isfinite(window)):
            failure = f"non-finite action in the window issued at step {k}"
            break
        for i in range(min(chunk, scenario.episode_length - k)):
            step = k + i
            phase = step / span
            dq = np.clip(window[i, :dof] - q, -scenario.max_joint_step,
                         scenario.max_joint_step)
            q = q + dq
            smp = scenario.bme_at(JointConfig(q[:sys.left.dof],
                                              q[sys.left.dof:]), phase)
            tracking[step] = _tracking_error(scenario, q, phase)
            tci_tr[step] = tci(smp.velocity_bme, scenario.task_direction)
            g_b[step] = spd_objective(smp.velocity_bme, profile(phase))
            frames = [frames[1],
                      observe(scenario, q, min(step + 1, span) / span)]
        k += chunk
    success = failure is None and success_predicate(tracking, tci_tr,
                                                    scenario)
    return RolloutReport(success=success, tracking_trace=tracking,
                         tci_trace=tci_tr, g_b_trace=g_b, failure=failure)


# ---------------------------------------------------------------------------
# samplers


def policy_sampler(checkpoint: PolicyCheckpoint, scenario: Scenario,
                   guidance: Optional[GuidanceConfig] = None,
                   method: str = "accelerated",
                   denoise_steps: int = 10) -> Sampler:
    """Adapt a diffusion checkpoint to the rollout protocol.  When a
    guidance config with positive scale is given, the scenario supplies
    the kinematic context and per-step phases."""
    context = KinematicContext.from_system(scenario.system,
                                           scenario.kernel_mode)

    def sampler(obs: np.ndarray, phases: np.ndarray, seed: int) -> np.ndarray:
        return diffusion_sample(checkpoint, obs, seed=seed, method=method,
                                denoise_steps=denoise_steps,
                                guidance=guidance, context=context,
                                phases=phases)

    return sampler


def guided_policy_sampler(checkpoint: PolicyCheckpoint, scenario: Scenario,
                          scale: Optional[float] = None,
                          method: str = "accelerated",
                          denoise_steps: int = 10) -> Sampler:
    """Guidance toward the scenario's posture profile at its frozen
    scale (or an explicit override)."""
    cfg = GuidanceConfig(
        scale=scenario.guidance_scale if scale is None else scale,
        target_profile=scenario.posture_profile())
    return policy_sampler(checkpoint, scenario, guidance=cfg, method=method,
                          denoise_steps=denoise_steps)


def replay_sampler(demo: Demonstration) -> Sampler:
    """Feed a stored demonstration back as the policy (ground truth)."""
    span = demo.length - 1

    def sampler(obs: np.ndarray, phases: np.ndarray, seed: int) -> np.ndarray:
        steps = np.clip(np.rint(np.asarray(phases) * span).astype(int),
                        0, span)
        return demo.actions[steps]

    return sampler


# ---------------------------------------------------------------------------
# evaluation suite


@dataclass(frozen=True)
class MetricsRow:
    variant: str
    scenario: str
    trials: int
    msr: float
    tci_mean: float
    tci_sd: float
    mra_mean: float
    gb_mean: float


METRICS_COLUMNS = ("variant", "scenario", "trials", "msr", "tci_mean",
                   "tci_sd", "mra_mean", "gb_mean")


def evaluate_suite(variants: Mapping[str, Callable[[Scenario],
                                                   tuple[Sampler, int]]],
                   scenarios: Sequence[Scenario], trials: int,
                   seeds: Sequence[int]) -> list[MetricsRow]:
    """Roll every variant over every scenario for ``trials`` paired
    seeds and aggregate MSR, critical-segment TCI, final-step MRA, and
    mean alignment objective.  Row order follows the mapping order, so
    reports are deterministic."""
    if trials < 1:
        raise ValidationError("trials must be positive")
    if len(seeds) < trials:
        raise ValidationError(f"need {trials} seeds, got {len(seeds)}")
    rows = []
    for vname, factory in variants.items():
        for sc in scenarios:
            sampler, chunk = factory(sc)
            reports = [rollout(sampler, sc, seed=int(seeds[i]), chunk=chunk)
                       for i in range(trials)]
            tcis = np.array([critical_tci(r, sc) for r in reports])
            finals = np.array([r.g_b_trace[-1] for r in reports])
            rows.append(MetricsRow(
                variant=vname, scenario=sc.name, trials=trials,
                msr=float(np.mean([r.success for r in reports])),
                tci_mean=float(tcis.mean()),
                tci_sd=float(tcis.std()),
                mra_mean=float(np.mean(np.exp(-finals))),
                gb_mean=float(np.mean([r.g_b_trace.mean()
                                       for r in reports]))))
    return rows


def write_metrics_csv(rows: Sequence[MetricsRow], fp) -> None:
    fp.write(",".join(METRICS_COLUMNS) + "\n")
    for r in rows:
        fp.write(f"{r.variant},{r.scenario},{r.trials},{r.msr!r},"
                 f"{r.tci_mean!r},{r.tci_sd!r},{r.mra_mean!r},"
                 f"{r.gb_mean!r}\n")
