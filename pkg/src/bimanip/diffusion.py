"""Conditional action-window diffusion with ellipsoid-guided sampling.

A small fully-connected denoiser (hand-rolled forward/backward so the
gradients are exactly checkable) is trained to predict the noise added
to normalized action windows, conditioned on observation features and a
sinusoidal timestep embedding.  Sampling runs either the full ancestral
chain or a deterministic accelerated subsequence; both can shift each
step's posterior mean along the gradient of the ellipsoid alignment
objective, which pulls the generated joint trajectories toward a
target manipulability profile without retraining.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import NumericalError, ValidationError
from .kinematics import DualArmSystem
from .spd import SpdMatrix

_EMBED_DIM = 32
_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8
# bound on the denoised estimate in normalized units; z-scored training
# data stays well inside, and the bound stops the reverse chain from
# amplifying denoiser error once an iterate drifts out of distribution
_X0_CLIP = 5.0


# ---------------------------------------------------------------------------
# noise schedule


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative noise-retention profile alpha_bar over T steps."""

    t_steps: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=float)
        if self.t_steps < 1:
            raise ValidationError("schedule needs at least one step")
        if ab.shape != (self.t_steps + 1,):
            raise ValidationError("alpha_bar must have T+1 entries")
        if ab[0] != 1.0:
            raise ValidationError("alpha_bar[0] must be exactly 1")
        if np.any(ab <= 0.0) or np.any(ab > 1.0):
            raise ValidationError("alpha_bar entries must lie in (0, 1]")
        if np.any(np.diff(ab) > 0.0):
            raise ValidationError("alpha_bar must be non-increasing")
        if not 0.0 < ab[-1] < 0.05:
            raise ValidationError("terminal alpha_bar must be in (0, 0.05)")
        object.__setattr__(self, "alpha_bar", _frozen(ab))

    @property
    def betas(self) -> np.ndarray:
        """Per-step noise rates beta_t, index 1..T (entry 0 unused)."""
        ab = self.alpha_bar
        out = np.zeros(self.t_steps + 1)
        out[1:] = 1.0 - ab[1:] / ab[:-1]
        return out

    def posterior_var(self, t: int) -> float:
        """Fixed reverse-step variance for step t -> t-1."""
        ab = self.alpha_bar
        if t == 1:
            return 0.0
        return float((1.0 - ab[t - 1]) / (1.0 - ab[t]) * self.betas[t])

    def to_dict(self) -> dict:
        return {"t_steps": self.t_steps, "alpha_bar": self.alpha_bar.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSchedule":
        return cls(t_steps=int(data["t_steps"]),
                   alpha_bar=np.asarray(data["alpha_bar"], dtype=float))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def squared_cosine_schedule(t_steps: int) -> NoiseSchedule:
    """Squared-cosine retention profile with the usual small offset.

    Built from per-step rates clipped at 0.999 so the terminal
    retention stays strictly positive.
    """
    if t_steps < 1:
        raise ValidationError("schedule needs at least one step")
    s = 0.008
    grid = np.arange(t_steps + 1, dtype=float) / t_steps
    f = np.cos((grid + s) / (1.0 + s) * np.pi / 2.0) ** 2
    raw = f / f[0]
    betas = np.clip(1.0 - raw[1:] / raw[:-1], 0.0, 0.999)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(t_steps=t_steps, alpha_bar=alpha_bar)


def forward_diffuse(a0: np.ndarray, t: int, eps: np.ndarray,
                    schedule: NoiseSchedule) -> np.ndarray:
    """Noising step: sqrt(ab_t) * a0 + sqrt(1 - ab_t) * eps."""
    a0 = np.asarray(a0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if a0.shape != eps.shape:
        raise ValidationError("action window and noise shapes differ")
    if not 0 <= t <= schedule.t_steps:
        raise ValidationError("step index outside the schedule")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps


# ---------------------------------------------------------------------------
# denoiser network


def _silu(z):
    sig = expit(z)
    return z * sig, sig


def _silu_grad(z, sig):
    return sig * (1.0 + z * (1.0 - sig))


class DenoiserNet:
    """Fully-connected residual noise predictor with manual backprop.

    Input is the concatenation (flattened noisy window, observation
    features, timestep embedding); output has the flattened window
    shape.  Three hidden transforms of equal width; the second and
    third are residual, and the window slice of the input skips
    straight to the output, since the added noise dominates the noisy
    window at high noise levels.  Forward/backward are exact so
    parameter gradients can be pinned against finite differences.
    """

    def __init__(self, in_dim: int, out_dim: int, hidden: int = 256,
                 seed: int = 0):
        if in_dim < 1 or out_dim < 1 or hidden < 1:
            raise ValidationError("network dimensions must be positive")
        rng = np.random.default_rng(seed)
        dims = [(hidden, in_dim), (hidden, hidden), (hidden, hidden),
                (out_dim, hidden)]
        self.params = []
        for rows, cols in dims:
            w = rng.standard_normal((rows, cols)) * np.sqrt(2.0 / cols)
            self.params.append(w)
            self.params.append(np.zeros(rows))

    @property
    def in_dim(self) -> int:
        return self.params[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.params[6].shape[0]

    def forward(self, x: np.ndarray):
        """Batch forward; returns (output, cache for backward)."""
        w1, b1, w2, b2, w3, b3, w4, b4 = self.params
        z1 = x @ w1.T + b1
        h1, s1 = _silu(z1)
        z2 = h1 @ w2.T + b2
        a2, s2 = _silu(z2)
        h2 = h1 + a2
        z3 = h2 @ w3.T + b3
        a3, s3 = _silu(z3)
        h3 = h2 + a3
        # identity skip of the window slice; carries no parameters
        out = h3 @ w4.T + b4 + x[:, :w4.shape[0]]
        return out, (x, z1, s1, h1, z2, s2, h2, z3, s3, h3)

    def backward(self, cache, dout: np.ndarray):
        """Gradients of a scalar loss w.r.t. every parameter.

        ``dout`` is the loss gradient at the network output.  Returns a
        list aligned with ``self.params``.
        """
        x, z1, s1, h1, z2, s2, h2, z3, s3, h3 = cache
        w1, b1, w2, b2, w3, b3, w4, b4 = self.params
        dw4 = dout.T @ h3
        db4 = dout.sum(axis=0)
        dh3 = dout @ w4
        dz3 = dh3 * _silu_grad(z3, s3)
        dw3 = dz3.T @ h2
        db3 = dz3.sum(axis=0)
        dh2 = dh3 + dz3 @ w3
        dz2 = dh2 * _silu_grad(z2, s2)
        dw2 = dz2.T @ h1
        db2 = dz2.sum(axis=0)
        dh1 = dh2 + dz2 @ w2
        dz1 = dh1 * _silu_grad(z1, s1)
        dw1 = dz1.T @ x
        db1 = dz1.sum(axis=0)
        return [dw1, db1, dw2, db2, dw3, db3, dw4, db4]


def timestep_embedding(t, width: int = _EMBED_DIM) -> np.ndarray:
    """Sinusoidal embedding of integer steps; rows per entry of t."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    half = width // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainingConfig:
    """Optimizer and loop settings for denoiser training."""

    steps: int = 3000
    batch_size: int = 128
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    ema_decay: float = 0.999
    t_steps: int = 100
    hidden: int = 256
    horizon_obs: int = 2
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValidationError("steps and batch size must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValidationError("EMA decay must lie in [0, 1)")
        if self.learning_rate <= 0.0 or self.weight_decay < 0.0:
            raise ValidationError("bad optimizer hyperparameters")


@dataclass(frozen=True)
class PolicyCheckpoint:
    """Immutable trained policy: weights, EMA shadow, schedule, stats."""

    schedule: NoiseSchedule
    layers: tuple
    ema: tuple
    act_mean: np.ndarray
    act_scale: np.ndarray
    obs_mean: np.ndarray
    obs_scale: np.ndarray
    horizon_obs: int
    horizon_act: int
    act_dim: int
    ema_decay: float
    hidden: int

    def __post_init__(self):
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValidationError("EMA decay must lie in [0, 1)")
        for scale in (self.act_scale, self.obs_scale):
            if np.any(np.asarray(scale) <= 0.0):
                raise ValidationError("normalization scales must be positive")
        if self.horizon_act < 1 or self.horizon_obs < 1:
            raise ValidationError("horizons must be positive")

    def network(self, ema: bool = True) -> DenoiserNet:
        """Reassemble the denoiser (EMA weights by default)."""
        src = self.ema if ema else self.layers
        net = DenoiserNet.__new__(DenoiserNet)
        net.params = [np.array(p) for p in src]
        return net

    @property
    def obs_dim(self) -> int:
        return int(self.obs_mean.size)

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "schedule": self.schedule.to_dict(),
            "layers": [p.tolist() for p in self.layers],
            "ema": [p.tolist() for p in self.ema],
            "norm": {"act_mean": self.act_mean.tolist(),
                     "act_scale": self.act_scale.tolist(),
                     "obs_mean": self.obs_mean.tolist(),
                     "obs_scale": self.obs_scale.tolist()},
            "horizons": {"m": self.horizon_obs, "n": self.horizon_act},
            "act_dim": self.act_dim,
            "ema_decay": self.ema_decay,
            "hidden": self.hidden,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyCheckpoint":
        if data.get("schema") != 1:
            raise ValidationError(
                "unsupported checkpoint schema "
                f"{data.get('schema')!r}; expected 1 — re-train or convert "
                "the file with a matching package version")
        norm = data["norm"]
        return cls(
            schedule=NoiseSchedule.from_dict(data["schedule"]),
            layers=tuple(_frozen(np.asarray(p)) for p in data["layers"]),
            ema=tuple(_frozen(np.asarray(p)) for p in data["ema"]),
            act_mean=_frozen(np.asarray(norm["act_mean"])),
            act_scale=_frozen(np.asarray(norm["act_scale"])),
            obs_mean=_frozen(np.asarray(norm["obs_mean"])),
            obs_scale=_frozen(np.asarray(norm["obs_scale"])),
            horizon_obs=int(data["horizons"]["m"]),
            horizon_act=int(data["horizons"]["n"]),
            act_dim=int(data["act_dim"]),
            ema_decay=float(data["ema_decay"]),
            hidden=int(data["hidden"]),
        )


def _norm_stats(arr: np.ndarray):
    mean = arr.mean(axis=0)
    scale = np.maximum(arr.std(axis=0), 1e-6)
    return mean, scale


def train(observations: np.ndarray, action_windows: np.ndarray,
          config: TrainingConfig, seed: int):
    """Fit the denoiser; returns (PolicyCheckpoint, training log rows).

    ``observations`` is (N, obs_dim) — already-stacked history
    features — and ``action_windows`` is (N, n, act_dim).  Log rows are
    (step, loss, grad_norm, ema_gap) tuples sampled every
    ``config.log_every`` steps.
    """
    obs = np.asarray(observations, dtype=float)
    acts = np.asarray(action_windows, dtype=float)
    if obs.ndim != 2 or acts.ndim != 3 or obs.shape[0] != acts.shape[0]:
        raise ValidationError("dataset arrays have inconsistent shapes")
    if obs.shape[0] == 0:
        raise ValidationError("empty training dataset")

    n_samples, horizon, act_dim = acts.shape
    win_dim = horizon * act_dim
    # per-dimension stats shared across window steps
    act_mean, act_scale = _norm_stats(acts.reshape(-1, act_dim))
    obs_mean, obs_scale = _norm_stats(obs)
    flat_n = ((acts - act_mean) / act_scale).reshape(n_samples, win_dim)
    obs_n = (obs - obs_mean) / obs_scale

    schedule = squared_cosine_schedule(config.t_steps)
    rng = np.random.default_rng(seed)
    in_dim = win_dim + obs.shape[1] + _EMBED_DIM
    net = DenoiserNet(in_dim, win_dim, hidden=config.hidden,
                      seed=int(rng.integers(2 ** 31)))

    adam_m = [np.zeros_like(p) for p in net.params]
    adam_v = [np.zeros_like(p) for p in net.params]
    shadow = [p.copy() for p in net.params]
    sqrt_ab = np.sqrt(schedule.alpha_bar)
    sqrt_1m = np.sqrt(1.0 - schedule.alpha_bar)

    log_rows = []
    losses = np.empty(config.steps)
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, n_samples, size=config.batch_size)
        t = rng.integers(1, config.t_steps + 1, size=config.batch_size)
        eps = rng.standard_normal((config.batch_size, win_dim))
        x0 = flat_n[idx]
        x_t = sqrt_ab[t, None] * x0 + sqrt_1m[t, None] * eps
        net_in = np.concatenate([x_t, obs_n[idx], timestep_embedding(t)],
                                axis=1)
        pred, cache = net.forward(net_in)
        resid = pred - eps
        loss = float(np.mean(resid ** 2))
        if not np.isfinite(loss):
            raise NumericalError(f"training loss became {loss} at step "
                                 f"{step}; lower the learning rate")
        losses[step - 1] = loss
        grads = net.backward(cache, 2.0 * resid / resid.size)

        bc1 = 1.0 - _ADAM_B1 ** step
        bc2 = 1.0 - _ADAM_B2 ** step
        gnorm_sq = 0.0
        for i, g in enumerate(grads):
            gnorm_sq += float(np.sum(g * g))
            adam_m[i] = _ADAM_B1 * adam_m[i] + (1.0 - _ADAM_B1) * g
            adam_v[i] = _ADAM_B2 * adam_v[i] + (1.0 - _ADAM_B2) * g * g
            update = (adam_m[i] / bc1) / (np.sqrt(adam_v[i] / bc2)
                                          + _ADAM_EPS)
            net.params[i] -= config.learning_rate * (
                update + config.weight_decay * net.params[i])
            shadow[i] = (config.ema_decay * shadow[i]
                         + (1.0 - config.ema_decay) * net.params[i])

        if step % config.log_every == 0 or step == config.steps:
            gap = np.sqrt(sum(float(np.sum((p - s) ** 2))
                              for p, s in zip(net.params, shadow)))
            log_rows.append((step, loss, float(np.sqrt(gnorm_sq)), gap))

    tail = max(1, config.steps // 10)
    if losses[-tail:].mean() >= losses[:tail].mean():
        raise NumericalError("training loss did not improve; "
                             "check the dataset or hyperparameters")

    checkpoint = PolicyCheckpoint(
        schedule=schedule,
        layers=tuple(_frozen(p) for p in net.params),
        ema=tuple(_frozen(p) for p in shadow),
        act_mean=_frozen(act_mean), act_scale=_frozen(act_scale),
        obs_mean=_frozen(obs_mean), obs_scale=_frozen(obs_scale),
        horizon_obs=config.horizon_obs, horizon_act=horizon,
        act_dim=act_dim, ema_decay=config.ema_decay, hidden=config.hidden)
    return checkpoint, log_rows


# ---------------------------------------------------------------------------
# guidance


@dataclass(frozen=True)
class KinematicContext:
    """Raw chain geometry handed to the alignment-objective kernels."""

    mode: int
    l_lengths: np.ndarray
    l_base: tuple
    r_lengths: np.ndarray
    r_base: tuple
    n_left: int
    n_right: int

    @classmethod
    def from_system(cls, system: DualArmSystem,
                    mode: int) -> "KinematicContext":
        left, right = system.left, system.right
        return cls(
            mode=mode,
            l_lengths=_frozen(left.link_lengths),
            l_base=(float(left.base_position[0]),
                    float(left.base_position[1]),
                    float(left.base_orientation)),
            r_lengths=_frozen(right.link_lengths),
            r_base=(float(right.base_position[0]),
                    float(right.base_position[1]),
                    float(right.base_orientation)),
            n_left=left.dof, n_right=right.dof)


@dataclass(frozen=True)
class GuidanceConfig:
    """Settings for ellipsoid-target guidance during sampling."""

    scale: float
    target_profile: Callable[[float], SpdMatrix]
    fd_step: float = 1e-4
    guided_steps: Optional[frozenset] = None  # None means every step

    def __post_init__(self):
        if self.scale < 0.0:
            raise ValidationError("guidance scale must be non-negative")
        if self.fd_step <= 0.0:
            raise ValidationError("finite-difference step must be positive")


def _window_targets(guidance: GuidanceConfig,
                    phases: Sequence[float]) -> np.ndarray:
    out = np.empty((len(phases), 2, 2))
    for i, phase in enumerate(phases):
        out[i] = guidance.target_profile(
            float(np.clip(phase, 0.0, 1.0))).entries
    return out


def guidance_gradient(window_norm: np.ndarray, act_mean: np.ndarray,
                      act_scale: np.ndarray, guidance: GuidanceConfig,
                      context: KinematicContext,
                      targets: np.ndarray) -> np.ndarray:
    """Ascent direction of the target-alignment log-likelihood.

    ``window_norm`` is the (n, act_dim) window in normalized units with
    per-dimension stats ``act_mean``/``act_scale``; the result has the
    window's shape.  Gripper coordinates carry zero gradient.  Positive
    multiples of the result decrease the summed alignment objective
    (the underlying log-density is -G up to a constant).
    """
    act_mean = np.asarray(act_mean, dtype=float)
    act_dim = act_mean.size
    window = np.ascontiguousarray(
        np.asarray(window_norm, dtype=float).reshape(-1, act_dim))
    grad = _kernels.window_gradient(
        context.mode, context.l_lengths, context.l_base,
        context.r_lengths, context.r_base,
        window, act_mean, np.asarray(act_scale, dtype=float),
        context.n_left, context.n_right,
        np.ascontiguousarray(np.asarray(targets, dtype=float)),
        guidance.fd_step)
    return -np.asarray(grad)


# ---------------------------------------------------------------------------
# sampling


def _prepare_obs(checkpoint: PolicyCheckpoint, obs: np.ndarray) -> np.ndarray:
    obs = np.asarray(obs, dtype=float).ravel()
    if obs.size != checkpoint.obs_dim:
        raise ValidationError(
            f"observation has {obs.size} features; checkpoint expects "
            f"{checkpoint.obs_dim}")
    return (obs - checkpoint.obs_mean) / checkpoint.obs_scale


def _predict_x0(net: DenoiserNet, x: np.ndarray, ab_t: float,
                obs_n: np.ndarray, t: int) -> np.ndarray:
    """Bounded denoised-window estimate implied by the noise head."""
    net_in = np.concatenate([x[None, :], obs_n[None, :],
                             timestep_embedding([t])], axis=1)
    eps_hat, _ = net.forward(net_in)
    x0 = (x - np.sqrt(1.0 - ab_t) * eps_hat[0]) / np.sqrt(ab_t)
    return np.clip(x0, -_X0_CLIP, _X0_CLIP)


def _guided(guidance, t):
    if guidance is None or guidance.scale == 0.0:
        return False
    return guidance.guided_steps is None or t in guidance.guided_steps


def sample(checkpoint: PolicyCheckpoint, obs: np.ndarray, seed: int,
           method: str = "ancestral", denoise_steps: int = 10,
           guidance: Optional[GuidanceConfig] = None,
           context: Optional[KinematicContext] = None,
           phases: Optional[Sequence[float]] = None) -> np.ndarray:
    """Draw one action window (n, act_dim) in action units.

    ``method`` is "ancestral" (full stochastic chain) or "accelerated"
    (deterministic subsequence of ``denoise_steps`` steps).  When
    ``guidance`` is provided with a positive scale, each retained
    step's mean shifts by scale * variance * gradient; ``context`` and
    ``phases`` (normalized task times per window step) must then be
    given.  With guidance scale 0 the output is bit-identical to the
    unguided sampler under the same seed.
    """
    if method not in ("ancestral", "accelerated"):
        raise ValidationError(f"unknown sampling method {method!r}")
    if guidance is not None and guidance.scale > 0.0:
        if context is None or phases is None:
            raise ValidationError(
                "guided sampling needs a kinematic context and phases")
        if len(phases) != checkpoint.horizon_act:
            raise ValidationError("one phase per window step required")
        targets = _window_targets(guidance, phases)
    else:
        targets = None

    schedule = checkpoint.schedule
    net = checkpoint.network(ema=True)
    obs_n = _prepare_obs(checkpoint, obs)
    rng = np.random.default_rng(seed)
    dim = checkpoint.horizon_act * checkpoint.act_dim
    x = rng.standard_normal(dim)
    ab = schedule.alpha_bar

    def shift(mean_vec: np.ndarray, t: int, var: float) -> np.ndarray:
        # lambda * Sigma * g with the fixed per-step variance; at
        # variance zero the shifted and unshifted draws coincide.
        if targets is None or var <= 0.0 or not _guided(guidance, t):
            return mean_vec
        g = guidance_gradient(mean_vec, checkpoint.act_mean,
                              checkpoint.act_scale, guidance, context,
                              targets)
        return mean_vec + guidance.scale * var * g.ravel()

    if method == "ancestral":
        betas = schedule.betas
        for t in range(schedule.t_steps, 0, -1):
            x0_hat = _predict_x0(net, x, ab[t], obs_n, t)
            # posterior mean in its denoised-estimate form
            mu = (np.sqrt(ab[t - 1]) * betas[t] * x0_hat
                  + np.sqrt(1.0 - betas[t]) * (1.0 - ab[t - 1]) * x) \
                / (1.0 - ab[t])
            var = schedule.posterior_var(t)
            mu = shift(mu, t, var)
            x = mu if t == 1 else mu + np.sqrt(var) * rng.standard_normal(dim)
    else:
        if not 1 <= denoise_steps <= schedule.t_steps:
            raise ValidationError("denoise step count outside schedule")
        taus = np.unique(np.linspace(0, schedule.t_steps, denoise_steps + 1)
                         .round().astype(int))
        for i in range(len(taus) - 1, 0, -1):
            t_cur, t_prev = int(taus[i]), int(taus[i - 1])
            x0_hat = _predict_x0(net, x, ab[t_cur], obs_n, t_cur)
            # noise consistent with the bounded estimate
            eps_hat = (x - np.sqrt(ab[t_cur]) * x0_hat) \
                / np.sqrt(1.0 - ab[t_cur])
            # posterior variance of the subsequence jump
            var = (1.0 - ab[t_prev]) / (1.0 - ab[t_cur]) \
                * (1.0 - ab[t_cur] / ab[t_prev])
            x0_hat = shift(x0_hat, t_cur, var)
            x = np.sqrt(ab[t_prev]) * x0_hat \
                + np.sqrt(1.0 - ab[t_prev]) * eps_hat
    window = checkpoint.act_mean + checkpoint.act_scale \
        * x.reshape(checkpoint.horizon_act, checkpoint.act_dim)
    return window


def guided_sample(checkpoint: PolicyCheckpoint, obs: np.ndarray,
                  guidance: GuidanceConfig, context: KinematicContext,
                  phases: Sequence[float], seed: int,
                  method: str = "ancestral",
                  denoise_steps: int = 10) -> np.ndarray:
    """Sample with the posterior mean shifted toward the target profile."""
    return sample(checkpoint, obs, seed, method=method,
                  denoise_steps=denoise_steps, guidance=guidance,
                  context=context, phases=phases)
