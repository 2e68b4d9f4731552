"""Deterministic toy quadruped surrogate.

Joint layer: PD-tracked double integrator with unit inertia, semi-implicit
Euler at 50 Hz, hard joint-limit clamps (clamp events stand in for
collisions).  Base layer: a fixed seeded linear map from joint velocities to
base twist [v; omega]; orientation integrates omega, projected gravity is
read back from it.  Everything a physics engine would provide to the reward
terms (torque, joint acceleration, action rate, collision count, v_z,
omega_xy) stays physically meaningful.

All stepping is a pure function of (state, action).  ``step`` and
``batch_step`` share one vectorized kernel whose per-environment arithmetic
is elementwise (the twist matvec accumulates joint-by-joint in fixed
order), so batched and looped stepping are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from skillab.core import (
    Action,
    ChannelLayout,
    LayoutError,
    MotionObservation,
    NumericError,
)

WORLD_GRAVITY = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class EnvParams:
    """Static environment description; fixed for the lifetime of a run."""

    joint_count: int
    dt: float = 0.02
    kp: float = 20.0
    kd: float = 0.5
    nominal_pose: np.ndarray = None
    joint_limit: float = 0.8
    action_limit: float = 1.0
    locomotion_map: np.ndarray = None
    tilt_termination_threshold: float = -0.5
    max_episode_steps: int = 400

    @staticmethod
    def create(
        joint_count: int,
        env_seed: int = 0,
        dt: float = 0.02,
        kp: float = 20.0,
        kd: float = 0.5,
        joint_limit: float = 0.8,
        action_limit: float = 1.0,
        tilt_termination_threshold: float = -0.5,
        max_episode_steps: int = 400,
        twist_gain: float = 1.0,
    ) -> "EnvParams":
        """Build params with a seeded locomotion map.

        The map is drawn once from a zero-mean Gaussian and rescaled to
        spectral norm ``twist_gain`` (capped at 2.0) so base twist stays
        bounded for bounded joint velocities; identical seeds give
        bit-identical maps.
        """
        if twist_gain > 2.0:
            raise ValueError(f"twist_gain must be <= 2.0, got {twist_gain}")
        rng = np.random.Generator(np.random.PCG64(env_seed))
        lmap = rng.standard_normal((6, joint_count))
        lmap *= twist_gain / np.linalg.norm(lmap, ord=2)
        return EnvParams(
            joint_count=joint_count,
            dt=dt,
            kp=kp,
            kd=kd,
            nominal_pose=np.zeros(joint_count),
            joint_limit=joint_limit,
            action_limit=action_limit,
            locomotion_map=lmap,
            tilt_termination_threshold=tilt_termination_threshold,
            max_episode_steps=max_episode_steps,
        )

    def __post_init__(self):
        if self.nominal_pose is None:
            object.__setattr__(self, "nominal_pose", np.zeros(self.joint_count))
        if self.locomotion_map is None:
            raise ValueError("locomotion_map is required; use EnvParams.create")
        if self.locomotion_map.shape != (6, self.joint_count):
            raise LayoutError(
                f"locomotion_map has shape {self.locomotion_map.shape}, "
                f"needs (6, {self.joint_count})"
            )

    @property
    def layout(self) -> ChannelLayout:
        return ChannelLayout(self.joint_count)

    def map_checksum(self) -> str:
        """Short checksum of the locomotion map, echoed into log headers."""
        import hashlib

        return hashlib.sha256(self.locomotion_map.tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class EnvState:
    """Snapshot of one environment between steps."""

    orientation: np.ndarray  # unit quaternion (w, x, y, z)
    theta: np.ndarray
    theta_dot: np.ndarray
    prev_action: np.ndarray  # clipped action applied at the previous step
    step_count: int
    last_torque: np.ndarray
    last_joint_accel: np.ndarray
    collision_count: int


# ---------------------------------------------------------------------------
# Quaternion helpers, vectorized over a leading batch dimension.
# ---------------------------------------------------------------------------


def _quat_multiply(q: np.ndarray, r: np.ndarray) -> np.ndarray:
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rw, rx, ry, rz = r[..., 0], r[..., 1], r[..., 2], r[..., 3]
    return np.stack(
        [
            qw * rw - qx * rx - qy * ry - qz * rz,
            qw * rx + qx * rw + qy * rz - qz * ry,
            qw * ry - qx * rz + qy * rw + qz * rx,
            qw * rz + qx * ry - qy * rx + qz * rw,
        ],
        axis=-1,
    )


def _quat_from_rotvec(phi: np.ndarray) -> np.ndarray:
    """exp map: rotation vector -> unit quaternion, smooth through zero."""
    angle = np.linalg.norm(phi, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(half)/angle, continuous at angle = 0 where it equals 0.5
    scale = 0.5 * np.sinc(half / np.pi)
    return np.concatenate([np.cos(half), phi * scale], axis=-1)


def _gravity_body(q: np.ndarray) -> np.ndarray:
    """World gravity direction (0,0,-1) expressed in the body frame."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            -2.0 * (x * z + w * y),
            -2.0 * (y * z - w * x),
            -(1.0 - 2.0 * (x * x + y * y)),
        ],
        axis=-1,
    )


# ---------------------------------------------------------------------------
# Core dynamics
# ---------------------------------------------------------------------------


def pd_torque(params: EnvParams, theta, theta_dot, target) -> np.ndarray:
    """Joint-level PD law: tau = Kp (target - theta) - Kd theta_dot."""
    theta = np.asarray(theta, dtype=np.float64)
    theta_dot = np.asarray(theta_dot, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if not (theta.shape == theta_dot.shape == target.shape):
        raise LayoutError(
            f"pd_torque shapes differ: {theta.shape}, {theta_dot.shape}, "
            f"{target.shape}"
        )
    return params.kp * (target - theta) - params.kd * theta_dot


def _base_twist(params: EnvParams, theta_dot: np.ndarray) -> np.ndarray:
    """[v; omega] = locomotion_map @ theta_dot, accumulated joint-by-joint.

    Fixed accumulation order keeps batched and single-env results
    bit-identical.
    """
    lmap = params.locomotion_map
    twist = np.zeros(theta_dot.shape[:-1] + (6,))
    for j in range(params.joint_count):
        twist += theta_dot[..., j : j + 1] * lmap[:, j]
    return twist


def _kernel(params: EnvParams, quat, theta, theta_dot, step_count, action):
    """Vectorized step over a leading env dimension. Returns new arrays."""
    a = np.clip(action, -params.action_limit, params.action_limit)
    target = params.nominal_pose + a
    torque = params.kp * (target - theta) - params.kd * theta_dot
    accel = torque  # unit joint inertia
    theta_dot = theta_dot + accel * params.dt  # semi-implicit Euler
    theta_raw = theta + theta_dot * params.dt
    theta = np.clip(theta_raw, -params.joint_limit, params.joint_limit)
    step_collisions = np.sum(theta_raw != theta, axis=-1).astype(np.int64)

    twist = _base_twist(params, theta_dot)
    omega = twist[..., 3:]
    dq = _quat_from_rotvec(omega * params.dt)
    quat = _quat_multiply(quat, dq)
    quat = quat / np.linalg.norm(quat, axis=-1, keepdims=True)
    gravity = _gravity_body(quat)

    step_count = step_count + 1
    terminated = gravity[..., 2] > params.tilt_termination_threshold
    truncated = step_count >= params.max_episode_steps
    obs = np.concatenate([twist, gravity, theta, theta_dot], axis=-1)
    return quat, theta, theta_dot, a, step_count, torque, accel, step_collisions, obs, terminated, truncated


def reset(params: EnvParams, seed: int = 0) -> EnvState:
    """Fresh episode: nominal pose, zero velocities, upright orientation.

    The reset distribution is a point mass, so the state is the same for
    every seed; the argument is kept for interface stability.
    """
    j = params.joint_count
    return EnvState(
        orientation=np.array([1.0, 0.0, 0.0, 0.0]),
        theta=params.nominal_pose.copy(),
        theta_dot=np.zeros(j),
        prev_action=np.zeros(j),
        step_count=0,
        last_torque=np.zeros(j),
        last_joint_accel=np.zeros(j),
        collision_count=0,
    )


def observe(params: EnvParams, state: EnvState) -> MotionObservation:
    """Read the motion observation out of a state without stepping."""
    twist = _base_twist(params, state.theta_dot)
    gravity = _gravity_body(state.orientation)
    values = np.concatenate([twist, gravity, state.theta, state.theta_dot])
    return MotionObservation(values, params.layout)


def step(params: EnvParams, state: EnvState, action):
    """Advance one environment by one control step.

    Returns (new_state, motion_observation, terminated, truncated).
    Raises NumericError on non-finite action components.
    """
    action = action.values if isinstance(action, Action) else np.asarray(action, dtype=np.float64)
    if action.shape != (params.joint_count,):
        raise LayoutError(
            f"action has shape {action.shape}, needs ({params.joint_count},)"
        )
    if not np.all(np.isfinite(action)):
        raise NumericError(f"non-finite action: {action}")
    if state.step_count >= params.max_episode_steps:
        raise ValueError(
            f"stepping past truncation (step_count={state.step_count}); reset first"
        )
    quat, theta, theta_dot, a, count, torque, accel, cols, obs, term, trunc = _kernel(
        params,
        state.orientation,
        state.theta,
        state.theta_dot,
        state.step_count,
        action,
    )
    new_state = EnvState(
        orientation=quat,
        theta=theta,
        theta_dot=theta_dot,
        prev_action=a,
        step_count=int(count),
        last_torque=torque,
        last_joint_accel=accel,
        collision_count=state.collision_count + int(cols),
    )
    return new_state, MotionObservation(obs, params.layout), bool(term), bool(trunc)


def batch_step(params: EnvParams, states, actions):
    """Step E environments at once; elementwise equal to E ``step`` calls.

    Returns (new_states, observations (E, motion_dim), terminated (E,),
    truncated (E,)).
    """
    if len(states) != len(actions):
        raise LayoutError(
            f"batch mismatch: {len(states)} states vs {len(actions)} actions"
        )
    acts = np.asarray(
        [a.values if isinstance(a, Action) else a for a in actions], dtype=np.float64
    )
    if acts.shape != (len(states), params.joint_count):
        raise LayoutError(
            f"actions have shape {acts.shape}, need "
            f"({len(states)}, {params.joint_count})"
        )
    if not np.all(np.isfinite(acts)):
        raise NumericError("non-finite action components in batch")
    quat = np.stack([s.orientation for s in states])
    theta = np.stack([s.theta for s in states])
    theta_dot = np.stack([s.theta_dot for s in states])
    counts = np.array([s.step_count for s in states])
    if np.any(counts >= params.max_episode_steps):
        raise ValueError("stepping past truncation in batch; reset first")
    quat, theta, theta_dot, a, counts, torque, accel, cols, obs, term, trunc = _kernel(
        params, quat, theta, theta_dot, counts, acts
    )
    new_states = [
        EnvState(
            orientation=quat[i],
            theta=theta[i],
            theta_dot=theta_dot[i],
            prev_action=a[i],
            step_count=int(counts[i]),
            last_torque=torque[i],
            last_joint_accel=accel[i],
            collision_count=states[i].collision_count + int(cols[i]),
        )
        for i in range(len(states))
    ]
    return new_states, obs, term.copy(), trunc.copy()


class VecToyEnv:
    """Stacked-array convenience wrapper used by rollout collection.

    Shares the functional kernel, so its trajectories are bit-identical to
    per-environment ``step`` calls.  Holds per-step signals (torque,
    acceleration, clipped actions, clamp counts) that the reward terms
    consume.
    """

    def __init__(self, params: EnvParams, num_envs: int):
        self.params = params
        self.num_envs = num_envs
        self.reset_all()

    def reset_all(self) -> None:
        e, j = self.num_envs, self.params.joint_count
        self.quat = np.tile([1.0, 0.0, 0.0, 0.0], (e, 1))
        self.theta = np.tile(self.params.nominal_pose, (e, 1))
        self.theta_dot = np.zeros((e, j))
        self.prev_action = np.zeros((e, j))
        self.step_count = np.zeros(e, dtype=np.int64)
        self.last_torque = np.zeros((e, j))
        self.last_accel = np.zeros((e, j))
        self.collision_count = np.zeros(e, dtype=np.int64)

    def reset_envs(self, mask: np.ndarray) -> None:
        """Reset the environments selected by a boolean mask."""
        j = self.params.joint_count
        self.quat[mask] = np.array([1.0, 0.0, 0.0, 0.0])
        self.theta[mask] = self.params.nominal_pose
        self.theta_dot[mask] = np.zeros(j)
        self.prev_action[mask] = np.zeros(j)
        self.step_count[mask] = 0
        self.last_torque[mask] = np.zeros(j)
        self.last_accel[mask] = np.zeros(j)
        self.collision_count[mask] = 0

    def observe(self) -> np.ndarray:
        twist = _base_twist(self.params, self.theta_dot)
        gravity = _gravity_body(self.quat)
        return np.concatenate([twist, gravity, self.theta, self.theta_dot], axis=-1)

    def policy_observe(self) -> np.ndarray:
        return np.concatenate([self.observe(), self.prev_action], axis=-1)

    def step(self, actions: np.ndarray):
        """Step all environments. Returns (obs, signals dict, term, trunc).

        ``signals`` carries everything the regularization reward needs for
        this transition: torque, joint acceleration, the clipped action
        applied now and at the previous step, and per-step clamp counts.
        """
        actions = np.asarray(actions, dtype=np.float64)
        if not np.all(np.isfinite(actions)):
            raise NumericError("non-finite action components")
        before_prev = self.prev_action.copy()
        out = _kernel(
            self.params, self.quat, self.theta, self.theta_dot, self.step_count, actions
        )
        quat, theta, theta_dot, a, counts, torque, accel, cols, obs, term, trunc = out
        self.quat, self.theta, self.theta_dot = quat, theta, theta_dot
        self.prev_action = a
        self.step_count = counts
        self.last_torque, self.last_accel = torque, accel
        self.collision_count = self.collision_count + cols
        signals = {
            "torque": torque,
            "joint_accel": accel,
            "action": a,
            "prev_action": before_prev,
            "step_collisions": cols,
        }
        return obs, signals, term, trunc

    def export_states(self) -> list[EnvState]:
        """Snapshot as functional EnvStates (test hook)."""
        return [
            EnvState(
                orientation=self.quat[i].copy(),
                theta=self.theta[i].copy(),
                theta_dot=self.theta_dot[i].copy(),
                prev_action=self.prev_action[i].copy(),
                step_count=int(self.step_count[i]),
                last_torque=self.last_torque[i].copy(),
                last_joint_accel=self.last_accel[i].copy(),
                collision_count=int(self.collision_count[i]),
            )
            for i in range(self.num_envs)
        ]
