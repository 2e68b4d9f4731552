"""Regularization reward terms and the skill/regularization combiner.

All functions are pure and broadcast over a leading batch dimension, so the
trainer can score a whole vector of environments per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from skillab.core import ChannelLayout, NumericError


@dataclass(frozen=True)
class RewardWeights:
    """Weighting of reward components.

    Defaults: unit weights on the skill and regularization groups, and the
    standard legged-locomotion penalty table (all regularization weights
    non-positive).  Vector quantities (torque, acceleration, action rate)
    are penalized by their squared norms summed over joints.
    """

    skill: float = 1.0
    regularization: float = 1.0
    lin_vel_z: float = -2.0
    ang_vel_xy: float = -0.05
    torque: float = -1e-5
    joint_accel: float = -2.5e-7
    action_rate: float = -0.01
    collision: float = -1.0

    def __post_init__(self):
        for name in ("lin_vel_z", "ang_vel_xy", "torque", "joint_accel", "action_rate", "collision"):
            if getattr(self, name) > 0:
                raise ValueError(f"regularization weight {name} must be <= 0")


def regularization_reward(
    layout: ChannelLayout,
    motion_obs: np.ndarray,
    torque: np.ndarray,
    joint_accel: np.ndarray,
    action: np.ndarray,
    prev_action: np.ndarray,
    n_collision,
    weights: RewardWeights,
):
    """Weighted sum of the penalty terms for one transition (or a batch).

    ``n_collision`` is the clamp count for this step, not the cumulative
    episode count.
    """
    m = np.asarray(motion_obs, dtype=np.float64)
    inputs = (m, torque, joint_accel, action, prev_action)
    if not all(np.all(np.isfinite(np.asarray(x))) for x in inputs):
        raise NumericError("non-finite inputs to regularization_reward")
    v_z = m[..., layout.spans["v"]][..., 2]
    omega = m[..., layout.spans["omega"]]
    r = weights.lin_vel_z * v_z**2
    r = r + weights.ang_vel_xy * (omega[..., 0] ** 2 + omega[..., 1] ** 2)
    r = r + weights.torque * np.sum(np.asarray(torque) ** 2, axis=-1)
    r = r + weights.joint_accel * np.sum(np.asarray(joint_accel) ** 2, axis=-1)
    r = r + weights.action_rate * np.sum(
        (np.asarray(action) - np.asarray(prev_action)) ** 2, axis=-1
    )
    r = r + weights.collision * np.asarray(n_collision)
    return r


def total_reward(skill_reward, reg_reward, weights: RewardWeights):
    """r = w_skill * r_skill + w_reg * r_reg."""
    return weights.skill * np.asarray(skill_reward) + weights.regularization * np.asarray(reg_reward)
