"""Shared domain types: channel layout, observations, skills, actions.

The motion observation is a flat vector with a fixed channel order
[v, omega, gravity, q, dq] (base linear velocity, base angular velocity,
projected gravity direction, joint positions, joint velocities).  Every
consumer — discriminators, coverage metrics, the policy — slices it through
:class:`ChannelLayout` rather than hand-rolled index arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Canonical channel order.  Discriminator assignments and config files refer
# to channels by these names.
CHANNEL_NAMES = ("v", "omega", "gravity", "q", "dq")

GRAVITY_NORM_TOL = 1e-6


class LayoutError(ValueError):
    """Vector length or channel structure inconsistent with the layout."""


class ConfigError(ValueError):
    """Invalid configuration value (unknown channel, bad dimension, ...)."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class TrainingError(RuntimeError):
    """Training-loop failure (empty batch, non-finite loss, ...)."""


class CheckpointError(RuntimeError):
    """Checkpoint missing, corrupt, or incompatible with the run config."""


@dataclass(frozen=True)
class ChannelLayout:
    """Channel spans of the motion observation for a robot with J joints.

    Spans are contiguous, non-overlapping and ordered [v, omega, gravity,
    q, dq], so ``motion_dim = 9 + 2J``.  The policy observation appends the
    previous action: ``policy_dim = motion_dim + J``.
    """

    joint_count: int
    spans: dict[str, slice] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.joint_count < 1:
            raise ConfigError(f"joint_count must be positive, got {self.joint_count}")
        j = self.joint_count
        widths = {"v": 3, "omega": 3, "gravity": 3, "q": j, "dq": j}
        spans = {}
        start = 0
        for name in CHANNEL_NAMES:
            spans[name] = slice(start, start + widths[name])
            start += widths[name]
        object.__setattr__(self, "spans", spans)

    @property
    def motion_dim(self) -> int:
        return 9 + 2 * self.joint_count

    @property
    def policy_dim(self) -> int:
        return self.motion_dim + self.joint_count

    def width(self, names) -> int:
        """Total width of the named channels."""
        self._check_names(names)
        return sum(self.spans[n].stop - self.spans[n].start for n in names)

    def _check_names(self, names) -> None:
        for name in names:
            if name not in self.spans:
                raise ConfigError(
                    f"unknown channel {name!r}; valid channels: {CHANNEL_NAMES}"
                )
        if len(set(names)) != len(list(names)):
            raise ConfigError(f"duplicate channel names in {list(names)!r}")


@dataclass(frozen=True)
class MotionObservation:
    """Motion observation vector [v, omega, gravity, q, dq].

    The gravity span must be a unit vector (projected gravity is a
    direction, not a force).
    """

    values: np.ndarray
    layout: ChannelLayout

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.layout.motion_dim,):
            raise LayoutError(
                f"motion observation has shape {v.shape}, layout needs "
                f"({self.layout.motion_dim},)"
            )
        g = v[self.layout.spans["gravity"]]
        if abs(np.linalg.norm(g) - 1.0) > GRAVITY_NORM_TOL:
            raise LayoutError(f"projected gravity is not a unit vector: {g}")
        object.__setattr__(self, "values", v)

    def channel(self, name: str) -> np.ndarray:
        return self.values[self.layout.spans[name]]


@dataclass(frozen=True)
class PolicyObservation:
    """Motion observation concatenated with the previous action."""

    values: np.ndarray
    layout: ChannelLayout

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.layout.policy_dim,):
            raise LayoutError(
                f"policy observation has shape {v.shape}, layout needs "
                f"({self.layout.policy_dim},)"
            )
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class SkillCode:
    """Discrete latent skill: an index into [0, num_skills)."""

    index: int
    num_skills: int

    def __post_init__(self):
        if self.num_skills < 1:
            raise ConfigError(f"num_skills must be positive, got {self.num_skills}")
        if not 0 <= self.index < self.num_skills:
            raise ValueError(
                f"skill index {self.index} out of range [0, {self.num_skills})"
            )


@dataclass(frozen=True)
class Action:
    """Joint-offset targets, one entry per joint, clipped to the action limit."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


def assemble_motion_obs(layout: ChannelLayout, v, omega, gravity, q, dq) -> MotionObservation:
    """Pack the five channels into a motion observation.

    Raises LayoutError on any dimension mismatch or a non-unit gravity
    direction.
    """
    parts = {"v": v, "omega": omega, "gravity": gravity, "q": q, "dq": dq}
    chunks = []
    for name in CHANNEL_NAMES:
        arr = np.asarray(parts[name], dtype=np.float64)
        span = layout.spans[name]
        want = span.stop - span.start
        if arr.shape != (want,):
            raise LayoutError(
                f"channel {name!r} has shape {arr.shape}, layout needs ({want},)"
            )
        chunks.append(arr)
    return MotionObservation(np.concatenate(chunks), layout)


def assemble_policy_obs(m: MotionObservation, prev_action: Action) -> PolicyObservation:
    """Concatenate [motion observation, previous action]."""
    a = prev_action.values
    if a.shape != (m.layout.joint_count,):
        raise LayoutError(
            f"previous action has shape {a.shape}, layout needs "
            f"({m.layout.joint_count},)"
        )
    return PolicyObservation(np.concatenate([m.values, a]), m.layout)


def split_channels(m, subset, layout: ChannelLayout | None = None) -> np.ndarray:
    """Extract and concatenate the named channel spans, in canonical order.

    Accepts a MotionObservation or a plain array whose trailing dimension is
    motion_dim (batched input is fine), so discriminators can slice whole
    rollouts at once.
    """
    if isinstance(m, MotionObservation):
        layout = m.layout
        values = m.values
    else:
        if layout is None:
            raise ConfigError("split_channels needs a layout for raw arrays")
        values = np.asarray(m)
        if values.shape[-1] != layout.motion_dim:
            raise LayoutError(
                f"trailing dimension {values.shape[-1]} != motion_dim "
                f"{layout.motion_dim}"
            )
    layout._check_names(subset)
    ordered = [n for n in CHANNEL_NAMES if n in subset]
    return np.concatenate([values[..., layout.spans[n]] for n in ordered], axis=-1)


def one_hot(k: SkillCode) -> np.ndarray:
    """Standard basis vector e_index of length num_skills."""
    e = np.zeros(k.num_skills, dtype=np.float64)
    e[k.index] = 1.0
    return e
