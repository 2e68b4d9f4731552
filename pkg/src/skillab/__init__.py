"""Desk-scale unsupervised skill discovery lab.

Multi-discriminator intrinsic rewards, an orthogonal mixture-of-experts
policy, PPO training, and state-coverage evaluation, all running against a
deterministic toy quadruped surrogate.
"""

from skillab.core import (
    Action,
    ChannelLayout,
    ConfigError,
    LayoutError,
    MotionObservation,
    NumericError,
    PolicyObservation,
    SkillCode,
    TrainingError,
    one_hot,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ChannelLayout",
    "ConfigError",
    "LayoutError",
    "MotionObservation",
    "NumericError",
    "PolicyObservation",
    "SkillCode",
    "TrainingError",
    "one_hot",
    "__version__",
]
