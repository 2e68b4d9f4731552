"""Run configuration: nested dataclasses, YAML round-trip, dotted overrides.

Defaults mirror the reference full-scale setup (12 joints, 100 skills, 6
experts, 3 discriminators); the ``desk_scale`` preset shrinks everything to
sizes that train in minutes on one CPU core.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from skillab.core import ChannelLayout, ConfigError
from skillab.reward import RewardWeights


@dataclass
class EnvConfig:
    joint_count: int = 12
    dt: float = 0.02
    kp: float = 20.0
    kd: float = 0.5
    joint_limit: float = 0.8
    action_limit: float = 1.0
    tilt_termination_threshold: float = -0.5
    max_episode_steps: int = 400
    env_seed: int = 0
    twist_gain: float = 1.0


@dataclass
class SkillConfig:
    num_skills: int = 100


@dataclass
class PolicyConfig:
    architecture: str = "omoe"  # mlp | moe | omoe
    num_experts: int = 6
    expert_hidden_dims: tuple = (64, 64)
    feature_dim: int = 64
    gate_hidden_dims: tuple = (64, 64)
    mlp_hidden_dims: tuple = (256, 256, 128)
    unit_normalize: bool = False


@dataclass
class DiscriminatorConfig:
    assignment: tuple = (("v", "omega"), ("gravity",), ("q", "dq"))
    hidden_dims: tuple = (256, 256, 128)
    learning_rate: float = 1e-3
    batch_size: int = 256
    updates_per_iteration: int = 4
    buffer_capacity: int = 100_000


@dataclass
class PpoConfig:
    """Clipped-surrogate PPO hyperparameters (none stated upstream; these
    are standard legged-RL values)."""

    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    learning_rate: float = 3e-4
    value_loss_coef: float = 0.5
    entropy_coef: float = 0.005
    max_grad_norm: float = 1.0
    steps_per_iteration: int = 24

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"ppo.gamma must be in (0, 1], got {self.gamma}")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError(f"ppo.gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if self.clip_ratio <= 0:
            raise ConfigError(f"ppo.clip_ratio must be > 0, got {self.clip_ratio}")


@dataclass
class TrainingConfig:
    iterations: int = 1000
    num_envs: int = 256
    seed: int = 0
    checkpoint_every: int = 200


@dataclass
class EvalConfig:
    bins: int = 50
    duration_steps: int = 1000
    coverage_channels: tuple = ("v", "omega", "gravity")


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    skill: SkillConfig = field(default_factory=SkillConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        """Cross-field checks; raises ConfigError naming the bad field."""
        from skillab.discriminator import DiscriminatorAssignment

        if self.env.joint_count < 1:
            raise ConfigError(f"env.joint_count must be positive, got {self.env.joint_count}")
        if self.skill.num_skills < 1:
            raise ConfigError(f"skill.num_skills must be positive, got {self.skill.num_skills}")
        if self.policy.architecture not in ("mlp", "moe", "omoe"):
            raise ConfigError(
                f"policy.architecture must be mlp|moe|omoe, got {self.policy.architecture!r}"
            )
        if self.policy.num_experts > self.policy.feature_dim:
            raise ConfigError(
                f"policy.num_experts ({self.policy.num_experts}) exceeds "
                f"policy.feature_dim ({self.policy.feature_dim})"
            )
        for name in ("expert_hidden_dims", "gate_hidden_dims", "mlp_hidden_dims"):
            if any(d < 1 for d in getattr(self.policy, name)):
                raise ConfigError(f"policy.{name} has a non-positive dimension")
        if self.training.num_envs < 1:
            raise ConfigError(f"training.num_envs must be positive, got {self.training.num_envs}")
        if self.training.iterations < 1:
            raise ConfigError(f"training.iterations must be positive, got {self.training.iterations}")
        if self.eval.bins < 1:
            raise ConfigError(f"eval.bins must be positive, got {self.eval.bins}")
        layout = ChannelLayout(self.env.joint_count)
        # raises ConfigError on overlaps or unknown channel names
        DiscriminatorAssignment(self.discriminator.assignment, layout)
        return self

    @property
    def num_discriminators(self) -> int:
        return len(self.discriminator.assignment)

    def to_dict(self) -> dict:
        return _to_plain(dataclasses.asdict(self))

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        cfg = RunConfig()
        for section, payload in (data or {}).items():
            if not hasattr(cfg, section):
                raise ConfigError(f"unknown config section {section!r}")
            target = getattr(cfg, section)
            if not isinstance(payload, dict):
                raise ConfigError(f"section {section!r} must be a mapping")
            kwargs = {}
            known = {f.name: f for f in fields(target)}
            for key, value in payload.items():
                if key not in known:
                    raise ConfigError(f"unknown config key {section}.{key}")
                kwargs[key] = _coerce(value, getattr(target, key))
            setattr(cfg, section, dataclasses.replace(target, **kwargs))
        return cfg

    def with_override(self, dotted: str, value) -> "RunConfig":
        """Apply one ``section.key=value`` override; value parsed as YAML."""
        if "=" in dotted and value is None:
            dotted, value = dotted.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2:
            raise ConfigError(f"override path must be section.key, got {dotted!r}")
        section, key = parts
        if not hasattr(self, section):
            raise ConfigError(f"unknown config section {section!r}")
        target = getattr(self, section)
        if key not in {f.name for f in fields(target)}:
            raise ConfigError(f"unknown config key {section}.{key}")
        parsed = yaml.safe_load(value) if isinstance(value, str) else value
        cfg = dataclasses.replace(self)
        setattr(
            cfg, section, dataclasses.replace(target, **{key: _coerce(parsed, getattr(target, key))})
        )
        return cfg


def _coerce(value, template):
    """Nudge YAML-parsed values toward the dataclass field's shape.

    YAML 1.1 parses "1e-3" as a string (it wants "1.0e-3"), so numeric
    fields also accept numeric-looking strings.
    """
    if isinstance(template, tuple) and isinstance(value, (list, tuple)):
        return tuple(_coerce(v, template[0] if template else v) for v in value)
    if isinstance(template, bool):
        return bool(value)
    if isinstance(template, (int, float)) and isinstance(value, str):
        try:
            value = float(value)
        except ValueError as exc:
            raise ConfigError(f"expected a number, got {value!r}") from exc
    if isinstance(template, int) and not isinstance(value, bool) and isinstance(value, (int, float)):
        if float(value) != int(value):
            raise ConfigError(f"expected integer, got {value!r}")
        return int(value)
    if isinstance(template, float) and isinstance(value, (int, float)):
        return float(value)
    return value


def _to_plain(obj):
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


PRESETS = {
    # paper-scale defaults shrunk for a single CPU core
    "desk_scale": {
        "env": {"joint_count": 4},
        "skill": {"num_skills": 8},
        "policy": {"num_experts": 3},
        "training": {"num_envs": 64, "iterations": 1000},
    },
}


def apply_preset(config: RunConfig, name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    merged = config.to_dict()
    for section, payload in PRESETS[name].items():
        merged[section].update(payload)
    return RunConfig.from_dict(merged)


def desk_scale_config() -> RunConfig:
    return apply_preset(RunConfig(), "desk_scale").validate()


def load_config(path: str | Path | None, overrides: list[str] = (), preset: str | None = None) -> RunConfig:
    """Config from YAML file (optional) + preset + dotted overrides."""
    if path is None:
        cfg = RunConfig()
    else:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        with open(p) as fh:
            data = yaml.safe_load(fh) or {}
        cfg = RunConfig.from_dict(data)
    if preset:
        cfg = apply_preset(cfg, preset)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        cfg = cfg.with_override(dotted, value)
    return cfg.validate()


def save_config(config: RunConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
