"""Versioned parameter checkpoints.

A checkpoint carries a format version, the full run-config echo, the
training iteration, and the state dicts of policy, value and discriminator
networks, so evaluation can rebuild the exact networks and reject files
whose config does not match what the caller expects.
"""

from __future__ import annotations

from pathlib import Path

import torch

from skillab.config import RunConfig
from skillab.core import ChannelLayout, CheckpointError
from skillab.discriminator import DiscriminatorAssignment, DiscriminatorBank
from skillab.nets import GaussianPolicy, Mlp, MlpSpec, make_policy_body

FORMAT_VERSION = 1


TRAIN_DTYPE = torch.float32  # training hot path; checks use float64 nets


def build_networks(config: RunConfig, seed: int, dtype=TRAIN_DTYPE):
    """Fresh policy/value/discriminator networks per the config."""
    layout = ChannelLayout(config.env.joint_count)
    input_dim = layout.policy_dim + config.skill.num_skills
    gen = torch.Generator().manual_seed(seed)
    body = make_policy_body(
        config.policy.architecture,
        input_dim,
        config.env.joint_count,
        gen,
        num_experts=config.policy.num_experts,
        mlp_hidden_dims=tuple(config.policy.mlp_hidden_dims),
        unit_normalize=config.policy.unit_normalize,
        dtype=dtype,
    )
    policy = GaussianPolicy(body, config.env.joint_count, dtype=dtype)
    value = Mlp(MlpSpec(input_dim, 1), gen, dtype)
    assignment = DiscriminatorAssignment(config.discriminator.assignment, layout)
    bank = DiscriminatorBank(
        assignment,
        config.skill.num_skills,
        gen,
        hidden_dims=tuple(config.discriminator.hidden_dims),
        dtype=dtype,
    )
    return policy, value, bank


def save_checkpoint(
    path: str | Path,
    config: RunConfig,
    iteration: int,
    policy: GaussianPolicy,
    value: Mlp,
    bank: DiscriminatorBank,
) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "iteration": iteration,
        "policy_state": policy.state_dict(),
        "value_state": value.state_dict(),
        "discriminator_state": bank.state_dict(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path):
    """Rebuild (config, iteration, policy, value, bank) from a checkpoint."""
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    try:
        payload = torch.load(p, weights_only=True)
    except Exception as exc:  # corrupt or foreign file
        raise CheckpointError(f"cannot read checkpoint {p}: {exc}") from exc
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version!r} unsupported "
            f"(expected {FORMAT_VERSION})"
        )
    config = RunConfig.from_dict(payload["config"]).validate()
    policy, value, bank = build_networks(config, seed=0)
    try:
        policy.load_state_dict(payload["policy_state"])
        value.load_state_dict(payload["value_state"])
        bank.load_state_dict(payload["discriminator_state"])
    except (RuntimeError, KeyError) as exc:
        raise CheckpointError(f"checkpoint parameters do not fit its config: {exc}") from exc
    return config, payload["iteration"], policy, value, bank
