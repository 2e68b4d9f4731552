"""Multi-discriminator intrinsic reward.

Each discriminator head classifies the active skill from its own disjoint
slice of the motion observation; the intrinsic reward averages the heads'
log-probabilities of the true skill against a uniform prior:

    r = (1/N_d) * sum_i log q_i(k | o_i)  -  log p(k),      p(k) = 1/N_k.

Heads are trained with cross-entropy on replay-buffer samples and are fully
independent of one another (disjoint inputs, disjoint parameters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from skillab.core import (
    ChannelLayout,
    ConfigError,
    MotionObservation,
    SkillCode,
    TrainingError,
    split_channels,
)
from skillab.nets import DTYPE, Mlp, MlpSpec

# Probabilities are floored at 1e-8 inside the reward so early-training
# misclassifications cannot produce unbounded negative spikes.
LOG_PROB_FLOOR = math.log(1e-8)


@dataclass(frozen=True)
class DiscriminatorAssignment:
    """Partition of motion-observation channels across discriminators.

    Subsets must be pairwise disjoint.  The default three-way split covers
    every channel; single-discriminator baselines may deliberately watch
    only part of the observation, so full coverage is reported via
    ``covers_all`` rather than enforced.
    """

    subsets: tuple[tuple[str, ...], ...]
    layout: ChannelLayout

    def __post_init__(self):
        subsets = tuple(tuple(s) for s in self.subsets)
        object.__setattr__(self, "subsets", subsets)
        if not subsets:
            raise ConfigError("assignment needs at least one subset")
        seen: set[str] = set()
        for subset in subsets:
            if not subset:
                raise ConfigError("empty channel subset in assignment")
            self.layout._check_names(subset)
            overlap = seen.intersection(subset)
            if overlap:
                raise ConfigError(
                    f"channels {sorted(overlap)} assigned to more than one "
                    f"discriminator"
                )
            seen.update(subset)

    @property
    def num_discriminators(self) -> int:
        return len(self.subsets)

    @property
    def covers_all(self) -> bool:
        return {n for s in self.subsets for n in s} == {"v", "omega", "gravity", "q", "dq"}

    def widths(self) -> tuple[int, ...]:
        return tuple(self.layout.width(s) for s in self.subsets)


def default_assignment(layout: ChannelLayout) -> DiscriminatorAssignment:
    """The three-way split: base twist, projected gravity, joint state."""
    return DiscriminatorAssignment(
        (("v", "omega"), ("gravity",), ("q", "dq")), layout
    )


class DiscriminatorBank(torch.nn.Module):
    """One classifier head per assigned observation subspace."""

    def __init__(
        self,
        assignment: DiscriminatorAssignment,
        num_skills: int,
        generator: torch.Generator,
        hidden_dims: tuple[int, ...] = (256, 256, 128),
        dtype=DTYPE,
    ):
        super().__init__()
        self.assignment = assignment
        self.num_skills = num_skills
        self.dtype = dtype
        self.heads = torch.nn.ModuleList(
            Mlp(MlpSpec(width, num_skills, hidden_dims), generator, dtype)
            for width in assignment.widths()
        )

    def subspace_inputs(self, motion_obs: np.ndarray) -> list[torch.Tensor]:
        """Slice a (batched) motion observation into per-head inputs."""
        return [
            torch.as_tensor(
                split_channels(motion_obs, subset, self.assignment.layout),
                dtype=self.dtype,
            )
            for subset in self.assignment.subsets
        ]


def skill_logprobs(head: Mlp, subspace_obs: torch.Tensor) -> torch.Tensor:
    """Log-probability distribution over skills for one head.

    Logits are promoted to float64 before the log-softmax so the
    distribution is exactly normalized regardless of the head's compute
    dtype.
    """
    return F.log_softmax(head(subspace_obs).double(), dim=-1)


def skill_reward(bank: DiscriminatorBank, motion_obs, skill):
    """Intrinsic skill-discovery reward.

    Accepts a single (MotionObservation, SkillCode) pair or batched arrays
    (motion observations with leading batch dims, integer skill indices).
    Computed as the mean over heads of log q_i(k) - log p(k), with per-head
    log-probabilities floored at log(1e-8).  All reward arithmetic runs in
    float64 whatever the heads' compute dtype, so the analytic identities
    (zero at uniform heads, log N_k ceiling) hold to tight tolerance.
    """
    single = isinstance(motion_obs, MotionObservation)
    if single:
        motion_obs = motion_obs.values
        skill = skill.index if isinstance(skill, SkillCode) else skill
    m = np.asarray(motion_obs)
    k = torch.as_tensor(np.asarray(skill), dtype=torch.long)
    if torch.any(k < 0) or torch.any(k >= bank.num_skills):
        raise ValueError(f"skill index out of range [0, {bank.num_skills})")
    log_prior = math.log(bank.num_skills)  # -log p(k) for the uniform prior
    with torch.no_grad():
        terms = []
        for head, x in zip(bank.heads, bank.subspace_inputs(m)):
            logp = skill_logprobs(head, x)
            logp_k = torch.gather(logp, -1, k.unsqueeze(-1)).squeeze(-1)
            terms.append(logp_k.clamp_min(LOG_PROB_FLOOR) + log_prior)
        r = torch.stack(terms, dim=0).mean(dim=0)
    out = r.numpy()
    return float(out) if single else out


def update_discriminators(
    bank: DiscriminatorBank,
    optimizer: torch.optim.Optimizer,
    motion_obs: np.ndarray,
    skills: np.ndarray,
):
    """One cross-entropy gradient step per head on a labelled batch.

    Heads have disjoint parameters and inputs, so summing their losses into
    one backward pass updates each independently.  Returns per-head losses
    and accuracies.
    """
    m = np.asarray(motion_obs)
    if m.ndim != 2 or m.shape[0] == 0:
        raise TrainingError(f"need a non-empty 2-D batch, got shape {m.shape}")
    k = torch.as_tensor(np.asarray(skills), dtype=torch.long)
    losses, accuracies = [], []
    total = None
    for head, x in zip(bank.heads, bank.subspace_inputs(m)):
        logits = head(x)
        loss = F.cross_entropy(logits, k)
        losses.append(float(loss.detach()))
        accuracies.append(float((logits.detach().argmax(-1) == k).double().mean()))
        total = loss if total is None else total + loss
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return losses, accuracies
