"""End-to-end training loop.

Each iteration: collect a vectorized rollout under the current policy
(intrinsic skill reward scored on the post-step observation with the
discriminator snapshot taken at collection time), push samples into the
replay buffer, take discriminator cross-entropy steps on buffer samples,
then PPO on the rollout.  All randomness flows from explicit per-purpose
generators derived from the training seed, so a (config, seed) pair fully
determines the run.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from skillab.checkpoint import TRAIN_DTYPE, build_networks, save_checkpoint
from skillab.config import PpoConfig, RunConfig
from skillab.core import ChannelLayout, TrainingError
from skillab.discriminator import skill_reward, update_discriminators
from skillab.env import EnvParams, VecToyEnv
from skillab.reward import regularization_reward, total_reward

__all__ = [
    "PpoConfig",
    "ReplayBuffer",
    "RolloutBatch",
    "TrainResult",
    "Trainer",
    "compute_gae",
    "ppo_update",
    "sample_skills",
    "train",
]


class ReplayBuffer:
    """Fixed-capacity ring of (motion obs, policy obs, skill) samples.

    Oldest samples are overwritten first; sampling is uniform with
    replacement.
    """

    def __init__(self, capacity: int, motion_dim: int, policy_dim: int):
        self.capacity = capacity
        self.motion = np.zeros((capacity, motion_dim))
        self.policy = np.zeros((capacity, policy_dim))
        self.skills = np.zeros(capacity, dtype=np.int64)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add_batch(self, motion: np.ndarray, policy: np.ndarray, skills: np.ndarray) -> None:
        n = motion.shape[0]
        if n > self.capacity:  # keep only the newest samples
            motion, policy, skills = motion[-self.capacity :], policy[-self.capacity :], skills[-self.capacity :]
            n = self.capacity
        idx = (self.cursor + np.arange(n)) % self.capacity
        self.motion[idx] = motion
        self.policy[idx] = policy
        self.skills[idx] = skills
        self.cursor = int((self.cursor + n) % self.capacity)
        self.size = int(min(self.size + n, self.capacity))

    def sample(self, n: int, rng: np.random.Generator):
        if self.size == 0:
            raise TrainingError("sampling from an empty replay buffer")
        idx = rng.integers(0, self.size, size=n)
        return self.motion[idx], self.policy[idx], self.skills[idx]


def sample_skills(num_envs: int, num_skills: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform skill indices, one per environment."""
    if num_skills < 1:
        raise ValueError(f"num_skills must be >= 1, got {num_skills}")
    return rng.integers(0, num_skills, size=num_envs)


@dataclass
class RolloutBatch:
    """Time-major (T, E) rollout arrays.

    ``motion_obs`` is the post-step observation each reward was scored on;
    ``policy_obs`` is the observation the action was computed from.
    ``next_values`` holds V of the true next observation before any reset,
    so GAE can bootstrap through truncations.
    """

    policy_obs: np.ndarray
    motion_obs: np.ndarray
    skills: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    skill_rewards: np.ndarray
    reg_rewards: np.ndarray
    rewards: np.ndarray
    terminated: np.ndarray
    done: np.ndarray

    def __post_init__(self):
        t, e = self.rewards.shape
        for name in (
            "policy_obs", "motion_obs", "skills", "actions", "log_probs",
            "values", "next_values", "skill_rewards", "reg_rewards",
            "terminated", "done",
        ):
            arr = getattr(self, name)
            if arr.shape[:2] != (t, e):
                raise TrainingError(f"rollout array {name} has shape {arr.shape}, expected ({t}, {e}, ...)")
        if not np.all(np.isfinite(self.log_probs)):
            raise TrainingError("non-finite log-probs in rollout")

    @property
    def horizon(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_envs(self) -> int:
        return self.rewards.shape[1]


def compute_gae(batch: RolloutBatch, gamma: float, lam: float):
    """Masked generalized advantage estimation.

    delta_t = r_t + gamma * V(s_{t+1}) * (1 - terminated_t) - V(s_t)
    A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}

    Truncations bootstrap through next_values; terminations zero the tail.
    Returns (advantages, returns) with returns = advantages + values.
    """
    t_len = batch.horizon
    adv = np.zeros_like(batch.rewards)
    running = np.zeros(batch.num_envs)
    not_term = 1.0 - batch.terminated.astype(np.float64)
    not_done = 1.0 - batch.done.astype(np.float64)
    for t in range(t_len - 1, -1, -1):
        delta = (
            batch.rewards[t]
            + gamma * batch.next_values[t] * not_term[t]
            - batch.values[t]
        )
        running = delta + gamma * lam * not_done[t] * running
        adv[t] = running
    return adv, adv + batch.values


def ppo_update(
    policy,
    value_net,
    optimizer: torch.optim.Optimizer,
    inputs: torch.Tensor,
    actions: torch.Tensor,
    old_log_probs: torch.Tensor,
    advantages: torch.Tensor,
    returns: torch.Tensor,
    cfg: PpoConfig,
    shuffle_generator: torch.Generator,
) -> dict:
    """Clipped-surrogate update over shuffled minibatches.

    Advantages are normalized once over the whole batch (mean 0, std 1)
    before the epoch loop.  Aborts with TrainingError on a non-finite loss.
    """
    n = inputs.shape[0]
    adv = (advantages - advantages.mean()) / (advantages.std(unbiased=False) + 1e-8)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_fraction": 0.0}
    count = 0
    for _ in range(cfg.epochs):
        perm = torch.randperm(n, generator=shuffle_generator)
        for chunk in torch.chunk(perm, cfg.minibatches):
            logp, entropy = policy.log_prob_and_entropy(inputs[chunk], actions[chunk])
            ratio = torch.exp(logp - old_log_probs[chunk])
            clipped = torch.clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
            mb_adv = adv[chunk]
            policy_loss = -torch.min(ratio * mb_adv, clipped * mb_adv).mean()
            values = value_net(inputs[chunk]).squeeze(-1)
            value_loss = ((values - returns[chunk]) ** 2).mean()
            loss = (
                policy_loss
                + cfg.value_loss_coef * value_loss
                - cfg.entropy_coef * entropy.mean()
            )
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite PPO loss (policy {policy_loss.item()}, value {value_loss.item()})"
                )
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(
                [p for g in optimizer.param_groups for p in g["params"]], cfg.max_grad_norm
            )
            optimizer.step()
            with torch.no_grad():
                stats["policy_loss"] += policy_loss.item()
                stats["value_loss"] += value_loss.item()
                stats["entropy"] += entropy.mean().item()
                stats["approx_kl"] += (old_log_probs[chunk] - logp).mean().item()
                stats["clip_fraction"] += ((ratio - 1.0).abs() > cfg.clip_ratio).double().mean().item()
            count += 1
    return {k: v / count for k, v in stats.items()}


@dataclass
class TrainResult:
    metrics: list[dict]
    checkpoint_path: Path | None
    run_dir: Path | None


class Trainer:
    """Owns networks, environments, buffers and RNG streams for one run.

    ``reward_override`` (testing hook) replaces the skill+regularization
    reward with a callable of (motion_obs, signals) -> per-env rewards.
    """

    def __init__(self, config: RunConfig, reward_override=None):
        config.validate()
        self.config = config
        self.layout = ChannelLayout(config.env.joint_count)
        self.params = EnvParams.create(
            config.env.joint_count,
            env_seed=config.env.env_seed,
            dt=config.env.dt,
            kp=config.env.kp,
            kd=config.env.kd,
            joint_limit=config.env.joint_limit,
            action_limit=config.env.action_limit,
            tilt_termination_threshold=config.env.tilt_termination_threshold,
            max_episode_steps=config.env.max_episode_steps,
            twist_gain=config.env.twist_gain,
        )
        self.num_envs = config.training.num_envs
        self.num_skills = config.skill.num_skills
        self.env = VecToyEnv(self.params, self.num_envs)
        self.reward_override = reward_override

        seeds = np.random.SeedSequence(config.training.seed).spawn(5)
        self.skills_rng = np.random.Generator(np.random.PCG64(seeds[0]))
        self.buffer_rng = np.random.Generator(np.random.PCG64(seeds[1]))
        init_seed = int(seeds[2].generate_state(1)[0])
        self.action_gen = torch.Generator().manual_seed(int(seeds[3].generate_state(1)[0]))
        self.shuffle_gen = torch.Generator().manual_seed(int(seeds[4].generate_state(1)[0]))

        self.policy, self.value, self.bank = build_networks(config, seed=init_seed)
        self.ppo_optimizer = torch.optim.Adam(
            list(self.policy.parameters()) + list(self.value.parameters()),
            lr=config.ppo.learning_rate,
            foreach=True,
        )
        self.disc_optimizer = torch.optim.Adam(
            self.bank.parameters(), lr=config.discriminator.learning_rate, foreach=True
        )
        self.buffer = ReplayBuffer(
            config.discriminator.buffer_capacity, self.layout.motion_dim, self.layout.policy_dim
        )
        self.skills = sample_skills(self.num_envs, self.num_skills, self.skills_rng)
        self._skill_eye = np.eye(self.num_skills)
        self._episode_return = np.zeros(self.num_envs)
        self._last_episode_reward = 0.0

    # -- rollout ----------------------------------------------------------

    def _net_inputs(self, policy_obs: np.ndarray) -> torch.Tensor:
        x = np.concatenate([policy_obs, self._skill_eye[self.skills]], axis=-1)
        return torch.as_tensor(x, dtype=TRAIN_DTYPE)

    def collect_rollouts(self, horizon: int | None = None) -> RolloutBatch:
        """Step all environments ``horizon`` times under the current policy.

        Terminated or truncated environments reset in place with freshly
        sampled skills.  Only action sampling runs inside the stepping
        loop; values, next-state values and both reward components are
        computed afterwards in batched passes over the stacked arrays (the
        results feed GAE/PPO only, never the rollout's control flow).
        Skill rewards use the discriminator parameters as of collection
        time; they are not recomputed after discriminator updates.
        """
        t_len = horizon or self.config.ppo.steps_per_iteration
        e = self.num_envs
        j = self.params.joint_count
        policy_obs = np.zeros((t_len, e, self.layout.policy_dim))
        next_policy_obs = np.zeros((t_len, e, self.layout.policy_dim))
        motion_obs = np.zeros((t_len, e, self.layout.motion_dim))
        skills = np.zeros((t_len, e), dtype=np.int64)
        actions = np.zeros((t_len, e, j))
        log_probs = np.zeros((t_len, e))
        torques = np.zeros((t_len, e, j))
        accels = np.zeros((t_len, e, j))
        clipped = np.zeros((t_len, e, j))
        prev_clipped = np.zeros((t_len, e, j))
        collisions = np.zeros((t_len, e))
        terminated = np.zeros((t_len, e), dtype=bool)
        done = np.zeros((t_len, e), dtype=bool)

        for t in range(t_len):
            policy_obs[t] = self.env.policy_observe()
            act, logp = self.policy.act(self._net_inputs(policy_obs[t]), self.action_gen)
            actions[t] = act.numpy()
            log_probs[t] = logp.numpy()
            skills[t] = self.skills
            obs_next, signals, term, trunc = self.env.step(actions[t])
            motion_obs[t] = obs_next
            torques[t] = signals["torque"]
            accels[t] = signals["joint_accel"]
            clipped[t] = signals["action"]
            prev_clipped[t] = signals["prev_action"]
            collisions[t] = signals["step_collisions"]
            terminated[t] = term
            done[t] = term | trunc
            next_policy_obs[t] = self.env.policy_observe()  # pre-reset
            if done[t].any():
                mask = done[t]
                self.env.reset_envs(mask)
                self.skills = self.skills.copy()
                self.skills[mask] = sample_skills(
                    int(mask.sum()), self.num_skills, self.skills_rng
                )

        flat = lambda a: a.reshape(t_len * e, *a.shape[2:])
        onehot = self._skill_eye[flat(skills)]
        with torch.no_grad():
            values = (
                self.value(
                    torch.as_tensor(
                        np.concatenate([flat(policy_obs), onehot], axis=-1),
                        dtype=TRAIN_DTYPE,
                    )
                )
                .numpy()
                .reshape(t_len, e)
            )
            next_values = (
                self.value(
                    torch.as_tensor(
                        np.concatenate([flat(next_policy_obs), onehot], axis=-1),
                        dtype=TRAIN_DTYPE,
                    )
                )
                .numpy()
                .reshape(t_len, e)
            )
        r_skill = skill_reward(self.bank, flat(motion_obs), flat(skills)).reshape(t_len, e)
        signals = {
            "torque": torques,
            "joint_accel": accels,
            "action": clipped,
            "prev_action": prev_clipped,
            "step_collisions": collisions,
        }
        r_reg = regularization_reward(
            self.layout, motion_obs, torques, accels, clipped, prev_clipped,
            collisions, self.config.reward,
        )
        if self.reward_override is not None:
            rewards = np.asarray(self.reward_override(motion_obs, signals), dtype=np.float64)
        else:
            rewards = total_reward(r_skill, r_reg, self.config.reward)

        self.buffer.add_batch(flat(motion_obs), flat(policy_obs), flat(skills))

        # episode-return bookkeeping over the stacked rewards
        finished_returns = []
        for t in range(t_len):
            self._episode_return += rewards[t]
            if done[t].any():
                finished_returns.extend(self._episode_return[done[t]].tolist())
                self._episode_return[done[t]] = 0.0
        if finished_returns:
            self._last_episode_reward = float(np.mean(finished_returns))

        return RolloutBatch(
            policy_obs=policy_obs,
            motion_obs=motion_obs,
            skills=skills,
            actions=actions,
            log_probs=log_probs,
            values=values.astype(np.float64),
            next_values=next_values.astype(np.float64),
            skill_rewards=r_skill,
            reg_rewards=r_reg,
            rewards=rewards,
            terminated=terminated,
            done=done,
        )

    # -- updates ----------------------------------------------------------

    def update_discriminators(self):
        """Cross-entropy steps on replay samples; returns mean per-head
        losses and accuracies across this iteration's updates."""
        cfg = self.config.discriminator
        losses, accuracies = [], []
        for _ in range(cfg.updates_per_iteration):
            motion, _, skills = self.buffer.sample(cfg.batch_size, self.buffer_rng)
            step_losses, step_accs = update_discriminators(
                self.bank, self.disc_optimizer, motion, skills
            )
            losses.append(step_losses)
            accuracies.append(step_accs)
        return (
            np.mean(np.array(losses), axis=0).tolist(),
            np.mean(np.array(accuracies), axis=0).tolist(),
        )

    def ppo_step(self, batch: RolloutBatch) -> dict:
        advantages, returns = compute_gae(
            batch, self.config.ppo.gamma, self.config.ppo.gae_lambda
        )
        t_len, e = batch.rewards.shape
        onehot = self._skill_eye[batch.skills.reshape(-1)]
        inputs = torch.as_tensor(
            np.concatenate([batch.policy_obs.reshape(t_len * e, -1), onehot], axis=-1),
            dtype=TRAIN_DTYPE,
        )
        return ppo_update(
            self.policy,
            self.value,
            self.ppo_optimizer,
            inputs,
            torch.as_tensor(batch.actions.reshape(t_len * e, -1), dtype=TRAIN_DTYPE),
            torch.as_tensor(batch.log_probs.reshape(-1), dtype=TRAIN_DTYPE),
            torch.as_tensor(advantages.reshape(-1), dtype=TRAIN_DTYPE),
            torch.as_tensor(returns.reshape(-1), dtype=TRAIN_DTYPE),
            self.config.ppo,
            self.shuffle_gen,
        )

    # -- orchestration -----------------------------------------------------

    def train_iteration(self) -> dict:
        batch = self.collect_rollouts()
        disc_losses, disc_accs = self.update_discriminators()
        ppo_stats = self.ppo_step(batch)
        record = {
            "mean_reward": float(batch.rewards.mean()),
            "mean_episode_reward": self._last_episode_reward,
            "mean_skill_reward": float(batch.skill_rewards.mean()),
            "mean_reg_reward": float(batch.reg_rewards.mean()),
            "disc_loss": [float(x) for x in disc_losses],
            "disc_accuracy": [float(x) for x in disc_accs],
        }
        record.update({k: float(v) for k, v in ppo_stats.items()})
        return record

    def header(self) -> dict:
        return {
            "type": "header",
            "motion_dim": self.layout.motion_dim,
            "policy_dim": self.layout.policy_dim,
            "joint_count": self.layout.joint_count,
            "num_skills": self.num_skills,
            "num_discriminators": self.bank.assignment.num_discriminators,
            "locomotion_map_checksum": self.params.map_checksum(),
            "reward_weights": {
                "skill": self.config.reward.skill,
                "regularization": self.config.reward.regularization,
                "lin_vel_z": self.config.reward.lin_vel_z,
                "ang_vel_xy": self.config.reward.ang_vel_xy,
                "torque": self.config.reward.torque,
                "joint_accel": self.config.reward.joint_accel,
                "action_rate": self.config.reward.action_rate,
                "collision": self.config.reward.collision,
            },
        }


def train(
    config: RunConfig,
    run_dir: str | Path | None = None,
    reward_override=None,
    progress: bool = False,
) -> TrainResult:
    """Run the full loop; write metrics, timing, config echo and
    checkpoints into ``run_dir`` when given.

    The metrics log (metrics.jsonl) contains only deterministic fields, so
    identical (config, seed) runs produce byte-identical logs; wall-clock
    timing goes to a separate timing.jsonl.
    """
    torch.set_num_threads(1)  # keeps reductions bit-stable across runs
    trainer = Trainer(config, reward_override=reward_override)
    metrics: list[dict] = []
    metrics_fh = timing_fh = None
    checkpoint_path = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        from skillab.config import save_config

        save_config(config, run_dir / "config.yaml")
        metrics_fh = open(run_dir / "metrics.jsonl", "w")
        timing_fh = open(run_dir / "timing.jsonl", "w")
        print(json.dumps(trainer.header()), file=metrics_fh)
    start = time.monotonic()
    try:
        for iteration in range(1, config.training.iterations + 1):
            try:
                record = {"iteration": iteration, **trainer.train_iteration()}
            except Exception as exc:
                raise TrainingError(
                    f"iteration {iteration} failed (seed {config.training.seed}): {exc}"
                ) from exc
            metrics.append(record)
            if metrics_fh:
                print(json.dumps(record), file=metrics_fh)
            if timing_fh:
                print(
                    json.dumps({"iteration": iteration, "wall_time": time.monotonic() - start}),
                    file=timing_fh,
                )
            if progress and iteration % 50 == 0:
                print(
                    f"iter {iteration:5d}  reward {record['mean_reward']:+.4f}  "
                    f"skill {record['mean_skill_reward']:+.4f}  "
                    f"acc {['%.2f' % a for a in record['disc_accuracy']]}"
                )
            if run_dir is not None and (
                iteration % config.training.checkpoint_every == 0
                or iteration == config.training.iterations
            ):
                checkpoint_path = run_dir / "checkpoints" / f"ckpt_{iteration:06d}.pt"
                save_checkpoint(
                    checkpoint_path, config, iteration, trainer.policy, trainer.value, trainer.bank
                )
    finally:
        if metrics_fh:
            metrics_fh.close()
        if timing_fh:
            timing_fh.close()
    return TrainResult(metrics=metrics, checkpoint_path=checkpoint_path, run_dir=run_dir)
