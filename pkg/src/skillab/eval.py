"""Skill evaluation: deterministic rollouts, per-dimension normalization,
bin-occupancy coverage, and the two ablation suites.

Coverage protocol: every skill runs for a fixed horizon under the mean
action (no exploration noise); the recorded channels are pooled across all
runs under comparison, min-max normalized per dimension, discretized into
equal bins, and scored by the fraction of occupied bins per dimension,
averaged over dimensions.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from skillab.checkpoint import TRAIN_DTYPE, load_checkpoint
from skillab.config import RunConfig
from skillab.core import ConfigError, LayoutError, split_channels
from skillab.env import EnvParams, VecToyEnv
from skillab.trainer import train

DISCRIMINATOR_VARIANTS = {
    "SD1": (("v", "omega"),),
    "SD2": (("v", "omega", "gravity"),),
    "SD3": (("v", "omega", "gravity", "q", "dq"),),
    "MD": (("v", "omega"), ("gravity",), ("q", "dq")),
}

POLICY_VARIANTS = {"MLP": "mlp", "MoE": "moe", "OMoE": "omoe"}

SUITES = {"discriminator": tuple(DISCRIMINATOR_VARIANTS), "policy": tuple(POLICY_VARIANTS)}


def channel_labels(layout, channels) -> list[str]:
    names = {"v": ["v_x", "v_y", "v_z"], "omega": ["w_x", "w_y", "w_z"],
             "gravity": ["g_x", "g_y", "g_z"]}
    labels = []
    for ch in channels:
        if ch in names:
            labels.extend(names[ch])
        else:
            prefix = {"q": "q", "dq": "dq"}[ch]
            labels.extend(f"{prefix}_{i + 1}" for i in range(layout.joint_count))
    return labels


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------


def rollout_skills(
    policy,
    params: EnvParams,
    num_skills: int,
    duration_steps: int = 1000,
) -> dict[int, dict[str, np.ndarray]]:
    """Run every skill once under the deterministic action mean.

    All skills step in one vectorized batch.  A skill's recording stops at
    termination (tipping over); otherwise it spans the full horizon.
    Returns per skill: motion observations (post-step), applied clipped
    actions, both time-major.
    """
    eval_params = replace(params, max_episode_steps=duration_steps)
    env = VecToyEnv(eval_params, num_skills)
    skills = np.arange(num_skills)
    eye = np.eye(num_skills)
    alive = np.ones(num_skills, dtype=bool)
    states = np.zeros((duration_steps, num_skills, eval_params.layout.motion_dim))
    actions = np.zeros((duration_steps, num_skills, eval_params.joint_count))
    lengths = np.zeros(num_skills, dtype=np.int64)
    with torch.no_grad():
        for t in range(duration_steps):
            x = np.concatenate([env.policy_observe(), eye[skills]], axis=-1)
            mean = policy.mean_action(torch.as_tensor(x, dtype=TRAIN_DTYPE)).numpy()
            obs, signals, terminated, _ = env.step(mean)
            states[t] = obs
            actions[t] = signals["action"]
            lengths[alive] = t + 1
            alive = alive & ~terminated
            if not alive.any():
                break
    return {
        int(k): {"states": states[: lengths[k], k], "actions": actions[: lengths[k], k]}
        for k in skills
    }


def write_trajectories(
    trajectories: dict, layout, out_dir: str | Path, dt: float
) -> list[Path]:
    """One delimited text file per skill with the full column set."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    j = layout.joint_count
    header = ["t", "skill", "v_x", "v_y", "v_z", "w_x", "w_y", "w_z", "g_x", "g_y", "g_z"]
    header += [f"q_{i + 1}" for i in range(j)]
    header += [f"dq_{i + 1}" for i in range(j)]
    header += [f"a_{i + 1}" for i in range(j)]
    paths = []
    for skill, data in sorted(trajectories.items()):
        n = data["states"].shape[0]
        t_col = (np.arange(1, n + 1) * dt)[:, None]
        skill_col = np.full((n, 1), skill, dtype=np.float64)
        table = np.concatenate([t_col, skill_col, data["states"], data["actions"]], axis=1)
        path = out_dir / f"skill_{skill:03d}.csv"
        np.savetxt(path, table, delimiter=",", header=",".join(header), comments="")
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# Normalization and coverage
# ---------------------------------------------------------------------------


def normalize_per_dimension(data: np.ndarray) -> np.ndarray:
    """Min-max scale each column of the pooled data into [0, 1].

    Constant columns map to 0.5.  Callers comparing several algorithms must
    pool their samples first so every dataset shares one reference range.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ConfigError(f"normalize_per_dimension needs a non-empty N x D matrix, got {data.shape}")
    lo = data.min(axis=0)
    hi = data.max(axis=0)
    span = hi - lo
    constant = span == 0
    safe_span = np.where(constant, 1.0, span)
    out = (data - lo) / safe_span
    out[:, constant] = 0.5
    return out


@dataclass(frozen=True)
class CoverageReport:
    """Occupied-bin fractions per normalized dimension."""

    per_dim_ratios: tuple[float, ...]
    mean_ratio: float
    bins: int
    labels: tuple[str, ...]
    sample_count: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = [f"coverage over {self.sample_count} samples, {self.bins} bins"]
        for label, ratio in zip(self.labels, self.per_dim_ratios):
            lines.append(f"  {label:>6s}  {ratio:.4f}")
        lines.append(f"  {'mean':>6s}  {self.mean_ratio:.4f}")
        return "\n".join(lines)


def coverage(normalized: np.ndarray, bins: int = 50, labels=None) -> CoverageReport:
    """Fraction of occupied bins per dimension, averaged across dimensions.

    Bin index is min(floor(x * bins), bins - 1): samples exactly at 1.0
    land in the last bin.
    """
    data = np.asarray(normalized, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ConfigError(f"coverage needs a non-empty N x D matrix, got {data.shape}")
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")
    if data.min() < 0.0 or data.max() > 1.0:
        raise LayoutError(
            f"coverage expects normalized data in [0, 1]; "
            f"got range [{data.min()}, {data.max()}]"
        )
    idx = np.minimum((data * bins).astype(np.int64), bins - 1)
    ratios = []
    for d in range(data.shape[1]):
        ratios.append(float(len(np.unique(idx[:, d]))) / bins)
    labels = tuple(labels) if labels is not None else tuple(f"dim_{d}" for d in range(data.shape[1]))
    if len(labels) != data.shape[1]:
        raise ConfigError(f"{len(labels)} labels for {data.shape[1]} dimensions")
    return CoverageReport(
        per_dim_ratios=tuple(ratios),
        mean_ratio=float(np.mean(ratios)),
        bins=bins,
        labels=labels,
        sample_count=data.shape[0],
    )


def coverage_states(trajectories: dict, layout, channels) -> np.ndarray:
    """Stack the requested channels of all skills into one N x D matrix."""
    parts = [
        split_channels(data["states"], channels, layout)
        for _, data in sorted(trajectories.items())
        if data["states"].shape[0] > 0
    ]
    if not parts:
        raise ConfigError("no trajectory samples to evaluate")
    return np.concatenate(parts, axis=0)


def evaluate_checkpoint(
    checkpoint_path: str | Path,
    out_dir: str | Path | None = None,
    bins: int | None = None,
    duration_steps: int | None = None,
    channels=None,
) -> CoverageReport:
    """Full single-checkpoint protocol: rollout, normalize, coverage.

    Normalization pools across this checkpoint's skills only; use
    run_ablation for cross-algorithm comparisons.
    """
    config, _, policy, _, _ = load_checkpoint(checkpoint_path)
    params = trainer_params(config)
    bins = bins or config.eval.bins
    duration = duration_steps or config.eval.duration_steps
    channels = tuple(channels or config.eval.coverage_channels)
    trajectories = rollout_skills(policy, params, config.skill.num_skills, duration)
    layout = params.layout
    states = coverage_states(trajectories, layout, channels)
    report = coverage(
        normalize_per_dimension(states), bins, labels=channel_labels(layout, channels)
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_trajectories(trajectories, layout, out_dir / "trajectories", params.dt)
        (out_dir / "coverage.txt").write_text(report.to_text() + "\n")
        (out_dir / "coverage.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return report


def trainer_params(config: RunConfig) -> EnvParams:
    return EnvParams.create(
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


# ---------------------------------------------------------------------------
# Ablation suites
# ---------------------------------------------------------------------------


def variant_config(suite: str, variant: str, base: RunConfig) -> RunConfig:
    """Config for one ablation variant; unrelated sections untouched."""
    cfg = RunConfig.from_dict(base.to_dict())
    if suite == "discriminator":
        cfg.discriminator = dataclasses.replace(
            cfg.discriminator, assignment=DISCRIMINATOR_VARIANTS[variant]
        )
    elif suite == "policy":
        # policy variants all train against the multi-discriminator module
        cfg.policy = dataclasses.replace(cfg.policy, architecture=POLICY_VARIANTS[variant])
        cfg.discriminator = dataclasses.replace(
            cfg.discriminator, assignment=DISCRIMINATOR_VARIANTS["MD"]
        )
    else:
        raise ConfigError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    return cfg.validate()


@dataclass
class AblationRun:
    variant: str
    seed: int
    run_dir: Path
    coverage_mean: float | None = None
    per_dim_ratios: tuple[float, ...] | None = None
    final_skill_reward: float | None = None
    error: str | None = None


def read_metric_curve(run_dir: str | Path, field: str = "mean_skill_reward") -> list[float]:
    """Per-iteration values of one metric from a run's metrics log."""
    values = []
    for line in (Path(run_dir) / "metrics.jsonl").read_text().splitlines():
        record = json.loads(line)
        if record.get("type") != "header":
            values.append(record[field])
    return values


@dataclass
class AblationReport:
    suite: str
    runs: list[AblationRun]
    variant_mean_coverage: dict[str, float]
    bins: int
    wall_time: float
    out_dir: Path

    def curve(self, variant: str, seed: int, field: str = "mean_skill_reward") -> list[float]:
        return read_metric_curve(Path(self.out_dir) / f"{variant}_seed{seed}", field)


def run_ablation(
    suite: str,
    base_config: RunConfig,
    seeds,
    out_dir: str | Path,
    variants=None,
    reuse: bool = True,
    progress: bool = False,
) -> AblationReport:
    """Train every (variant, seed), evaluate coverage with pooled
    normalization, emit comparison tables and plot data.

    ``reuse`` skips training when a finished run with the identical config
    already sits in the run directory (runs are deterministic, so the
    result is the same).  A failed variant is recorded and the suite
    continues.
    """
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    chosen = list(variants) if variants else list(SUITES[suite])
    unknown = set(chosen) - set(SUITES[suite])
    if unknown:
        raise ConfigError(f"unknown variants {sorted(unknown)} for suite {suite!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()

    runs: list[AblationRun] = []
    states_per_run: dict[tuple[str, int], np.ndarray] = {}
    layout = None
    channels = tuple(base_config.eval.coverage_channels)
    for variant in chosen:
        cfg_variant = variant_config(suite, variant, base_config)
        for seed in seeds:
            cfg = RunConfig.from_dict(cfg_variant.to_dict())
            cfg.training.seed = int(seed)
            run_dir = out_dir / f"{variant}_seed{seed}"
            run = AblationRun(variant=variant, seed=int(seed), run_dir=run_dir)
            runs.append(run)
            try:
                ckpt = _train_or_reuse(cfg, run_dir, reuse, progress)
                config, _, policy, _, _ = load_checkpoint(ckpt)
                params = trainer_params(config)
                layout = params.layout
                trajectories = rollout_skills(
                    policy, params, config.skill.num_skills, config.eval.duration_steps
                )
                states_per_run[(variant, run.seed)] = coverage_states(
                    trajectories, layout, channels
                )
                write_trajectories(
                    trajectories, layout, run_dir / "trajectories", params.dt
                )
                run.final_skill_reward = read_metric_curve(run_dir)[-1]
            except Exception as exc:  # record and continue with the suite
                run.error = f"{type(exc).__name__}: {exc}"
                if progress:
                    print(f"[{variant} seed {seed}] FAILED: {run.error}")
    # pooled normalization over every successful run
    good = [r for r in runs if r.error is None]
    if good:
        pooled = np.concatenate([states_per_run[(r.variant, r.seed)] for r in good], axis=0)
        normalized = normalize_per_dimension(pooled)
        labels = channel_labels(layout, channels)
        offset = 0
        for r in good:
            n = states_per_run[(r.variant, r.seed)].shape[0]
            report = coverage(normalized[offset : offset + n], base_config.eval.bins, labels)
            r.coverage_mean = report.mean_ratio
            r.per_dim_ratios = report.per_dim_ratios
            offset += n
        _write_scatter(out_dir, good, states_per_run, normalized, labels)
    variant_means = {}
    for variant in chosen:
        vals = [r.coverage_mean for r in runs if r.variant == variant and r.coverage_mean is not None]
        if vals:
            variant_means[variant] = float(np.mean(vals))
    report = AblationReport(
        suite=suite,
        runs=runs,
        variant_mean_coverage=variant_means,
        bins=base_config.eval.bins,
        wall_time=time.monotonic() - started,
        out_dir=out_dir,
    )
    _write_tables(report)
    _write_curves(report)
    return report


def _train_or_reuse(cfg: RunConfig, run_dir: Path, reuse: bool, progress: bool) -> Path:
    final = run_dir / "checkpoints" / f"ckpt_{cfg.training.iterations:06d}.pt"
    if reuse and final.exists() and (run_dir / "config.yaml").exists():
        import yaml

        saved = yaml.safe_load((run_dir / "config.yaml").read_text())
        if RunConfig.from_dict(saved).to_dict() == cfg.to_dict():
            if progress:
                print(f"[{run_dir.name}] reusing finished run")
            return final
    result = train(cfg, run_dir=run_dir, progress=progress)
    return result.checkpoint_path


def _write_tables(report: AblationReport) -> None:
    lines = [f"{report.suite} suite coverage ({report.bins} bins)"]
    lines.append(f"{'variant':>8s} {'seed':>5s} {'coverage':>9s} {'final r_skill':>14s}")
    for r in report.runs:
        cov = f"{r.coverage_mean:.4f}" if r.coverage_mean is not None else "failed"
        rew = f"{r.final_skill_reward:+.4f}" if r.final_skill_reward is not None else "-"
        lines.append(f"{r.variant:>8s} {r.seed:>5d} {cov:>9s} {rew:>14s}")
    for variant, mean in report.variant_mean_coverage.items():
        lines.append(f"{variant:>8s} {'mean':>5s} {mean:>9.4f}")
    text = "\n".join(lines) + "\n"
    (report.out_dir / "coverage_table.txt").write_text(text)
    payload = {
        "suite": report.suite,
        "bins": report.bins,
        "wall_time": report.wall_time,
        "runs": [
            {
                "variant": r.variant,
                "seed": r.seed,
                "coverage_mean": r.coverage_mean,
                "per_dim_ratios": list(r.per_dim_ratios) if r.per_dim_ratios else None,
                "final_skill_reward": r.final_skill_reward,
                "error": r.error,
            }
            for r in report.runs
        ],
        "variant_mean_coverage": report.variant_mean_coverage,
    }
    (report.out_dir / "comparison.json").write_text(json.dumps(payload, indent=2) + "\n")


def _write_curves(report: AblationReport) -> None:
    rows = ["variant,seed,iteration,mean_reward,mean_skill_reward"]
    for r in report.runs:
        if r.error is not None:
            continue
        path = r.run_dir / "metrics.jsonl"
        for line in path.read_text().splitlines():
            record = json.loads(line)
            if record.get("type") == "header":
                continue
            rows.append(
                f"{r.variant},{r.seed},{record['iteration']},"
                f"{record['mean_reward']},{record['mean_skill_reward']}"
            )
    (report.out_dir / "reward_curves.csv").write_text("\n".join(rows) + "\n")


def _write_scatter(out_dir: Path, good_runs, states_per_run, normalized, labels, stride: int = 5) -> None:
    rows = ["variant,seed," + ",".join(labels)]
    offset = 0
    for r in good_runs:
        n = states_per_run[(r.variant, r.seed)].shape[0]
        chunk = normalized[offset : offset + n : stride]
        for row in chunk:
            rows.append(f"{r.variant},{r.seed}," + ",".join(f"{x:.5f}" for x in row))
        offset += n
    (out_dir / "states_scatter.csv").write_text("\n".join(rows) + "\n")
