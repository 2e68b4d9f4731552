"""Figure rendering from emitted data files.

The CSV/JSONL data files are the contract; these PNGs are conveniences for
eyeballing reward curves, coverage bars and state scatters.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_run_metrics(run_dir: str | Path, out_path: str | Path | None = None) -> Path:
    """Reward and discriminator-accuracy curves for one training run."""
    run_dir = Path(run_dir)
    iterations, mean_reward, skill_reward, reg_reward, accs = [], [], [], [], []
    for line in (run_dir / "metrics.jsonl").read_text().splitlines():
        record = json.loads(line)
        if record.get("type") == "header":
            continue
        iterations.append(record["iteration"])
        mean_reward.append(record["mean_reward"])
        skill_reward.append(record["mean_skill_reward"])
        reg_reward.append(record["mean_reg_reward"])
        accs.append(record["disc_accuracy"])
    fig, axes = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    axes[0].plot(iterations, mean_reward, label="total")
    axes[0].plot(iterations, skill_reward, label="skill")
    axes[0].plot(iterations, reg_reward, label="regularization")
    axes[0].set_ylabel("mean step reward")
    axes[0].legend()
    accs = np.array(accs)
    for i in range(accs.shape[1]):
        axes[1].plot(iterations, accs[:, i], label=f"head {i}")
    axes[1].set_xlabel("iteration")
    axes[1].set_ylabel("discriminator accuracy")
    axes[1].legend()
    fig.tight_layout()
    out_path = Path(out_path) if out_path else run_dir / "metrics.png"
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_ablation(out_dir: str | Path) -> list[Path]:
    """Reward curves, coverage bars and a state scatter for a suite dir."""
    out_dir = Path(out_dir)
    produced = []

    curves_path = out_dir / "reward_curves.csv"
    if curves_path.exists():
        rows = curves_path.read_text().splitlines()[1:]
        data: dict[str, dict[int, list[tuple[int, float, float]]]] = {}
        for row in rows:
            variant, seed, it, mean_r, skill_r = row.split(",")
            data.setdefault(variant, {}).setdefault(int(seed), []).append(
                (int(it), float(mean_r), float(skill_r))
            )
        fig, axes = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
        colors = plt.cm.tab10.colors
        for i, (variant, by_seed) in enumerate(sorted(data.items())):
            stacked = [np.array(v) for v in by_seed.values()]
            n = min(len(v) for v in stacked)
            arr = np.stack([v[:n] for v in stacked])  # (seeds, iters, 3)
            its = arr[0, :, 0]
            axes[0].plot(its, arr[:, :, 1].mean(axis=0), color=colors[i % 10], label=variant)
            axes[1].plot(its, arr[:, :, 2].mean(axis=0), color=colors[i % 10], label=variant)
        axes[0].set_ylabel("mean step reward")
        axes[1].set_ylabel("mean skill reward")
        axes[1].set_xlabel("iteration")
        for ax in axes:
            ax.legend()
        fig.tight_layout()
        path = out_dir / "reward_curves.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        produced.append(path)

    comparison_path = out_dir / "comparison.json"
    if comparison_path.exists():
        payload = json.loads(comparison_path.read_text())
        means = payload.get("variant_mean_coverage", {})
        if means:
            fig, ax = plt.subplots(figsize=(5, 4))
            names = list(means)
            ax.bar(names, [means[n] for n in names], color="steelblue")
            ax.set_ylabel("mean state-space coverage")
            ax.set_title(f"{payload['suite']} suite, {payload['bins']} bins")
            fig.tight_layout()
            path = out_dir / "coverage_bars.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            produced.append(path)

    scatter_path = out_dir / "states_scatter.csv"
    if scatter_path.exists():
        lines = scatter_path.read_text().splitlines()
        header = lines[0].split(",")
        body = [line.split(",") for line in lines[1:]]
        variants = sorted({row[0] for row in body})
        pairs = [("v_x", "v_y"), ("w_x", "w_y"), ("g_x", "g_y")]
        pairs = [(a, b) for a, b in pairs if a in header and b in header]
        if pairs:
            fig, axes = plt.subplots(1, len(pairs), figsize=(4 * len(pairs), 4))
            axes = np.atleast_1d(axes)
            colors = plt.cm.tab10.colors
            for ax, (a, b) in zip(axes, pairs):
                ia, ib = header.index(a), header.index(b)
                for i, variant in enumerate(variants):
                    xs = [float(r[ia]) for r in body if r[0] == variant]
                    ys = [float(r[ib]) for r in body if r[0] == variant]
                    ax.scatter(xs, ys, s=2, alpha=0.4, color=colors[i % 10], label=variant)
                ax.set_xlabel(a)
                ax.set_ylabel(b)
                ax.set_xlim(-0.02, 1.02)
                ax.set_ylim(-0.02, 1.02)
            axes[0].legend(markerscale=4)
            fig.tight_layout()
            path = out_dir / "states_scatter.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            produced.append(path)
    return produced
