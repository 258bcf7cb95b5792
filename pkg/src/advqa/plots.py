"""Figure rendering for training curves, benchmark results, and the
ablation comparison. All figures are written to files (Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_loss_curve(losses: list[float], path: str | Path,
                    title: str = "training loss") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(losses)), losses, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_benchmark(dimension_scores: dict[str, float], accuracy: float,
                   path: str | Path, title: str = "benchmark") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dims = list(dimension_scores)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4),
                                   gridspec_kw={"width_ratios": [3, 1]})
    ax1.bar(dims, [dimension_scores[d] for d in dims], color="#4878a8")
    ax1.set_ylim(0, 5)
    ax1.set_ylabel("mean score (1-5)")
    ax1.tick_params(axis="x", rotation=30)
    ax2.bar(["accuracy"], [accuracy], color="#58a066")
    ax2.set_ylim(0, 100)
    ax2.set_ylabel("%")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_ablation(result_dict: dict, path: str | Path) -> Path:
    """Grouped accuracy bars with standard-deviation whiskers per arm."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arms = result_dict["arm_names"]
    acc = [result_dict["arms"][a]["accuracy_mean"] for a in arms]
    sd = [result_dict["arms"][a]["accuracy_sd"] for a in arms]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(arms, acc, yerr=sd, capsize=6, color=["#4878a8", "#a85948"])
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.set_title(f"Δ accuracy = {result_dict['delta_accuracy']:+.1f}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_report(rows: list[dict], path: str | Path) -> Path:
    """Accuracy/score bars per tuning type for the report table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [r["tuning_type"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 4))
    ax1.bar(names, [r["accuracy"] for r in rows], color="#4878a8")
    ax1.set_ylabel("accuracy (%)")
    ax1.set_ylim(0, 100)
    ax2.bar(names, [r["score"] for r in rows], color="#58a066")
    ax2.set_ylabel("score (1-5)")
    ax2.set_ylim(0, 5)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
