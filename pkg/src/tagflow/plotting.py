"""PNG figures for CLI reports (matplotlib, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_check(report, plot_dir: str | Path) -> Path:
    """Checked instances and violations per assertion."""
    results = report.results
    labels = [f"{r.assertion_id} (line {r.line})" for r in results] or ["(no assertions)"]
    checked = [r.checked for r in results] or [0]
    failed = [r.total_violations for r in results] or [0]
    fig, ax = plt.subplots(figsize=(7, 0.5 * len(labels) + 1.5))
    y = range(len(labels))
    ax.barh(y, checked, color="#9ecae1", label="checked")
    ax.barh(y, failed, color="#de2d26", label="violated")
    ax.set_yticks(list(y), labels)
    ax.invert_yaxis()
    ax.set_xlabel("assertion instances")
    ax.set_title(f"{report.kernel}: {'pass' if report.passed else 'FAIL'}")
    ax.legend(loc="upper left", bbox_to_anchor=(1.0, 1.0))
    return _save(fig, Path(plot_dir) / f"{report.kernel}_check.png")


def plot_counters(counters, name: str, plot_dir: str | Path) -> Path:
    """Interpreter cost counters of one run."""
    doc = counters.to_json()
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(list(doc), list(doc.values()), color="#3182bd")
    ax.set_yscale("symlog")
    ax.set_title(f"{name}: cost counters")
    return _save(fig, Path(plot_dir) / f"{name}_counters.png")


def plot_rewards(trajectory, name: str, plot_dir: str | Path) -> Path:
    """Per-step reward and best-so-far reward of a learning run."""
    steps = trajectory.steps
    xs = list(range(len(steps)))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(xs, [s.reward for s in steps], "o", color="#756bb1", label="step reward")
    best = [(x, s.best_reward) for x, s in zip(xs, steps) if s.best_reward is not None]
    if best:
        ax.step([b[0] for b in best], [b[1] for b in best], where="post", color="#31a354", label="best so far")
    ax.set_yscale("symlog", linthresh=0.1)
    ax.set_xticks(xs, [f"{s.episode}.{s.step}" for s in steps])
    ax.set_xlabel("episode.step")
    ax.set_ylabel("reward")
    ax.set_title(f"{name}: rewards")
    ax.legend()
    return _save(fig, Path(plot_dir) / f"{name}_rewards.png")
