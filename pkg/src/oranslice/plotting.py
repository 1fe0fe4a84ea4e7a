"""Figure rendering for training curves, sweeps and evaluation reports."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update({
    "figure.figsize": (6.4, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 130,
    "savefig.bbox": "tight",
})


def moving_average(x, window=20):
    x = np.asarray(x, dtype=float)
    if window <= 1 or x.size < window:
        return x.copy()
    kernel = np.full(window, 1.0 / window)
    return np.convolve(x, kernel, mode="valid")


def save_learning_curve(path, curves, window=20, ylabel="episode reward"):
    """Render reward-per-episode traces; curves maps label -> 1-d array."""
    fig, ax = plt.subplots()
    for label, rewards in curves.items():
        rewards = np.asarray(rewards, dtype=float)
        (raw,) = ax.plot(np.arange(rewards.size), rewards,
                         alpha=0.25, lw=0.8)
        smooth = moving_average(rewards, window)
        offset = rewards.size - smooth.size
        ax.plot(np.arange(offset, rewards.size), smooth,
                color=raw.get_color(), lw=1.6, label=str(label))
    ax.set_xlabel("episode")
    ax.set_ylabel(ylabel)
    ax.legend(loc="best")
    fig.savefig(path)
    plt.close(fig)
    return path


def save_sweep_curve(path, xs, series, xlabel, ylabel):
    """One line per label over a shared x grid."""
    fig, ax = plt.subplots()
    for label, ys in series.items():
        ax.plot(xs, ys, marker="o", label=str(label))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(loc="best")
    fig.savefig(path)
    plt.close(fig)
    return path


def save_metric_bars(path, reports, metrics=("mae", "baep")):
    """Grouped bars, one group per metric; reports maps label -> dict."""
    labels = list(reports)
    fig, axes = plt.subplots(1, len(metrics), figsize=(3.4 * len(metrics), 3.6))
    if len(metrics) == 1:
        axes = [axes]
    xs = np.arange(len(labels))
    for ax, met in zip(axes, metrics):
        vals = [reports[lab].get(met, np.nan) for lab in labels]
        ax.bar(xs, vals, width=0.6)
        ax.set_xticks(xs)
        ax.set_xticklabels(labels, rotation=20, ha="right")
        ax.set_title(met)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
