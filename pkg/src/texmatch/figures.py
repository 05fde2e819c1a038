"""Report figures rendered to files, never to a display.

Each helper takes already-computed data and writes one PNG; callers that
only want delimited output simply skip the call.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def save_cmc_figure(curve, path, title: str = "Identification accuracy") -> None:
    """Rank vs cumulative identification rate."""
    ranks = range(1, len(curve.rates) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ranks, curve.rates, marker="o", markersize=3)
    ax.set_xlabel("rank")
    ax.set_ylabel("identification rate")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(f"{title} ({curve.n_queries} queries)")
    ax.grid(True, alpha=0.4)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_roc_figure(fpr, tpr, path, title: str = "Descriptor ROC") -> None:
    """False positive rate vs true positive rate on a log x-axis."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogx(fpr, tpr)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.4)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_latency_figure(times_ms, path, title: str = "Comparison latency") -> None:
    """Histogram of per-comparison wall times with the mean marked."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(times_ms, bins=40, color="#4878b0")
    mean = sum(times_ms) / len(times_ms)
    ax.axvline(mean, color="#c44e52", linestyle="--",
               label=f"mean {mean:.2f} ms")
    ax.set_xlabel("milliseconds")
    ax.set_ylabel("comparisons")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
