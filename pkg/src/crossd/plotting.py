"""Report figures (written to files with the non-interactive Agg backend)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

OPERATOR_COLORS = {
    "conv2d": "#4c72b0",
    "crossd": "#55a868",
    "acs": "#dd8452",
    "conv3d": "#c44e52",
}


def bench_figure(report, path: str | os.PathLike) -> str:
    """Grouped bars of median time per operator and shape, whiskers spanning min..max."""
    shapes = list(dict.fromkeys(r["shape"] for r in report.rows))
    operators = list(dict.fromkeys(r["operator"] for r in report.rows))
    rows = {(r["shape"], r["operator"]): r for r in report.rows}
    width = 0.8 / len(operators)
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(shapes), 3.2))
    for j, op in enumerate(operators):
        xs, med, lo, hi = [], [], [], []
        for i, shape in enumerate(shapes):
            r = rows[(shape, op)]
            xs.append(i + (j - (len(operators) - 1) / 2) * width)
            med.append(r["median_ms"])
            lo.append(r["median_ms"] - r["min_ms"])
            hi.append(r["max_ms"] - r["median_ms"])
        ax.bar(xs, med, width, yerr=[lo, hi], capsize=2, label=op, color=OPERATOR_COLORS.get(op))
    ax.set_xticks(range(len(shapes)))
    ax.set_xticklabels(shapes)
    ax.set_xlabel("input shape (BxCxHxW)")
    ax.set_ylabel("median forward time (ms)")
    ax.set_title(f"{report.environment.get('precision', '')}, threads={report.environment.get('threads')}",
                 fontsize=9)
    ax.legend(frameon=False, fontsize=8)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def loss_figure(losses, path: str | os.PathLike) -> str:
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(range(len(losses)), losses, color="k", lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy")
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def figure_path_for(out_path: str | os.PathLike) -> str:
    """``report.json`` -> ``report.png`` next to it."""
    root, _ = os.path.splitext(os.fspath(out_path))
    return root + ".png"
