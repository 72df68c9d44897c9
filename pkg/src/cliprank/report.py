"""CSV tables and PNG figures rendered next to the JSON reports.

Every report path emits three artifacts from the same data: JSON for
programs, CSV for spreadsheets, and a PNG for eyes.  matplotlib loads
lazily with the Agg backend so importing this module stays cheap and
headless boxes never touch a display.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .exceptions import DataError


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def write_csv(path, rows, fieldnames=None) -> None:
    rows = list(rows)
    if not rows:
        raise DataError("refusing to write an empty CSV")
    if fieldnames is None:
        fieldnames = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def read_metrics(jsonl_path) -> list:
    records = []
    with open(jsonl_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        raise DataError(f"metrics log {jsonl_path} is empty")
    return records


def metrics_csv(records, out_csv) -> None:
    write_csv(out_csv, records)


def plot_training_curves(records, out_png) -> None:
    plt = _plt()
    steps = [r["step"] for r in records]
    fig, (ax, ax_lr) = plt.subplots(
        2, 1, figsize=(7, 6), sharex=True, height_ratios=[3, 1]
    )
    for key in ("loss_total", "loss_rank", "loss_contrastive", "loss_rotation"):
        if any(r.get(key, 0.0) != 0.0 for r in records) or key == "loss_total":
            ax.plot(steps, [r[key] for r in records], label=key, linewidth=1.2)
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    ax_lr.plot(steps, [r["lr"] for r in records], color="tab:gray")
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("step")
    ax_lr.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def ranking_rows(report) -> list:
    rows = []
    for ex in report.per_example:
        row = {
            "index": ex.index,
            "video_id": ex.video_id,
            "t": ex.t,
            "pairwise_accuracy": ex.pairwise_accuracy,
            "tau": ex.tau,
        }
        for j, s in enumerate(ex.target_scores):
            row[f"s{j}"] = s
        rows.append(row)
    return rows


def ranking_csv(report, out_csv) -> None:
    write_csv(out_csv, ranking_rows(report))


def plot_ranking(report, out_png) -> None:
    plt = _plt()
    accs = [ex.pairwise_accuracy for ex in report.per_example]
    taus = [ex.tau for ex in report.per_example]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.hist(accs, bins=np.linspace(0, 1, 21), color="tab:blue", alpha=0.8)
    ax1.axvline(report.pairwise_accuracy, color="k", linestyle="--", linewidth=1)
    ax1.set_xlabel("pairwise accuracy")
    ax1.set_ylabel("examples")
    ax2.hist(taus, bins=np.linspace(-1, 1, 21), color="tab:orange", alpha=0.8)
    ax2.axvline(report.kendall_tau, color="k", linestyle="--", linewidth=1)
    ax2.set_xlabel("kendall tau")
    fig.suptitle(
        f"acc={report.pairwise_accuracy:.3f}  tau={report.kendall_tau:.3f}  "
        f"n={report.n_examples}"
    )
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def probe_rows(report) -> list:
    return [
        {"class": c, "accuracy": a}
        for c, a in enumerate(report.per_class_accuracy)
    ]


def probe_csv(report, out_csv) -> None:
    write_csv(out_csv, probe_rows(report))


def plot_probe(report, out_png) -> None:
    plt = _plt()
    per = report.per_class_accuracy
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(range(len(per)), per, color="tab:green", alpha=0.85)
    ax.axhline(report.accuracy, color="k", linestyle="--", linewidth=1,
               label=f"overall {report.accuracy:.3f}")
    ax.axhline(1.0 / len(per), color="tab:red", linestyle=":", linewidth=1,
               label="chance")
    ax.set_xlabel("motion class")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def seed_table_csv(rows, out_csv) -> None:
    """Per-seed comparison table, one dict per (seed, variant) result."""
    write_csv(out_csv, rows)


def plot_heatmap(grid: np.ndarray, frame: np.ndarray, out_png) -> None:
    """Side-by-side frame and its per-cell score map."""
    plt = _plt()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7, 3.5))
    ax1.imshow(frame, cmap="gray", vmin=0.0, vmax=1.0)
    ax1.set_title("frame")
    ax1.axis("off")
    im = ax2.imshow(grid, cmap="coolwarm", vmin=-1.0, vmax=1.0)
    ax2.set_title("per-cell score")
    ax2.axis("off")
    fig.colorbar(im, ax=ax2, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
