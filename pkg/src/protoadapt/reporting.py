"""Report rendering: JSON / CSV / JSONL outputs with matplotlib figures.

Every figure function takes an output path and writes a PNG; the delimited
writers put machine-readable rows next to them so a report directory is
self-contained: numbers for scripts, pictures for people.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalReport
from .training import TrainLog


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_train_log_jsonl(path, log: TrainLog) -> None:
    with open(path, "w") as f:
        for row in log.epoch_rows():
            f.write(json.dumps(row, sort_keys=True) + "\n")


def write_eval_csv(path, reports: list[EvalReport]) -> None:
    fields = ["stage", "accuracy", "map"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for r in reports:
            writer.writerow({"stage": r.stage, "accuracy": f"{r.accuracy:.6f}",
                             "map": "" if r.map_value is None else f"{r.map_value:.6f}"})


def format_eval_table(reports: list[EvalReport]) -> str:
    """Aligned-column text table of stage results."""
    rows = [("stage", "accuracy", "mAP")]
    for r in reports:
        rows.append((
            str(r.stage),
            f"{r.accuracy:.4f}",
            "-" if r.map_value is None else f"{r.map_value:.4f}",
        ))
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_loss_curves(path, log: TrainLog) -> None:
    epochs = np.arange(len(log.total))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, log.total, label="total", linewidth=2, color="black")
    ax.plot(epochs, log.cls, label="classification")
    ax.plot(epochs, log.loc, label="localization")
    if any(v != 0.0 for v in log.domain):
        ax.plot(epochs, log.domain, label="domain diversity")
        ax.plot(epochs, log.proto, label="prototype consistency")
        ax.plot(epochs, log.proto_cls, label="perturbed classification")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("finetuning losses")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_stage_bars(path, reports: list[EvalReport]) -> None:
    stages = [str(r.stage) for r in reports]
    accuracy = [r.accuracy for r in reports]
    maps = [r.map_value for r in reports]
    x = np.arange(len(stages))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    width = 0.38
    ax.bar(x - width / 2, accuracy, width, label="accuracy")
    if all(m is not None for m in maps):
        ax.bar(x + width / 2, maps, width, label="mAP")
    ax.set_xticks(x)
    ax.set_xticklabels(stages, rotation=20)
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    ax.set_title("module ablation")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_attention_heatmap(path, weights: np.ndarray, class_names: list[str]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(weights, cmap="viridis", aspect="auto", vmin=0.0)
    ax.set_xlabel("support slot")
    ax.set_ylabel("class")
    ax.set_yticks(range(len(class_names)))
    ax.set_yticklabels(class_names, fontsize=8)
    ax.set_title("instance attention weights")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_prototype_similarity(path, before: np.ndarray, after: np.ndarray, class_names: list[str]) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    vmin = min(before.min(), after.min())
    for ax, matrix, title in ((axes[0], before, "before finetuning"), (axes[1], after, "after finetuning")):
        im = ax.imshow(matrix, cmap="coolwarm", vmin=vmin, vmax=1.0)
        ax.set_title(title, fontsize=10)
        ax.set_xticks(range(len(class_names)))
        ax.set_yticks(range(len(class_names)))
        ax.set_xticklabels(class_names, rotation=45, fontsize=7)
        ax.set_yticklabels(class_names, fontsize=7)
    fig.colorbar(im, ax=list(axes), shrink=0.8)
    fig.suptitle("object prototype cosine similarity")
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
