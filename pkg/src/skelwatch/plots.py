"""Figures written next to the tab-separated reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataset import action_name  # noqa: E402
from .evaluation import match_detections  # noqa: E402

# fixed metadata keeps PNG bytes stable between runs
_PNG_META = {"Software": None}


def plot_settings():
    plt.rcParams["lines.linewidth"] = 1.5
    plt.rcParams["font.size"] = 10
    plt.rcParams["axes.titlesize"] = 11
    plt.rcParams["legend.fontsize"] = 9
    plt.rcParams["figure.dpi"] = 100


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def training_curves(history, path):
    plot_settings()
    epochs = [h.epoch for h in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [h.train_loss for h in history], label="train")
    ax_loss.plot(epochs, [h.val_loss for h in history], label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy")
    ax_loss.set_yscale("log")
    ax_loss.legend()
    ax_acc.plot(epochs, [h.train_acc for h in history], label="train")
    ax_acc.plot(epochs, [h.val_acc for h in history], label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0, 1.02)
    ax_acc.legend(loc="lower right")
    fig.tight_layout()
    return _save(fig, path)


def confusion_matrix(report, class_labels, path):
    plot_settings()
    idx = {c: i for i, c in enumerate(class_labels)}
    mat = np.zeros((len(class_labels), len(class_labels)), dtype=int)
    for (t, p), n in report.confusion.items():
        if t in idx and p in idx:
            mat[idx[t], idx[p]] += n
    size = max(3.5, 0.35 * len(class_labels) + 2)
    fig, ax = plt.subplots(figsize=(size, size))
    ax.imshow(mat, cmap="Blues")
    names = [str(c) for c in class_labels]
    ax.set_xticks(range(len(names)), names, rotation=90 if len(names) > 10 else 0)
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted action")
    ax.set_ylabel("true action")
    if len(names) <= 12:
        for i in range(len(names)):
            for j in range(len(names)):
                ax.text(j, i, str(mat[i, j]), ha="center", va="center",
                        color="white" if mat[i, j] > mat.max() / 2 else "black")
    ax.set_title(f"accuracy {report.accuracy:.3f}")
    fig.tight_layout()
    return _save(fig, path)


def pr_curves(detections, ground_truth, path, iou_threshold=0.5):
    plot_settings()
    fig, ax = plt.subplots(figsize=(4.5, 4))
    for c in sorted({g.class_id for g in ground_truth}):
        gts = [g for g in ground_truth if g.class_id == c]
        dets = sorted((d for d in detections if d.class_id == c), key=lambda d: -d.score)
        hit = {i for i, _, _ in match_detections(dets, gts, iou_threshold).matches}
        hits = np.array([i in hit for i in range(len(dets))], dtype=bool)
        if hits.size:
            tp = np.cumsum(hits)
            recall = np.concatenate([[0.0], tp / len(gts)])
            precision = np.concatenate([[1.0], tp / np.arange(1, hits.size + 1)])
        else:
            recall, precision = np.array([0.0]), np.array([1.0])
        ax.step(recall, precision, where="post", label=f"{c} {action_name(c)}")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.legend(loc="lower left")
    fig.tight_layout()
    return _save(fig, path)


def stream_timeline(detections, ground_truth, path, fps=30.0):
    plot_settings()
    classes = sorted({g.class_id for g in ground_truth} | {d.class_id for d in detections})
    row = {c: i for i, c in enumerate(classes)}
    fig, ax = plt.subplots(figsize=(10, 0.6 * len(classes) + 1.5))
    for g in ground_truth:
        ax.broken_barh([(g.start_raw_frame / fps, (g.end_raw_frame - g.start_raw_frame) / fps)],
                       (row[g.class_id] - 0.4, 0.35), color="0.6")
    for d in detections:
        ax.broken_barh([(d.start_raw_frame / fps, (d.end_raw_frame - d.start_raw_frame) / fps)],
                       (row[d.class_id] + 0.05, 0.35), color="C3", alpha=0.3 + 0.7 * d.score)
    ax.set_yticks(range(len(classes)), [f"{c} {action_name(c)}" for c in classes])
    ax.set_xlabel("time [s]  (grey: ground truth, red: detections)")
    fig.tight_layout()
    return _save(fig, path)
