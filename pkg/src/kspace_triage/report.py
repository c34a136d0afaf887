"""Matplotlib figures written next to the CSV/JSON outputs.

Everything renders through the non-interactive Agg backend, so the module is
safe to call from headless jobs. Each function returns the list of paths it
wrote.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sampling import SamplingMask  # noqa: E402

KIND_STYLE = {
    "emrt": dict(color="tab:red", marker="o"),
    "model_fixed": dict(color="tab:purple", marker="s"),
    "model_center": dict(color="tab:blue", marker="^"),
    "model_rss": dict(color="tab:gray", marker="", linestyle="--"),
    "kspace_full": dict(color="tab:green", marker="", linestyle=":"),
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps the bytes stable across runs
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def _mean_by(rows, key_fields, value="auroc"):
    groups = defaultdict(list)
    for row in rows:
        v = row.get(value)
        if v is not None and v != "":
            groups[tuple(row[k] for k in key_fields)].append(float(v))
    return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in groups.items()}


def auroc_vs_rate(rows, path, pathology=None):
    """Mean test AUROC per model kind against the sampling rate (error bars: seed std)."""
    stats = _mean_by(rows, ("pathology", "model_kind", "rate"))
    pathologies = sorted({k[0] for k in stats}) if pathology is None else [pathology]
    fig, axes = plt.subplots(1, len(pathologies), figsize=(4.8 * len(pathologies), 3.6), squeeze=False)
    for ax, name in zip(axes[0], pathologies):
        kinds = [k for k in KIND_STYLE if any(s[0] == name and s[1] == k for s in stats)]
        for kind in kinds:
            pts = sorted((float(r), m, s) for (p, k, r), (m, s, _) in stats.items() if p == name and k == kind)
            rates, means, stds = (np.array(c) for c in zip(*pts))
            ax.errorbar(100 * rates, means, yerr=stds, label=kind, capsize=3, **KIND_STYLE[kind])
        ax.set_xlabel("sampling rate (%)")
        ax.set_ylabel("test AUROC")
        ax.set_title(name)
        ax.set_ylim(0.4, 1.02)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8, loc="lower right")
    return [_save(fig, path)]


def fixed_vs_random(comparison, path):
    """Bar chart of random-mask (emrt) against fixed-mask training per rate."""
    if not comparison:
        return []
    stats_r = _mean_by(comparison, ("rate",), "auroc_random")
    stats_f = _mean_by(comparison, ("rate",), "auroc_fixed")
    rates = sorted(k[0] for k in stats_r)
    x = np.arange(len(rates))
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    for shift, stats, kind in ((-0.18, stats_r, "emrt"), (0.18, stats_f, "model_fixed")):
        means = [stats[(r,)][0] for r in rates]
        stds = [stats[(r,)][1] for r in rates]
        ax.bar(x + shift, means, width=0.36, yerr=stds, capsize=3, label=kind, color=KIND_STYLE[kind]["color"])
    ax.set_xticks(x, [f"{100 * r:g}%" for r in rates])
    ax.set_ylabel("test AUROC")
    ax.set_ylim(0.4, 1.02)
    ax.legend(fontsize=8)
    return [_save(fig, path)]


def mask_figure(masks, path, titles=None):
    """Draw one or more sampling masks as vertical-line images."""
    masks = list(masks)
    if not masks:
        return []
    titles = titles or [""] * len(masks)
    ncol = min(4, len(masks))
    nrow = int(np.ceil(len(masks) / ncol))
    fig, axes = plt.subplots(nrow, ncol, figsize=(2.4 * ncol, 2.5 * nrow), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for ax, mask, title in zip(axes.ravel(), masks, titles):
        ax.imshow(mask.to_dense(), cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(title, fontsize=8)
    return [_save(fig, path)]


def training_curves(report, path):
    """Loss and validation AUROC per epoch from a TrainReport (object or dict)."""
    payload = report.to_dict() if hasattr(report, "to_dict") else report
    epochs = payload["epochs"]
    idx = [e["epoch"] for e in epochs]
    fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=(8.4, 3.2))
    ax_l.plot(idx, [e["train_loss"] for e in epochs], label="train")
    ax_l.plot(idx, [e["val_loss"] for e in epochs], label="val")
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("loss")
    ax_l.legend(fontsize=8)
    names = sorted(epochs[0]["val_auroc"]) if epochs else []
    for name in names:
        ax_a.plot(idx, [e["val_auroc"][name] for e in epochs], label=name)
    if payload.get("best_epoch") is not None:
        ax_a.axvline(payload["best_epoch"], color="k", alpha=0.3, linestyle="--")
    ax_a.set_xlabel("epoch")
    ax_a.set_ylabel("val AUROC")
    ax_a.legend(fontsize=8)
    return [_save(fig, path)]


def roc_curve(scores, labels, path, title=""):
    """Empirical ROC curve of one head."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    order = np.argsort(-scores, kind="stable")
    tp = np.concatenate([[0], np.cumsum(labels[order])])
    fp = np.concatenate([[0], np.cumsum(~labels[order])])
    fig, ax = plt.subplots(figsize=(3.4, 3.4))
    ax.plot(fp / max(fp[-1], 1), tp / max(tp[-1], 1), color="tab:red")
    ax.plot([0, 1], [0, 1], color="k", alpha=0.3, linestyle="--")
    ax.set_xlabel("1 - specificity")
    ax.set_ylabel("sensitivity")
    ax.set_title(title, fontsize=9)
    return [_save(fig, path)]


def sweep_figures(rows, masks, out_dir, comparison=None):
    """All sweep figures: AUROC vs rate, the fixed/random comparison and the masks."""
    out_dir = Path(out_dir)
    written = []
    if rows:
        written += auroc_vs_rate(rows, out_dir / "auroc_vs_rate.png")
    written += fixed_vs_random(comparison or [], out_dir / "fixed_vs_random.png")
    ordered = sorted(masks.items())
    picked = [m if isinstance(m, SamplingMask) else SamplingMask.from_dict(m) for _, m in ordered]
    titles = [f"{k} {100 * r:g}% s{s}" for (k, r, s), _ in ordered]
    written += mask_figure(picked, out_dir / "masks.png", titles)
    return written
