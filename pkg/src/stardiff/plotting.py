"""Matplotlib figure rendering for the report path.  All figures go straight
to files; no interactive backends."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curve(log, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(1, len(log["epoch_loss"]) + 1)
    ax.plot(epochs, log["epoch_loss"], label="combined")
    ax.plot(epochs, log["epoch_loss_res"], label="restoration", alpha=0.7)
    ax.plot(epochs, log["epoch_loss_eps"], label="noise", alpha=0.7)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_accuracy_curves(curves, stages, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(curves["epoch"], curves["train_acc"], label="train")
    ax.plot(curves["epoch"], curves["test_acc"], label="test")
    for name, (_, stage) in stages.items():
        ax.axvline(stage.epoch, color="gray", linestyle=":", alpha=0.6)
        ax.annotate(name, (stage.epoch, 0.5), rotation=90, fontsize=8,
                    ha="right", va="bottom")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_perturbation_drops(report, path):
    rows = report.rows
    labels = [r["label"] for r in rows]
    x = np.arange(len(rows))
    width = 0.27
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(x - width, [r["ssim_drop_pct"] for r in rows], width, label="SSIM drop")
    ax.bar(x, [r["accuracy_drop_pct"] for r in rows], width, label="Accuracy drop")
    ax.bar(x + width, [r["sfs_drop_pct"] for r in rows], width, label="SFS drop")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("drop vs baseline (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def saliency_overlay(cond_he_01, sal_map):
    """Red = high attribution, green = low, blended over the grayed H&E."""
    gray = cond_he_01.mean(axis=0)
    rgb = np.stack([sal_map, 1.0 - sal_map, np.zeros_like(sal_map)])
    return np.clip(0.45 * np.stack([gray] * 3) + 0.55 * rgb, 0.0, 1.0)


def save_saliency_panel(cond_he_01, sal, path):
    ts = sal.timesteps
    fig, axes = plt.subplots(1, len(ts) + 1, figsize=(3 * (len(ts) + 1), 3))
    axes[0].imshow(np.transpose(cond_he_01, (1, 2, 0)))
    axes[0].set_title("H&E input")
    for ax, t in zip(axes[1:], ts):
        ax.imshow(np.transpose(saliency_overlay(cond_he_01, sal.maps[t]), (1, 2, 0)))
        ax.set_title(f"t={t}")
    for ax in axes:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
