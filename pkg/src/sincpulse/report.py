"""Figure rendering for run reports.

Every CLI report path writes PNG figures next to its CSV output: training
curves for ``train``, window-rate agreement panels for ``eval``, and grouped
bars for ``ablate``.  The Agg backend keeps everything headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import InvalidInputError
from .evaluate import estimate_pulse_rates
from .spectral import DEFAULT_PULSE_BAND, SignalWindow, band_mask, power_spectrum


def training_curves_png(log, path) -> None:
    """Loss trajectories over epochs from a training log."""
    recs = [r for r in log.records if r.get("event", "epoch") == "epoch"]
    if not recs:
        raise InvalidInputError("log has no epoch records to plot")
    epochs = [r["epoch"] for r in recs]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    supervised = "train_pearson_loss" in recs[0]
    if supervised:
        ax1.plot(epochs, [r["train_pearson_loss"] for r in recs], label="train")
        vals = [(r["epoch"], r["val_pearson_loss"]) for r in recs if "val_pearson_loss" in r]
        if vals:
            ax1.plot(*zip(*vals), label="validation")
        ax1.set_ylabel("negative Pearson loss")
    else:
        for key in ("train_bandwidth", "train_sparsity", "train_variance"):
            ax1.plot(epochs, [r[key] for r in recs], label=key.replace("train_", ""))
        ax1.set_ylabel("training loss component")
    ax1.set_xlabel("epoch")
    ax1.legend()
    ax1.set_title("training losses")

    vals = [(r["epoch"], r["val_selection"]) for r in recs if "val_selection" in r]
    if vals:
        ax2.plot(*zip(*vals), color="tab:red")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation selection score")
    ax2.set_title("checkpoint selection")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def agreement_png(params, labeled_clips, path, window_len_s=10.0, stride_s=1.0):
    """Three panels: rate scatter, error histogram, one example spectrum."""
    from .model import predict

    if not labeled_clips:
        raise InvalidInputError("no clips to plot")
    pred_rates, gt_rates = [], []
    for lc in labeled_clips:
        pred_wave = predict(params, lc.clip.tensor, lc.clip.fps)
        gt_wave = SignalWindow(lc.truth.pulse, lc.clip.fps)
        pred_rates.append(
            estimate_pulse_rates(pred_wave, window_len_s, stride_s).rates_bpm
        )
        gt_rates.append(
            estimate_pulse_rates(gt_wave, window_len_s, stride_s).rates_bpm
        )
    pred_all = np.concatenate(pred_rates)
    gt_all = np.concatenate(gt_rates)

    fig, (ax1, ax2, ax3) = plt.subplots(1, 3, figsize=(13, 4))
    lim = (40.0, 180.0)
    ax1.scatter(gt_all, pred_all, s=8, alpha=0.5)
    ax1.plot(lim, lim, color="gray", lw=0.8)
    ax1.set_xlim(lim), ax1.set_ylim(lim)
    ax1.set_xlabel("reference rate (bpm)")
    ax1.set_ylabel("predicted rate (bpm)")
    ax1.set_title("window rates")

    err = pred_all - gt_all
    ax2.hist(err, bins=40, color="tab:blue")
    ax2.set_xlabel("rate error (bpm)")
    ax2.set_ylabel("windows")
    ax2.set_title(f"errors (MAE {np.mean(np.abs(err)):.2f} bpm)")

    lc = labeled_clips[0]
    pred_wave = predict(params, lc.clip.tensor, lc.clip.fps)
    spec = power_spectrum(pred_wave)
    mask = band_mask(spec, DEFAULT_PULSE_BAND)
    ax3.plot(spec.freqs[mask] * 60.0, spec.power[mask])
    ax3.axvline(lc.truth.rate_bpm, color="tab:red", lw=0.8, ls="--")
    ax3.set_xlabel("rate (bpm)")
    ax3.set_ylabel("spectral power")
    ax3.set_title("example prediction spectrum")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def ablation_bars_png(rows, group_key, path, value_key="mae_bpm"):
    """Grouped bars of one metric per ablation arm, seeds side by side."""
    if not rows:
        raise InvalidInputError("no ablation rows to plot")
    groups = []
    for row in rows:
        g = str(row[group_key])
        if g not in groups:
            groups.append(g)
    seeds = sorted({row.get("seed", 0) for row in rows})
    width = 0.8 / len(seeds)
    fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(groups)), 4))
    for j, seed in enumerate(seeds):
        xs, ys = [], []
        for i, g in enumerate(groups):
            for row in rows:
                if str(row[group_key]) == g and row.get("seed", 0) == seed:
                    xs.append(i + (j - (len(seeds) - 1) / 2) * width)
                    ys.append(row[value_key] if row[value_key] is not None else 0.0)
        ax.bar(xs, ys, width=width, label=f"seed {seed}")
    ax.set_xticks(range(len(groups)))
    ax.set_xticklabels(groups, rotation=30, ha="right")
    ax.set_ylabel(value_key)
    ax.set_title(f"{group_key} ablation")
    if len(seeds) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
