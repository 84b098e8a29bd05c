"""Report rendering: summary tables plus matplotlib figures written next to
the CSV output.
"""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import io as eio
from .experiment import read_ablation_csv, read_metrics_csv, write_aggregate_csv
from .metrics import MetricReport


def render_experiment_report(run_dir, out_dir):
    """Summary CSV plus figures for one run directory."""
    report = read_metrics_csv(os.path.join(run_dir, "metrics.csv"))
    frechet_path = os.path.join(run_dir, "frechet.csv")
    if os.path.exists(frechet_path):
        _, _, rows = eio.read_csv(frechet_path, "frechet-v1")
        for seed, value in rows:
            report.frechet[int(seed)] = float(value)
    os.makedirs(out_dir, exist_ok=True)
    write_aggregate_csv(os.path.join(out_dir, "summary.csv"), report.aggregate())
    figures = [_figure_l2_histogram(report, out_dir)]
    if report.frechet:
        figures.append(_figure_per_seed(report, out_dir))
    return [f for f in figures if f]


def _figure_l2_histogram(report, out_dir):
    vals = [r.l2 for r in report.rows]
    if not vals:
        return None
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(vals, bins=30, color="#4878d0")
    ax.set_xlabel("per-sample L2 to source")
    ax.set_ylabel("count")
    ax.set_title("faithfulness distribution")
    path = os.path.join(out_dir, "l2_histogram.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _figure_per_seed(report, out_dir):
    seeds = report.seeds()
    l2_means = report.per_seed_mean("l2")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax1.plot(seeds, [l2_means[s] for s in seeds], "o-", color="#4878d0")
    ax1.set_xlabel("repeat seed")
    ax1.set_ylabel("mean L2")
    ax1.set_title("faithfulness by seed")
    fseeds = sorted(report.frechet)
    ax2.plot(fseeds, [report.frechet[s] for s in fseeds], "o-", color="#d65f5f")
    ax2.set_xlabel("repeat seed")
    ax2.set_ylabel("Fréchet proxy")
    ax2.set_title("realism by seed")
    path = os.path.join(out_dir, "per_seed.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_ablation_report(ablation_csv, out_dir):
    """Trend figures (one per metric) next to a copied summary table."""
    rows = read_ablation_csv(ablation_csv)
    if not rows:
        return []
    param = rows[0]["param"]
    os.makedirs(out_dir, exist_ok=True)
    labels = [r["value"] for r in rows]
    try:
        xs = [float(v) for v in labels]
        numeric = True
    except ValueError:
        xs = list(range(len(labels)))
        numeric = False
    figures = []
    for metric, color in (("l2", "#4878d0"), ("frechet", "#d65f5f"),
                          ("psnr", "#6acc64"), ("ssim", "#956cb4")):
        means = [r.get(f"{metric}_mean") for r in rows]
        if all(m is None for m in means):
            continue
        stds = [r.get(f"{metric}_std") or 0.0 for r in rows]
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.errorbar(xs, means, yerr=stds, fmt="o-", color=color, capsize=3)
        if not numeric:
            ax.set_xticks(xs)
            ax.set_xticklabels(labels)
        ax.set_xlabel(param)
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} vs {param}")
        path = os.path.join(out_dir, f"ablation_{metric}.png")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        figures.append(path)
    summary_rows = [[r["param"], r["value"]]
                    + [r.get(c) for c in _summary_columns(rows)] for r in rows]
    eio.write_csv(os.path.join(out_dir, "summary.csv"), "ablation-v1",
                  ["param", "value"] + _summary_columns(rows), summary_rows)
    return figures


def _summary_columns(rows):
    return ["l2_mean", "l2_std", "psnr_mean", "psnr_std",
            "ssim_mean", "ssim_std", "frechet_mean", "frechet_std"]
