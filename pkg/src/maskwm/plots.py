"""Plot rendering for training curves and score-table reports.

Every figure is written as a PNG next to a CSV holding exactly the points
drawn, so downstream tooling never has to re-derive values from pixels.
"""
from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

import numpy as np  # noqa: E402

LOSS_KEYS = ["loss_total", "loss_rew", "loss_term", "loss_dyn", "loss_rep", "loss_recon"]
AGENT_KEYS = ["actor_loss", "critic_loss", "entropy", "S"]
EVAL_KEYS = ["eval_return", "perplexity"]


def read_metrics(path: str) -> dict:
    """Metrics CSV -> column dict; empty cells become None."""
    with open(path, "r", newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"metrics file {path!r} has no data rows")
    columns: dict = {key: [] for key in rows[0].keys()}
    for row in rows:
        for key, raw in row.items():
            columns[key].append(float(raw) if raw not in ("", None) else None)
    return columns


def _write_points(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _curve_panel(columns: dict, keys: list, title: str, png: str, csv_path: str) -> None:
    steps = columns["step"]
    fig, ax = plt.subplots(figsize=(7, 4))
    present = []
    for key in keys:
        if key not in columns:
            continue
        pts = [(s, v) for s, v in zip(steps, columns[key]) if v is not None]
        if not pts:
            continue
        xs, ys = zip(*pts)
        ax.plot(xs, ys, label=key)
        present.append((key, pts))
    ax.set_xlabel("env step")
    ax.set_title(title)
    if present:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(png, dpi=110)
    plt.close(fig)
    rows = []
    for key, pts in present:
        rows.extend((key, s, v) for s, v in pts)
    _write_points(csv_path, ["series", "step", "value"], rows)


def plot_metrics(metrics_path: str, out_dir: str) -> list:
    """Render loss/agent/eval curve panels; returns the files written."""
    os.makedirs(out_dir, exist_ok=True)
    columns = read_metrics(metrics_path)
    outputs = []
    for name, keys, title in [
        ("losses", LOSS_KEYS, "world model losses"),
        ("agent", AGENT_KEYS, "agent diagnostics"),
        ("eval", EVAL_KEYS, "evaluation"),
    ]:
        png = os.path.join(out_dir, f"{name}.png")
        pts = os.path.join(out_dir, f"{name}_points.csv")
        _curve_panel(columns, keys, title, png, pts)
        outputs.extend([png, pts])
    return outputs


def plot_aggregates(report: dict, out_dir: str) -> list:
    """Bar chart of mean/median/IQM/optimality gap, optional baseline bars."""
    os.makedirs(out_dir, exist_ok=True)
    names = ["mean", "median", "iqm", "optimality_gap"]
    agg = report["aggregates"]
    base = report.get("baseline_aggregates")
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(names))
    width = 0.38 if base else 0.6
    ax.bar(x - (width / 2 if base else 0), [agg[n] for n in names], width, label="score")
    if base:
        ax.bar(x + width / 2, [base[n] for n in names], width,
               label=report.get("baseline", "baseline"))
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylabel("human-normalised")
    ax.set_title("aggregate scores")
    ax.legend(fontsize=8)
    fig.tight_layout()
    png = os.path.join(out_dir, "aggregates.png")
    fig.savefig(png, dpi=110)
    plt.close(fig)
    csv_path = os.path.join(out_dir, "aggregates_points.csv")
    rows = [("score", n, agg[n]) for n in names]
    if base:
        rows += [(report.get("baseline", "baseline"), n, base[n]) for n in names]
    _write_points(csv_path, ["series", "aggregate", "value"], rows)
    return [png, csv_path]


def plot_profile(profiles: dict, taus, out_dir: str) -> list:
    """Performance profiles: fraction of runs above each threshold."""
    os.makedirs(out_dir, exist_ok=True)
    taus = np.asarray(taus, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, fracs in profiles.items():
        ax.plot(taus, fracs, label=name)
    ax.set_xlabel("human-normalised score threshold")
    ax.set_ylabel("fraction of runs above")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("performance profile")
    ax.legend(fontsize=8)
    fig.tight_layout()
    png = os.path.join(out_dir, "profile.png")
    fig.savefig(png, dpi=110)
    plt.close(fig)
    csv_path = os.path.join(out_dir, "profile_points.csv")
    rows = []
    for name, fracs in profiles.items():
        rows.extend((name, float(t), float(v)) for t, v in zip(taus, fracs))
    _write_points(csv_path, ["series", "tau", "fraction"], rows)
    return [png, csv_path]


def plot_improvement(pi_value: float, baseline: str, out_dir: str) -> list:
    """Single-bar probability-of-improvement panel with the 0.5 line."""
    os.makedirs(out_dir, exist_ok=True)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.bar([0], [pi_value], width=0.5)
    ax.axhline(0.5, color="grey", linestyle="--", linewidth=1)
    ax.set_xticks([0])
    ax.set_xticklabels([f"vs {baseline}"])
    ax.set_ylim(0, 1)
    ax.set_ylabel("P(score > baseline)")
    ax.set_title("probability of improvement")
    fig.tight_layout()
    png = os.path.join(out_dir, "improvement.png")
    fig.savefig(png, dpi=110)
    plt.close(fig)
    csv_path = os.path.join(out_dir, "improvement_points.csv")
    _write_points(csv_path, ["baseline", "probability"], [(baseline, pi_value)])
    return [png, csv_path]
