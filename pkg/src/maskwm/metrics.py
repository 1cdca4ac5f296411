"""Score-table ingestion and robust evaluation aggregates.

Scores are normalised per task against random/human anchors; aggregates
follow the pooled-run methodology: IQM trims the pooled run distribution,
mean and median summarise per-task means, the optimality gap measures how
far runs fall short of human level.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _scipy_stats

from .numerics import RngStream


def perplexity(log_probs) -> float:
    """exp(-mean(log_probs)); log_probs are per-token log-likelihoods."""
    arr = np.asarray(log_probs, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("perplexity of an empty sequence is undefined")
    if not np.isfinite(arr).all():
        raise ValueError("log-probabilities must be finite")
    return float(np.exp(-arr.mean()))


def human_normalized(score: float, random: float, human: float) -> float:
    """(score - random) / (human - random); anchors must differ."""
    if human == random:
        raise ValueError("human and random anchors are equal; HNS undefined")
    return (score - random) / (human - random)


@dataclass
class ScoreTable:
    """Per-task anchors and per-seed scores, with optional extra algorithms.

    scores maps task -> {seed: score} for the primary column; extras maps
    algorithm name -> task -> {seed: score}.
    """

    anchors: dict = field(default_factory=dict)   # task -> (random, human)
    scores: dict = field(default_factory=dict)    # task -> {seed: score}
    extras: dict = field(default_factory=dict)    # name -> task -> {seed: score}

    def tasks(self) -> list:
        return sorted(self.scores)

    def columns(self) -> list:
        return ["score"] + sorted(self.extras)

    def runs(self, column: str = "score") -> dict:
        """task -> list of raw scores ordered by seed."""
        source = self.scores if column == "score" else self.extras.get(column)
        if source is None:
            raise ValueError(f"no score column named {column!r}")
        return {t: [s for _, s in sorted(source[t].items())] for t in sorted(source)}

    def hns(self, column: str = "score") -> dict:
        """task -> list of human-normalised scores ordered by seed."""
        out = {}
        for task, vals in self.runs(column).items():
            random, human = self.anchors[task]
            out[task] = [human_normalized(v, random, human) for v in vals]
        return out


REQUIRED_COLUMNS = ["task", "random", "human", "seed", "score"]


def load_score_table(path: str) -> ScoreTable:
    """Read `task,random,human,seed,score[,extra...]` rows.

    Extra numeric columns are treated as other algorithms' raw scores on the
    same task/seed, selectable as probability-of-improvement baselines.
    """
    table = ScoreTable()
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty score file") from None
        header = [h.strip() for h in header]
        if header[: len(REQUIRED_COLUMNS)] != REQUIRED_COLUMNS:
            raise ValueError(
                f"{path}: header must start with {','.join(REQUIRED_COLUMNS)}, got {header}"
            )
        extra_names = header[len(REQUIRED_COLUMNS):]
        for name in extra_names:
            table.extras[name] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            task = row[0].strip()
            try:
                random, human = float(row[1]), float(row[2])
                seed = int(row[3])
                score = float(row[4])
                extra_vals = [float(v) for v in row[5:]]
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: non-numeric field ({e})") from None
            if human == random:
                raise ValueError(f"{path}:{lineno}: task {task!r} has equal anchors")
            if task in table.anchors and table.anchors[task] != (random, human):
                raise ValueError(f"{path}:{lineno}: task {task!r} anchors disagree with earlier rows")
            table.anchors[task] = (random, human)
            bucket = table.scores.setdefault(task, {})
            if seed in bucket:
                raise ValueError(f"{path}:{lineno}: duplicate (task, seed) = ({task!r}, {seed})")
            bucket[seed] = score
            for name, val in zip(extra_names, extra_vals):
                table.extras[name].setdefault(task, {})[seed] = val
    if not table.scores:
        raise ValueError(f"{path}: no score rows")
    return table


def _pooled(hns_by_task: dict) -> np.ndarray:
    vals = [v for runs in hns_by_task.values() for v in runs]
    return np.asarray(vals, dtype=np.float64)


def iqm(values) -> float:
    """Mean of the middle 50%: drop the lowest and highest quarter of runs."""
    arr = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if arr.size == 0:
        raise ValueError("IQM of an empty set is undefined")
    return float(_scipy_stats.trim_mean(arr, 0.25))


def optimality_gap(values) -> float:
    """Mean shortfall below human level: mean(1 - min(v, 1))."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    return float(np.mean(1.0 - np.minimum(arr, 1.0)))


def aggregate(hns_by_task: dict, iqm_mode: str = "pooled") -> dict:
    """Summary statistics over per-task HNS runs.

    Mean and median are taken over per-task means; IQM and the optimality
    gap are computed over the pooled run distribution (iqm_mode
    "task_means" switches IQM to per-task means first).
    """
    if not hns_by_task:
        raise ValueError("aggregate of an empty table is undefined")
    if iqm_mode not in ("pooled", "task_means"):
        raise ValueError(f"unknown iqm_mode {iqm_mode!r}")
    task_means = np.asarray(
        [np.mean(runs) for _, runs in sorted(hns_by_task.items())], dtype=np.float64
    )
    pooled = _pooled(hns_by_task)
    return {
        "mean": float(task_means.mean()),
        "median": float(np.median(task_means)),
        "iqm": iqm(pooled if iqm_mode == "pooled" else task_means),
        "optimality_gap": optimality_gap(pooled),
    }


def probability_of_improvement(x_scores: dict, y_scores: dict) -> float:
    """P(X beats Y), ties at half weight, averaged over shared tasks."""
    shared = sorted(set(x_scores) & set(y_scores))
    if not shared:
        raise ValueError("no shared tasks between the two score sets")
    per_task = []
    for task in shared:
        xs = np.asarray(x_scores[task], dtype=np.float64)
        ys = np.asarray(y_scores[task], dtype=np.float64)
        wins = (xs[:, None] > ys[None, :]).sum()
        ties = (xs[:, None] == ys[None, :]).sum()
        per_task.append((wins + 0.5 * ties) / (xs.size * ys.size))
    return float(np.mean(per_task))


def performance_profile(hns_runs, taus) -> np.ndarray:
    """Fraction of runs strictly above each threshold; non-increasing."""
    runs = np.asarray(hns_runs, dtype=np.float64).reshape(-1)
    if runs.size == 0:
        raise ValueError("performance profile of an empty set is undefined")
    taus = np.asarray(taus, dtype=np.float64)
    return (runs[None, :] > taus[:, None]).mean(axis=1)


def stratified_bootstrap_ci(hns_by_task: dict, stat_fn, stream: RngStream,
                            n_resamples: int = 2000, alpha: float = 0.05) -> tuple:
    """Percentile CI from task-stratified resampling of runs."""
    tasks = sorted(hns_by_task)
    stats = np.empty(n_resamples, dtype=np.float64)
    for i in range(n_resamples):
        resampled = {}
        for task in tasks:
            runs = hns_by_task[task]
            idx = stream.integers(0, len(runs), (len(runs),))
            resampled[task] = [runs[j] for j in idx]
        stats[i] = stat_fn(resampled)
    lo, hi = np.percentile(stats, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(lo), float(hi)


def stats_report(table: ScoreTable, baseline: str | None = None,
                 iqm_mode: str = "pooled") -> dict:
    """Full JSON-ready report: aggregates plus PI against a baseline column."""
    hns = table.hns("score")
    report = {
        "tasks": table.tasks(),
        "aggregates": aggregate(hns, iqm_mode=iqm_mode),
    }
    if baseline is not None:
        if baseline not in table.extras:
            raise ValueError(
                f"no baseline column named {baseline!r}; available: {sorted(table.extras)}"
            )
        base_hns = table.hns(baseline)
        report["baseline"] = baseline
        report["baseline_aggregates"] = aggregate(base_hns, iqm_mode=iqm_mode)
        report["probability_of_improvement"] = probability_of_improvement(hns, base_hns)
    return report
