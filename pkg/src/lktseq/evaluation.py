"""Student-stratified repeated cross-validation and fit metrics.

Folds partition students, never trials, so a held-out student's data is
never seen during training.  Predictions on test students still use each
student's own trial history for feature computation; only the fitted
parameters carry over from training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .dsl import ModelSpec, render_model
from .estimator import SearchConfig, fit_model, null_log_likelihood, predict

P_CLIP = 1e-12


@dataclass(frozen=True)
class CvPlan:
    n_folds: int = 5
    n_repeats: int = 10
    seed: int = 0


@dataclass(frozen=True)
class Grouping:
    """A prediction/observation correlation over group means.

    ``filters`` maps row columns (phase, block_size, extras...) to the
    required value; ``keys`` define the groups whose mean prediction and
    mean observed accuracy are correlated.
    """
    name: str
    keys: tuple[str, ...]
    filters: tuple[tuple[str, str], ...] = ()


DEFAULT_GROUPINGS = (
    Grouping("r1", keys=("block_size", "repetition"),
             filters=(("phase", "learning"),)),
    Grouping("r2", keys=("block_size",),
             filters=(("phase", "posttest"),)),
)


@dataclass
class FoldRecord:
    repeat: int
    fold: int
    n_test: int
    metrics: dict = field(default_factory=dict)     # name -> float | None
    tables: dict = field(default_factory=dict)      # grouping -> DataFrame
    failed: bool = False
    error: str = ""


@dataclass
class CvReport:
    formula: str
    plan: CvPlan
    folds: list[FoldRecord]
    means: dict
    undefined: dict
    n_failed: int
    tables: dict = field(default_factory=dict)      # pooled per grouping

    def to_dict(self) -> dict:
        return {
            "formula": self.formula,
            "plan": {"n_folds": self.plan.n_folds,
                     "n_repeats": self.plan.n_repeats,
                     "seed": self.plan.seed},
            "folds": [{
                "repeat": f.repeat, "fold": f.fold, "n_test": f.n_test,
                "metrics": f.metrics, "failed": f.failed, "error": f.error,
            } for f in self.folds],
            "means": self.means,
            "undefined": self.undefined,
            "n_failed": self.n_failed,
        }


def make_folds(students, plan: CvPlan) -> list[dict]:
    """Per-repeat assignment of student -> fold index, deterministic in seed."""
    ids = sorted(students)
    if len(ids) < plan.n_folds:
        raise ValueError(f"{len(ids)} students cannot fill {plan.n_folds} folds")
    rng = np.random.default_rng(plan.seed)
    assignments = []
    for _ in range(plan.n_repeats):
        order = [ids[i] for i in rng.permutation(len(ids))]
        chunks = np.array_split(np.arange(len(ids)), plan.n_folds)
        mapping = {}
        for fold, chunk in enumerate(chunks):
            for i in chunk:
                mapping[order[i]] = fold
        assignments.append(mapping)
    return assignments


def _clip(p):
    return np.clip(np.asarray(p, dtype=float), P_CLIP, 1 - P_CLIP)


def metric_r2(p, y, null_rate: float):
    """McFadden pseudo R-squared against a fixed-rate null; None if y is flat."""
    y = np.asarray(y, dtype=float)
    if np.all(y == y[0]):
        return None
    p = _clip(p)
    ll = float(np.sum(y * np.log(p) + (1 - y) * np.log(1 - p)))
    rate = min(max(null_rate, P_CLIP), 1 - P_CLIP)
    ll_null = float(np.sum(y * math.log(rate) + (1 - y) * math.log(1 - rate)))
    return 1.0 - ll / ll_null


def metric_auc(p, y):
    """Exact rank-based AUC, ties counted one half; None without both classes."""
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    from scipy.stats import rankdata
    ranks = rankdata(p, method="average")
    rank_sum = float(np.sum(ranks[y == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def metric_rmse(p, y) -> float:
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.sqrt(np.mean((p - y) ** 2)))


def grouped_correlation(p, y, rows: pd.DataFrame, group_by,
                        filters=None):
    """Pearson correlation of group-mean prediction vs observation.

    Returns ``(r, table)``; ``r`` is None with fewer than three groups or
    an empty filter result.  Group keys missing from ``rows`` are dropped.
    """
    frame = rows.copy()
    frame["_p"] = np.asarray(p, dtype=float)
    frame["_y"] = np.asarray(y, dtype=float)
    if filters:
        for col, value in (filters.items() if isinstance(filters, dict)
                           else filters):
            if col not in frame.columns:
                return None, pd.DataFrame()
            frame = frame[frame[col].astype(str) == str(value)]
    keys = [k for k in group_by if k in frame.columns]
    if not keys or frame.empty:
        return None, pd.DataFrame()
    grouped = (frame.groupby(keys, dropna=False)[["_p", "_y"]]
               .agg(["mean", "count"]))
    table = pd.DataFrame({
        "mean_prediction": grouped[("_p", "mean")],
        "mean_observed": grouped[("_y", "mean")],
        "n": grouped[("_y", "count")],
    }).reset_index()
    if len(table) < 3:
        return None, table
    mp = table["mean_prediction"].to_numpy()
    mo = table["mean_observed"].to_numpy()
    if np.std(mp) == 0 or np.std(mo) == 0:
        return None, table
    r = float(np.corrcoef(mp, mo)[0, 1])
    return r, table


def _fit_fold(spec, students, train_ids, search):
    train = {s: students[s] for s in sorted(train_ids)}
    return fit_model(spec, train, search=search)


def _evaluate_fold(spec, students, train_ids, test_ids, search, groupings):
    result = _fit_fold(spec, students, train_ids, search)
    test = {s: students[s] for s in sorted(test_ids)}
    p, dm = predict(spec, result, test)
    train_y = np.concatenate([[t.outcome for t in students[s]]
                              for s in sorted(train_ids)])
    null_rate = float(np.mean(train_y))
    metrics = {
        "r2_mcfadden": metric_r2(p, dm.y, null_rate),
        "auc": metric_auc(p, dm.y),
        "rmse": metric_rmse(p, dm.y),
    }
    tables = {}
    for grouping in groupings:
        r, table = grouped_correlation(p, dm.y, dm.rows, grouping.keys,
                                       grouping.filters)
        metrics[grouping.name] = r
        tables[grouping.name] = table
    return metrics, tables, len(dm.y)


def run_cv(spec: ModelSpec, students: dict, plan: CvPlan | None = None,
           groupings=DEFAULT_GROUPINGS, search: SearchConfig | None = None,
           jobs: int = 1) -> CvReport:
    """Repeated student-stratified cross-validation of one model."""
    plan = plan or CvPlan()
    search = search or SearchConfig()
    assignments = make_folds(students, plan)
    jobs_list = []
    for repeat, mapping in enumerate(assignments):
        for fold in range(plan.n_folds):
            test_ids = [s for s, f in mapping.items() if f == fold]
            train_ids = [s for s, f in mapping.items() if f != fold]
            jobs_list.append((repeat, fold, train_ids, test_ids))

    def run_one(job):
        repeat, fold, train_ids, test_ids = job
        record = FoldRecord(repeat=repeat, fold=fold, n_test=0)
        try:
            metrics, tables, n_test = _evaluate_fold(
                spec, students, train_ids, test_ids, search, groupings)
            record.metrics = metrics
            record.tables = tables
            record.n_test = n_test
        except Exception as exc:  # fold failure is recorded, not fatal
            record.failed = True
            record.error = str(exc)
        return record

    if jobs > 1:
        from joblib import Parallel, delayed
        records = Parallel(n_jobs=jobs)(delayed(run_one)(j) for j in jobs_list)
    else:
        records = [run_one(j) for j in jobs_list]

    metric_names = ["r2_mcfadden", "auc", "rmse"] + [g.name for g in groupings]
    means = {}
    undefined = {}
    for name in metric_names:
        values = [r.metrics.get(name) for r in records
                  if not r.failed and r.metrics.get(name) is not None]
        missing = sum(1 for r in records
                      if not r.failed and r.metrics.get(name) is None)
        means[name] = float(np.mean(values)) if values else None
        undefined[name] = missing

    pooled = {}
    for grouping in groupings:
        parts = [r.tables[grouping.name] for r in records
                 if not r.failed and not r.tables.get(grouping.name, pd.DataFrame()).empty]
        if parts:
            allrows = pd.concat(parts, ignore_index=True)
            keys = [k for k in grouping.keys if k in allrows.columns]
            pooled[grouping.name] = (
                allrows.groupby(keys, dropna=False)[
                    ["mean_prediction", "mean_observed", "n"]]
                .mean().reset_index())
        else:
            pooled[grouping.name] = pd.DataFrame()

    return CvReport(formula=render_model(spec), plan=plan,
                    folds=list(records), means=means, undefined=undefined,
                    n_failed=sum(1 for r in records if r.failed),
                    tables=pooled)
