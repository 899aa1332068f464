"""Streaming computation of practice, spacing and attentional features.

Every feature at trial t is a function of strictly earlier trials, so a
single forward pass per student produces the whole design matrix.  Ages
and elapsed times are floored at one second before any power-law decay
is applied, since t**(-d) diverges at zero and fully blocked sequences
can have near-zero gaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import ComparisonTag, SequenceContext, TrialRecord
from .dsl import (COUNTING_FEATURES, ModelSpec, Term, effective_params,
                  render_term)

#: Floor (seconds) on ages and elapsed times fed to power-law decays.
T_MIN = 1.0


# ---------------------------------------------------------------------------
# Pure feature kernels

def recency_value(elapsed: float, d: float) -> float:
    """Power-law decayed trace of the most recent practice: t**(-d)."""
    return max(elapsed, T_MIN) ** (-d)


def logitdec_step(s: float, f: float, outcome: int, w: float):
    """One update of the decayed success/failure masses."""
    return s * w + outcome, f * w + (1 - outcome)


def ppe_value(ages, lags, x: float, c: float, b: float, m: float) -> float:
    """Activation from all prior practices with spacing-dependent decay.

    Ages are weighted by t**(-x) (normalized) into a model time T; the
    stability term averages 1/ln(lag + e) over inter-practice lags, so
    wider spacing lowers the decay rate b + m*S.
    """
    n = len(ages)
    if n == 0:
        return 0.0
    t = [max(a, T_MIN) for a in ages]
    raw = [ti ** (-x) for ti in t]
    total = sum(raw)
    model_time = sum(r * ti for r, ti in zip(raw, t)) / total
    if n >= 2:
        stability = sum(1.0 / math.log(lag + math.e) for lag in lags) / (n - 1)
    else:
        stability = 0.0
    decay = b + m * stability
    return n ** c * model_time ** (-decay)


def base4_value(n: int, first_age: float, mean_lag: float,
                x: float, c: float, d: float, s0: float) -> float:
    """Activation from first-practice age with a mean-spacing scale factor."""
    if n == 0:
        return 0.0
    return (mean_lag + s0) ** x * n ** c * max(first_age, T_MIN) ** (-d)


# ---------------------------------------------------------------------------
# Parameter bundles and context-level wrappers

@dataclass(frozen=True)
class RecencyParams:
    d: float = 0.5


@dataclass(frozen=True)
class PpeParams:
    x: float = 0.6
    c: float = 0.1
    b: float = 0.04
    m: float = 0.08


@dataclass(frozen=True)
class Base4Params:
    x: float = 0.5
    c: float = 0.1
    d: float = 0.5
    s0: float = 1.0


@dataclass
class LogitdecState:
    w: float = 0.9
    s: float = 1.0
    f: float = 1.0

    def update(self, outcome: int):
        self.s, self.f = logitdec_step(self.s, self.f, outcome, self.w)

    @property
    def value(self) -> float:
        return math.log(self.s / self.f)


def feat_lineafm(ctx: SequenceContext, split: ComparisonTag | None = None) -> int:
    if split is None:
        return ctx.prior_kc_count
    return ctx.tag_count(split)


def feat_linesuc(ctx: SequenceContext, split: ComparisonTag | None = None) -> int:
    if split is None:
        return ctx.prior_kc_successes
    return ctx.tag_count(split, outcome=1)


def feat_linefail(ctx: SequenceContext, split: ComparisonTag | None = None) -> int:
    if split is None:
        return ctx.prior_kc_failures
    return ctx.tag_count(split, outcome=0)


def feat_logitdec(history, w: float) -> float:
    """Fold the decayed-mass recurrence over prior outcomes, return ln(s/f)."""
    state = LogitdecState(w=w)
    for outcome in history:
        state.update(outcome)
    return state.value


def feat_recency(ctx: SequenceContext, params: RecencyParams) -> float:
    if ctx.prior_kc_count == 0:
        return 0.0
    return recency_value(ctx.ages[-1], params.d)


def feat_ppe(ctx: SequenceContext, params: PpeParams) -> float:
    return ppe_value(ctx.ages, ctx.lags, params.x, params.c, params.b, params.m)


def feat_base4(ctx: SequenceContext, params: Base4Params) -> float:
    n = ctx.prior_kc_count
    if n == 0:
        return 0.0
    mean_lag = sum(ctx.lags) / len(ctx.lags) if ctx.lags else 0.0
    return base4_value(n, ctx.ages[0], mean_lag,
                       params.x, params.c, params.d, params.s0)


# ---------------------------------------------------------------------------
# Design matrix assembly

def term_label(term: Term) -> str:
    """Stable label for a term, ignoring pinned parameter values."""
    return render_term(Term(feature=term.feature, component=term.component,
                            per_level=term.per_level,
                            interaction=term.interaction))


@dataclass
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    columns: list[str]
    rows: pd.DataFrame
    missing_levels: list[str] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]


def _component_value(term: Term, trial: TrialRecord) -> str:
    if term.component == "student":
        return trial.student_id
    if term.component == "item":
        return trial.item_id
    return trial.kc_id


class _TermState:
    """Per-student streaming state for one model term."""

    def __init__(self, term: Term, params: dict):
        self.term = term
        self.params = params
        self.counts: dict = {}     # level -> {(tag, outcome): n}
        self.logit: dict = {}      # level -> (s, f)
        self.last_time: dict = {}  # level -> t
        self.times: dict = {}      # level -> [t, ...]
        self.first: dict = {}      # level -> (first_t, last_t, n)

    def value(self, level: str, now: float) -> float:
        feature = self.term.feature
        if feature == "intercept":
            return 1.0
        if feature in COUNTING_FEATURES:
            table = self.counts.get(level, {})
            if self.term.interaction:
                tag = ComparisonTag(self.term.interaction[1])
                tags = (tag,)
            else:
                tags = (ComparisonTag.NONE, ComparisonTag.SAME,
                        ComparisonTag.DIFFERENT)
            if feature == "lineafm":
                outcomes = (0, 1)
            elif feature == "linesuc":
                outcomes = (1,)
            else:
                outcomes = (0,)
            return float(sum(table.get((t, o), 0)
                             for t in tags for o in outcomes))
        if feature == "logitdec":
            s, f = self.logit.get(level, (1.0, 1.0))
            return math.log(s / f)
        if feature == "recency":
            last = self.last_time.get(level)
            if last is None:
                return 0.0
            return recency_value(now - last, self.params["d"])
        if feature == "ppe":
            ts = self.times.get(level)
            if not ts:
                return 0.0
            ages = [now - t for t in ts]
            lags = [b - a for a, b in zip(ts, ts[1:])]
            return ppe_value(ages, lags, self.params["x"], self.params["c"],
                             self.params["b"], self.params["m"])
        if feature == "base4":
            rec = self.first.get(level)
            if rec is None:
                return 0.0
            first_t, last_t, n = rec
            mean_lag = (last_t - first_t) / (n - 1) if n >= 2 else 0.0
            return base4_value(n, now - first_t, mean_lag, self.params["x"],
                               self.params["c"], self.params["d"],
                               self.params["s0"])
        raise AssertionError(feature)

    def update(self, level: str, trial: TrialRecord, tag: ComparisonTag):
        feature = self.term.feature
        if feature in COUNTING_FEATURES:
            table = self.counts.setdefault(level, {})
            key = (tag, trial.outcome)
            table[key] = table.get(key, 0) + 1
        elif feature == "logitdec":
            s, f = self.logit.get(level, (1.0, 1.0))
            self.logit[level] = logitdec_step(s, f, trial.outcome,
                                              self.params["w"])
        elif feature == "recency":
            self.last_time[level] = trial.time
        elif feature == "ppe":
            self.times.setdefault(level, []).append(trial.time)
        elif feature == "base4":
            rec = self.first.get(level)
            if rec is None:
                self.first[level] = (trial.time, trial.time, 1)
            else:
                self.first[level] = (rec[0], trial.time, rec[2] + 1)


def _merge_params(spec: ModelSpec, nl_params) -> list[dict]:
    merged = []
    for i, term in enumerate(spec.terms):
        values = effective_params(term)
        if nl_params and i in nl_params:
            values.update(nl_params[i])
        merged.append(values)
    return merged


def _expands_per_level(term: Term) -> bool:
    return term.feature == "intercept" or term.per_level


def spec_columns(spec: ModelSpec, students: dict) -> list[str]:
    """Deterministic column names: term order, then lexicographic levels."""
    levels: dict[int, set] = {i: set() for i, t in enumerate(spec.terms)
                              if _expands_per_level(t)}
    if levels:
        for trials in students.values():
            for trial in trials:
                for i in levels:
                    levels[i].add(_component_value(spec.terms[i], trial))
    columns = []
    for i, term in enumerate(spec.terms):
        label = term_label(term)
        if _expands_per_level(term):
            columns.extend(f"{label}#{lv}" for lv in sorted(levels[i]))
        else:
            columns.append(label)
    return columns


def build_design_matrix(spec: ModelSpec, students: dict,
                        nl_params: dict | None = None,
                        columns: list[str] | None = None) -> DesignMatrix:
    """One design row per trial, in global (student, sequence) order.

    ``nl_params`` maps term index to parameter overrides for the outer
    search.  Passing a training run's ``columns`` aligns a prediction
    matrix to it: levels unseen in training contribute nothing and are
    reported in ``missing_levels``.
    """
    if columns is None:
        columns = spec_columns(spec, students)
    col_index = {name: j for j, name in enumerate(columns)}
    params = _merge_params(spec, nl_params)

    n = sum(len(t) for t in students.values())
    X = np.zeros((n, len(columns)))
    y = np.zeros(n)
    meta = {k: [] for k in ("student", "item", "kc", "category", "outcome",
                            "time", "phase", "block_size", "repetition",
                            "sequence_index")}
    extra_cols: dict[str, list] = {}
    missing: set[str] = set()

    row = 0
    for sid in sorted(students):
        trials = students[sid]
        states = [_TermState(t, params[i]) for i, t in enumerate(spec.terms)]
        item_seen: dict[str, int] = {}
        prev_category = None
        for trial in trials:
            if prev_category is None:
                tag = ComparisonTag.NONE
            elif trial.category == prev_category:
                tag = ComparisonTag.SAME
            else:
                tag = ComparisonTag.DIFFERENT
            for i, (term, state) in enumerate(zip(spec.terms, states)):
                level = _component_value(term, trial)
                value = state.value(level, trial.time)
                if _expands_per_level(term):
                    name = f"{term_label(term)}#{level}"
                    j = col_index.get(name)
                    if j is None:
                        missing.add(name)
                    else:
                        X[row, j] = value
                else:
                    X[row, col_index[term_label(term)]] = value
                state.update(level, trial, tag)
            y[row] = trial.outcome
            rep = item_seen.get(trial.item_id, 0) + 1
            item_seen[trial.item_id] = rep
            meta["student"].append(trial.student_id)
            meta["item"].append(trial.item_id)
            meta["kc"].append(trial.kc_id)
            meta["category"].append(trial.category)
            meta["outcome"].append(trial.outcome)
            meta["time"].append(trial.time)
            meta["phase"].append(trial.phase.value)
            meta["block_size"].append(trial.block_size)
            meta["repetition"].append(rep)
            meta["sequence_index"].append(trial.sequence_index)
            for k, v in trial.extra.items():
                extra_cols.setdefault(k, [None] * row).append(v)
            for k in extra_cols:
                if len(extra_cols[k]) < row + 1:
                    extra_cols[k].append(None)
            prev_category = trial.category
            row += 1
    meta.update(extra_cols)
    rows = pd.DataFrame(meta)
    return DesignMatrix(X=X, y=y, columns=list(columns), rows=rows,
                        missing_levels=sorted(missing))
