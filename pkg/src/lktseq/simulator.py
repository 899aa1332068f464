"""Synthetic category-learning sessions with a logistic ground truth.

The default design mirrors a session of pretest, a learning stream whose
categories are presented at different block sizes (runs of consecutive
same-category trials), and a posttest mixing learned and novel items.
Outcomes are drawn trial by trial from a ground-truth model evaluated on
the realized history, so success/failure-dependent features stay
self-consistent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import expit

from .data import Phase, ComparisonTag, TrialRecord
from .dsl import ModelSpec, parse_model, render_model
from .features import _TermState, _component_value, _merge_params, term_label


@dataclass(frozen=True)
class DesignConfig:
    n_categories: int = 10
    n_exemplars: int = 4
    n_repetitions: int = 4
    block_sizes: tuple[int, ...] = (1, 2, 4, 8, 16)
    inter_trial_time: float = 5.0
    n_students: int = 20
    pretest: bool = True
    posttest: bool = True
    n_posttest_novel: int = 20
    warmup_trials: int = 8
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def blob_config(**overrides) -> DesignConfig:
    """A loose analog of a three-category blob-figures session."""
    base = dict(n_categories=3, n_exemplars=8, n_repetitions=3,
                block_sizes=(1, 8), warmup_trials=0, n_posttest_novel=12)
    base.update(overrides)
    return DesignConfig(**base)


@dataclass(frozen=True)
class SkeletonTrial:
    student_id: str
    item_id: str
    kc_id: str
    category: str
    phase: Phase
    time: float
    block_size: int | None
    novel: bool = False


@dataclass
class GroundTruthLearner:
    """A model spec with true coefficients and nonlinear parameters.

    ``coefficients`` is keyed by design-matrix column name; per-level
    columns fall back to their bare term label (a shared default), then
    to zero, so novel items naturally get no item intercept.
    """
    spec: ModelSpec
    coefficients: dict[str, float]
    nl_params: dict[str, dict[str, float]] = field(default_factory=dict)

    def coefficient(self, label: str, level: str | None = None) -> float:
        if level is not None:
            exact = self.coefficients.get(f"{label}#{level}")
            if exact is not None:
                return exact
        return self.coefficients.get(label, 0.0)

    def indexed_params(self) -> dict[int, dict[str, float]]:
        out = {}
        for i, term in enumerate(self.spec.terms):
            label = term_label(term)
            if label in self.nl_params:
                out[i] = dict(self.nl_params[label])
        return out

    def to_dict(self) -> dict:
        return {"formula": render_model(self.spec),
                "coefficients": self.coefficients,
                "nl_params": self.nl_params}

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruthLearner":
        return cls(spec=parse_model(data["formula"]),
                   coefficients=dict(data["coefficients"]),
                   nl_params={k: dict(v)
                              for k, v in data.get("nl_params", {}).items()})


def _category_ids(config: DesignConfig):
    return [f"cat{c:02d}" for c in range(config.n_categories)]


def _item_ids(config: DesignConfig, category_index: int):
    return [f"c{category_index:02d}_e{e}"
            for e in range(config.n_exemplars)]


def category_block_sizes(config: DesignConfig) -> dict[str, int]:
    """Round-robin assignment of categories to block sizes."""
    cats = _category_ids(config)
    return {cat: config.block_sizes[i % len(config.block_sizes)]
            for i, cat in enumerate(cats)}


def _schedule_learning(config: DesignConfig, rng) -> list[tuple[str, str]]:
    """Greedy run scheduler: emit same-category runs, avoiding immediate
    category repeats whenever another category still has runs left."""
    blocks = category_block_sizes(config)
    runs: list[tuple[str, list[str]]] = []
    for c, cat in enumerate(_category_ids(config)):
        stream: list[str] = []
        items = _item_ids(config, c)
        for _rep in range(config.n_repetitions):
            order = list(items)
            rng.shuffle(order)
            stream.extend(order)
        b = blocks[cat]
        for start in range(0, len(stream), b):
            runs.append((cat, stream[start:start + b]))
    remaining: dict[str, list[list[str]]] = {}
    order = list(range(len(runs)))
    rng.shuffle(order)
    for idx in order:
        cat, run = runs[idx]
        remaining.setdefault(cat, []).append(run)

    sequence: list[tuple[str, str]] = []
    prev = None
    while remaining:
        candidates = [c for c in remaining if c != prev]
        if not candidates:
            if prev is not None and len(remaining) == 1:
                warnings.warn("single category left; interleaving constraint "
                              "relaxed")
            candidates = list(remaining)
        # Random choice spreads runs across the session; the dominant
        # category is forced only when delaying it would strand its runs.
        counts = {c: len(remaining[c]) for c in remaining}
        total = sum(counts.values())
        top = max(counts.values())
        dominant = sorted(c for c in candidates if counts[c] == top)
        if dominant and 2 * top > total:
            cat = dominant[int(rng.integers(len(dominant)))]
        else:
            ordered = sorted(candidates)
            cat = ordered[int(rng.integers(len(ordered)))]
        run = remaining[cat].pop(0)
        if not remaining[cat]:
            del remaining[cat]
        sequence.extend((cat, item) for item in run)
        prev = cat
    return sequence


def generate_sequence(config: DesignConfig) -> dict[str, list[SkeletonTrial]]:
    """Ordered trial skeletons (no outcomes) for every simulated student."""
    blocks = category_block_sizes(config)
    learned_items = [(cat, item)
                     for c, cat in enumerate(_category_ids(config))
                     for item in _item_ids(config, c)]
    novel_items = []
    for j in range(config.n_posttest_novel):
        c = j % config.n_categories
        cat = _category_ids(config)[c]
        novel_items.append((cat, f"c{c:02d}_n{j // config.n_categories}"))

    students: dict[str, list[SkeletonTrial]] = {}
    for s in range(config.n_students):
        rng = np.random.default_rng([config.seed, s])
        sid = f"s{s:04d}"
        stream: list[tuple[str, str, Phase, bool]] = []
        if config.pretest:
            order = list(learned_items)
            rng.shuffle(order)
            stream.extend((cat, item, Phase.pretest, False)
                          for cat, item in order)
        for j in range(config.warmup_trials):
            stream.append(("warmup", f"warmup_{j}", Phase.learning, False))
        stream.extend((cat, item, Phase.learning, False)
                      for cat, item in _schedule_learning(config, rng))
        if config.posttest:
            order = ([(cat, item, False) for cat, item in learned_items]
                     + [(cat, item, True) for cat, item in novel_items])
            rng.shuffle(order)
            stream.extend((cat, item, Phase.posttest, novel)
                          for cat, item, novel in order)
        trials = []
        for i, (cat, item, phase, novel) in enumerate(stream):
            trials.append(SkeletonTrial(
                student_id=sid, item_id=item, kc_id=cat, category=cat,
                phase=phase, time=i * config.inter_trial_time,
                block_size=blocks.get(cat), novel=novel))
        students[sid] = trials
    return students


def simulate_outcomes(skeleton: dict[str, list[SkeletonTrial]],
                      learner: GroundTruthLearner,
                      seed: int = 0) -> dict[str, list[TrialRecord]]:
    """Draw Bernoulli outcomes trial by trial from the ground truth."""
    params = _merge_params(learner.spec, learner.indexed_params())
    students: dict[str, list[TrialRecord]] = {}
    for s, sid in enumerate(sorted(skeleton)):
        rng = np.random.default_rng([seed, s])
        states = [_TermState(t, params[i])
                  for i, t in enumerate(learner.spec.terms)]
        prev_category = None
        records: list[TrialRecord] = []
        for idx, sk in enumerate(skeleton[sid]):
            if prev_category is None:
                tag = ComparisonTag.NONE
            elif sk.category == prev_category:
                tag = ComparisonTag.SAME
            else:
                tag = ComparisonTag.DIFFERENT
            logit = 0.0
            values = []
            for term, state in zip(learner.spec.terms, states):
                trial_proxy = TrialRecord(
                    student_id=sk.student_id, item_id=sk.item_id,
                    kc_id=sk.kc_id, outcome=0, time=sk.time,
                    category=sk.category)
                level = _component_value(term, trial_proxy)
                value = state.value(level, sk.time)
                label = term_label(term)
                if term.feature == "intercept" or term.per_level:
                    coef = learner.coefficient(label, level)
                else:
                    coef = learner.coefficient(label)
                logit += coef * value
                values.append((state, level))
            p = float(expit(logit))
            outcome = int(rng.random() < p)
            record = TrialRecord(
                student_id=sk.student_id, item_id=sk.item_id,
                kc_id=sk.kc_id, outcome=outcome, time=sk.time,
                phase=sk.phase, category=sk.category,
                block_size=sk.block_size, sequence_index=idx,
                extra={"Novel": "1" if sk.novel else "0"})
            for state, level in values:
                state.update(level, record, tag)
            records.append(record)
            prev_category = sk.category
        students[sid] = records
    return students


def truth_probabilities(learner: GroundTruthLearner, students: dict):
    """Ground-truth p for realized trials, in design-matrix row order."""
    from .features import build_design_matrix, spec_columns
    columns = spec_columns(learner.spec, students)
    dm = build_design_matrix(learner.spec, students,
                             nl_params=learner.indexed_params(),
                             columns=columns)
    beta = np.zeros(len(columns))
    for j, name in enumerate(columns):
        if "#" in name:
            label, level = name.split("#", 1)
            beta[j] = learner.coefficient(label, level)
        else:
            beta[j] = learner.coefficient(name)
    return expit(dm.X @ beta), dm


def trials_to_frame(students: dict[str, list[TrialRecord]]):
    """Flatten simulated trials into the default ingestion schema."""
    import pandas as pd
    from .data import DEFAULT_COLUMNS
    rows = []
    for sid in sorted(students):
        for t in students[sid]:
            row = {
                DEFAULT_COLUMNS["student"]: t.student_id,
                DEFAULT_COLUMNS["item"]: t.item_id,
                DEFAULT_COLUMNS["kc"]: t.kc_id,
                DEFAULT_COLUMNS["outcome"]: t.outcome,
                DEFAULT_COLUMNS["time"]: t.time,
                DEFAULT_COLUMNS["phase"]: t.phase.value,
                DEFAULT_COLUMNS["category"]: t.category,
                DEFAULT_COLUMNS["block_size"]:
                    "" if t.block_size is None else t.block_size,
            }
            row.update(t.extra)
            rows.append(row)
    return pd.DataFrame(rows)
