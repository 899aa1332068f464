"""Trial-log ingestion and per-student sequence context.

A trial log is a delimited text file with one row per student response.
Rows are grouped by student, stably sorted by time, and indexed; the
sequence context derived from a student's stream carries everything the
feature layer needs (practice counts, ages, lags, comparison tags).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

import pandas as pd


class Phase(str, Enum):
    pretest = "pretest"
    learning = "learning"
    posttest = "posttest"


class ComparisonTag(str, Enum):
    SAME = "Same"
    DIFFERENT = "Different"
    NONE = "None"


#: Logical column roles -> default header names.
DEFAULT_COLUMNS = {
    "student": "Anon.Student.Id",
    "item": "Problem.Name",
    "kc": "KC..Default.",
    "outcome": "Outcome",
    "time": "CF..Time",
    "phase": "Phase",
    "category": "Category",
    "block_size": "BlockSize",
}

REQUIRED_ROLES = ("student", "item", "kc", "outcome")

_OUTCOME_MAP = {
    "1": 1, "0": 0, "1.0": 1, "0.0": 0,
    "correct": 1, "incorrect": 0,
    "true": 1, "false": 0,
}


class SchemaError(ValueError):
    """A mapped column is missing from the file header."""


class RowError(ValueError):
    """A row holds a value that cannot be interpreted."""


class ValidationError(ValueError):
    """A student's stream violates an ingestion invariant."""


@dataclass(frozen=True, slots=True)
class TrialRecord:
    """One student x item observation."""

    student_id: str
    item_id: str
    kc_id: str
    outcome: int
    time: float
    phase: Phase = Phase.learning
    category: str = ""
    block_size: int | None = None
    sequence_index: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise ValueError(f"outcome must be 0 or 1, got {self.outcome!r}")
        if not self.category:
            object.__setattr__(self, "category", self.kc_id)


@dataclass(frozen=True, slots=True)
class SequenceContext:
    """History summary for one trial, over strictly earlier trials only.

    Counts, ages and lags are restricted to earlier trials sharing the
    trial's key (the knowledge component by default).  ``prior_tag_outcomes``
    splits the same earlier trials by their own comparison tag and outcome,
    which is what the attentional split features count.
    """

    prior_kc_count: int
    prior_kc_successes: int
    prior_kc_failures: int
    ages: tuple[float, ...]
    lags: tuple[float, ...]
    comparison_tag: ComparisonTag
    prior_tag_outcomes: dict = field(default_factory=dict)

    def tag_count(self, tag: ComparisonTag, outcome: int | None = None) -> int:
        """Earlier same-key trials carrying ``tag`` (optionally split by outcome)."""
        if outcome is None:
            return (self.prior_tag_outcomes.get((tag, 0), 0)
                    + self.prior_tag_outcomes.get((tag, 1), 0))
        return self.prior_tag_outcomes.get((tag, outcome), 0)


@dataclass
class LoadReport:
    n_rows: int = 0
    n_loaded: int = 0
    dropped: list = field(default_factory=list)  # (row_number, reason)


def _parse_outcome(raw: str, row_number: int) -> int:
    key = str(raw).strip().lower()
    if key in _OUTCOME_MAP:
        return _OUTCOME_MAP[key]
    raise RowError(f"row {row_number}: unparseable outcome {raw!r}")


def _parse_phase(raw: str, row_number: int) -> Phase:
    key = str(raw).strip().lower()
    for phase in Phase:
        if key == phase.value:
            return phase
    raise RowError(f"row {row_number}: unknown phase {raw!r} "
                   f"(expected one of {[p.value for p in Phase]})")


def _detect_sep(path: Path) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
    return "\t" if "\t" in header else ","


def load_trials(path, schema: dict | None = None):
    """Load a delimited trial log.

    Returns ``(students, report)`` where ``students`` maps student id to
    that student's chronologically ordered list of :class:`TrialRecord`
    (stable sort by time, then original row order) and ``report`` lists
    dropped rows.  Rows with an empty required field are dropped and
    reported; malformed non-empty values raise :class:`RowError`.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    columns = dict(DEFAULT_COLUMNS)
    if schema:
        columns.update(schema)

    frame = pd.read_csv(path, sep=_detect_sep(path), dtype=str,
                        keep_default_na=False, encoding="utf-8")
    header = list(frame.columns)
    for role in REQUIRED_ROLES:
        if columns[role] not in header:
            raise SchemaError(
                f"missing column {columns[role]!r} (role {role!r}); "
                f"file has {header}")
    have = {role: (columns[role] in header) for role in columns}

    report = LoadReport(n_rows=len(frame))
    raw_rows: dict[str, list] = {}
    for i, row in enumerate(frame.itertuples(index=False), start=2):
        row = dict(zip(header, row))
        values = {role: row[columns[role]] for role in columns if have[role]}
        if any(str(values[role]).strip() == "" for role in REQUIRED_ROLES):
            empties = [r for r in REQUIRED_ROLES if str(values[r]).strip() == ""]
            report.dropped.append((i, f"empty required field(s): {empties}"))
            continue
        outcome = _parse_outcome(values["outcome"], i)
        time = None
        if have["time"] and str(values["time"]).strip() != "":
            try:
                time = float(values["time"])
            except ValueError:
                raise RowError(f"row {i}: unparseable time {values['time']!r}")
            if time < 0:
                raise RowError(f"row {i}: negative time {time}")
        phase = Phase.learning
        if have["phase"] and str(values["phase"]).strip() != "":
            phase = _parse_phase(values["phase"], i)
        block_size = None
        if have["block_size"] and str(values["block_size"]).strip() != "":
            try:
                block_size = int(float(values["block_size"]))
            except ValueError:
                raise RowError(f"row {i}: unparseable block size "
                               f"{values['block_size']!r}")
            if block_size <= 0:
                raise RowError(f"row {i}: block size must be positive")
        category = str(values["category"]).strip() if have["category"] else ""
        mapped = {columns[role] for role in columns if have[role]}
        extra = {k: v for k, v in row.items() if k not in mapped}
        raw_rows.setdefault(str(values["student"]).strip(), []).append(
            (time, i, str(values["item"]).strip(), str(values["kc"]).strip(),
             outcome, phase, category, block_size, extra))

    students: dict[str, list[TrialRecord]] = {}
    for student_id, rows in raw_rows.items():
        # Stable sort: time first (missing time keeps file order), then row.
        rows.sort(key=lambda r: (r[0] if r[0] is not None else 0.0, r[1]))
        records = []
        for seq, (time, _rownum, item, kc, outcome, phase, category,
                  block_size, extra) in enumerate(rows):
            records.append(TrialRecord(
                student_id=student_id, item_id=item, kc_id=kc,
                outcome=outcome,
                time=float(seq) if time is None else time,
                phase=phase, category=category, block_size=block_size,
                sequence_index=seq, extra=extra))
        times = [r.time for r in records]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValidationError(
                f"student {student_id!r}: non-monotone time after sort")
        students[student_id] = records
    report.n_loaded = sum(len(v) for v in students.values())
    return students, report


def build_context(trials: list[TrialRecord],
                  key: Callable[[TrialRecord], str] | None = None
                  ) -> list[SequenceContext]:
    """Derive one :class:`SequenceContext` per trial of a single student.

    ``key`` selects the component whose history is tracked (default: the
    knowledge component).  Comparison tags are keyed off the full stream:
    a trial is tagged Same iff its category equals the immediately
    preceding trial's category, Different otherwise, None if first.
    """
    if key is None:
        key = lambda t: t.kc_id
    times: dict[str, list[float]] = {}
    suc: dict[str, int] = {}
    fail: dict[str, int] = {}
    tag_outcomes: dict[str, dict] = {}
    prev_category = None

    contexts = []
    for trial in trials:
        k = key(trial)
        if prev_category is None:
            tag = ComparisonTag.NONE
        elif trial.category == prev_category:
            tag = ComparisonTag.SAME
        else:
            tag = ComparisonTag.DIFFERENT
        ts = times.get(k, ())
        ages = tuple(trial.time - t for t in ts)
        lags = tuple(b - a for a, b in zip(ts, ts[1:]))
        contexts.append(SequenceContext(
            prior_kc_count=len(ts),
            prior_kc_successes=suc.get(k, 0),
            prior_kc_failures=fail.get(k, 0),
            ages=ages, lags=lags, comparison_tag=tag,
            prior_tag_outcomes=dict(tag_outcomes.get(k, {}))))
        times.setdefault(k, []).append(trial.time)
        if trial.outcome == 1:
            suc[k] = suc.get(k, 0) + 1
        else:
            fail[k] = fail.get(k, 0) + 1
        to = tag_outcomes.setdefault(k, {})
        to[(tag, trial.outcome)] = to.get((tag, trial.outcome), 0) + 1
        prev_category = trial.category
    return contexts
