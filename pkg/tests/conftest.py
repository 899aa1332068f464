import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lktseq.data import Phase, TrialRecord


def make_trials(student, rows):
    """Build one student's stream from (kc, outcome[, time[, phase]]) tuples."""
    trials = []
    for i, row in enumerate(rows):
        kc = row[0]
        outcome = row[1]
        time = float(row[2]) if len(row) > 2 else float(i)
        phase = Phase(row[3]) if len(row) > 3 else Phase.learning
        trials.append(TrialRecord(
            student_id=student, item_id=f"{kc}_item", kc_id=kc,
            outcome=outcome, time=time, phase=phase, sequence_index=i))
    return trials


@pytest.fixture
def toy_students():
    return {
        "s1": make_trials("s1", [("A", 1), ("A", 0), ("B", 1), ("A", 1)]),
        "s2": make_trials("s2", [("B", 0), ("B", 1), ("A", 0), ("B", 1)]),
    }
