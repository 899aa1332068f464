import math

import numpy as np
import pytest

import oracles
from conftest import make_trials
from lktseq.data import ComparisonTag, build_context
from lktseq.dsl import parse_model, resolve_model
from lktseq.features import (Base4Params, PpeParams, RecencyParams,
                             build_design_matrix, feat_base4, feat_lineafm,
                             feat_linefail, feat_linesuc, feat_logitdec,
                             feat_ppe, feat_recency, ppe_value)

K = "KC..Default."


def ctx_at(rows, i):
    return build_context(make_trials("s", rows))[i]


class TestCounting:
    def test_first_exposure(self):
        assert feat_lineafm(ctx_at([("A", 1)], 0)) == 0

    def test_fully_blocked_split(self):
        rows = [("A", 1), ("A", 1), ("A", 0), ("A", 1)]
        ctx = ctx_at(rows, 3)
        assert feat_lineafm(ctx) == 3
        # trial 1 is tagged None, trials 2 and 3 Same
        assert feat_lineafm(ctx, ComparisonTag.SAME) == 2
        assert feat_lineafm(ctx, ComparisonTag.DIFFERENT) == 0

    def test_interleaved_split(self):
        rows = [("A", 1), ("B", 1), ("A", 0), ("B", 1)]
        ctx = ctx_at(rows, 2)
        assert feat_lineafm(ctx) == 1
        # the only prior A is the student's first trial, tagged None
        assert feat_lineafm(ctx, ComparisonTag.DIFFERENT) == 0

    def test_suc_fail(self):
        rows = [("A", 1), ("A", 0), ("A", 1), ("A", 0)]
        ctx = ctx_at(rows, 3)
        assert feat_linesuc(ctx) == 2
        assert feat_linefail(ctx) == 1

    def test_empty_history(self):
        ctx = ctx_at([("A", 1)], 0)
        assert feat_linesuc(ctx) == 0
        assert feat_linefail(ctx) == 0

    def test_random_stream_matches_oracle(self):
        rng = np.random.default_rng(3)
        trials = oracles.random_stream(rng, n_trials=30)
        ctxs = build_context(trials)
        for i, ctx in enumerate(ctxs):
            for split in (None, "Same", "Different"):
                tag = ComparisonTag(split) if split else None
                assert feat_lineafm(ctx, tag) == oracles.count_feature(
                    trials, i, "lineafm", split)
                assert feat_linesuc(ctx, tag) == oracles.count_feature(
                    trials, i, "linesuc", split)
                assert feat_linefail(ctx, tag) == oracles.count_feature(
                    trials, i, "linefail", split)


class TestLogitdec:
    def test_empty(self):
        assert feat_logitdec([], 0.9) == 0.0

    def test_undecayed_counts(self):
        assert feat_logitdec([1, 1, 1, 0], 1.0) == pytest.approx(
            math.log(2), abs=1e-15)

    def test_three_step_recurrence(self):
        # hand-applied: s: 1->1.9->2.71->2.439, f: 1->0.9->0.81->1.729
        assert feat_logitdec([1, 1, 0], 0.9) == pytest.approx(
            math.log(2.439 / 1.729), abs=1e-12)

    def test_w1_reduces_to_smoothed_counts(self):
        rng = np.random.default_rng(5)
        history = list(rng.integers(0, 2, size=40))
        expected = math.log((sum(history) + 1)
                            / (len(history) - sum(history) + 1))
        assert feat_logitdec(history, 1.0) == pytest.approx(expected,
                                                            abs=1e-12)


class TestRecency:
    def test_first_exposure(self):
        assert feat_recency(ctx_at([("A", 1)], 0), RecencyParams(d=0.5)) == 0.0

    def test_unit_elapsed(self):
        ctx = ctx_at([("A", 1, 0.0), ("A", 1, 1.0)], 1)
        for d in (0.0, 0.3, 2.7):
            assert feat_recency(ctx, RecencyParams(d=d)) == 1.0

    def test_closed_form(self):
        ctx = ctx_at([("A", 1, 0.0), ("A", 1, 4.0)], 1)
        assert feat_recency(ctx, RecencyParams(d=0.5)) == pytest.approx(0.5)

    def test_bounded(self):
        rng = np.random.default_rng(9)
        trials = oracles.random_stream(rng, n_trials=60)
        for ctx in build_context(trials):
            value = feat_recency(ctx, RecencyParams(d=1.1))
            if ctx.prior_kc_count == 0:
                assert value == 0.0
            else:
                assert 0.0 < value <= 1.0


class TestPpe:
    def test_no_trace(self):
        assert feat_ppe(ctx_at([("A", 1)], 0), PpeParams()) == 0.0

    def test_single_unit_age(self):
        ctx = ctx_at([("A", 1, 0.0), ("A", 1, 1.0)], 1)
        assert feat_ppe(ctx, PpeParams(x=0.3, c=0.7, b=0.9, m=0.5)) == 1.0

    def test_formula_chain(self):
        params = PpeParams(x=0.6, c=0.1, b=0.04, m=0.08)
        rows = [("A", 1, 0.0), ("A", 1, 40.0), ("A", 0, 90.0), ("A", 1, 100.0)]
        trials = make_trials("s", rows)
        ctx = build_context(trials)[3]
        assert ctx.ages == (100.0, 60.0, 10.0)
        assert ctx.lags == (40.0, 50.0)
        expected = oracles.ppe(trials, 3, 0.6, 0.1, 0.04, 0.08)
        assert feat_ppe(ctx, params) == pytest.approx(expected, rel=1e-12)

    def test_wider_lags_weakly_increase_value(self):
        ages = [300.0, 200.0, 100.0]
        params = (0.6, 0.1, 0.04, 0.08)
        previous = -math.inf
        for scale in (1.0, 2.0, 5.0, 20.0, 100.0):
            value = ppe_value(ages, [10.0 * scale, 10.0 * scale], *params)
            assert value >= previous
            previous = value


class TestBase4:
    def test_no_trace(self):
        assert feat_base4(ctx_at([("A", 1)], 0), Base4Params()) == 0.0

    def test_zero_spacing_exponent(self):
        rows = [("A", 1, 0.0), ("A", 1, 30.0), ("A", 1, 90.0)]
        ctx = build_context(make_trials("s", rows))[2]
        params = Base4Params(x=0.0, c=0.3, d=0.2, s0=1.0)
        assert feat_base4(ctx, params) == pytest.approx(
            2 ** 0.3 * 90.0 ** (-0.2), rel=1e-12)

    def test_blocked_vs_interleaved_spacing_factor(self):
        blocked = [("A", 1, 0.0), ("A", 1, 0.0), ("A", 1, 0.0), ("A", 1, 50.0)]
        params = Base4Params(x=0.5, c=0.0, d=0.0, s0=1.0)
        ctx_b = build_context(make_trials("s", blocked))[3]
        assert feat_base4(ctx_b, params) == pytest.approx(1.0)
        trials = make_trials("s", [("A", 1, 0.0), ("A", 1, 30.0),
                                   ("A", 1, 60.0), ("A", 1, 80.0)])
        ctx_s = build_context(trials)[3]
        assert feat_base4(ctx_s, params) == pytest.approx(math.sqrt(31.0))


class TestDesignMatrix:
    def test_afm_toy_columns(self, toy_students):
        spec = resolve_model("AFM")
        # give the toy set three distinct items
        dm = build_design_matrix(spec, toy_students)
        intercepts = [c for c in dm.columns if c.startswith("intercept")]
        assert len(dm.columns) == 1 + len(intercepts) + 1
        assert dm.columns[0] == "logitdec(Anon.Student.Id)"
        assert dm.columns[-1] == "lineafm(KC..Default.)"
        assert dm.n_rows == 8

    def test_split_columns_replace_unsplit(self, toy_students):
        afm = build_design_matrix(resolve_model("AFM"), toy_students)
        a_afm = build_design_matrix(resolve_model("a-AFM"), toy_students)
        assert len(a_afm.columns) == len(afm.columns) + 1
        assert any("%Comparison%Same" in c for c in a_afm.columns)

    def test_partition_identity(self):
        rng = np.random.default_rng(21)
        students = {f"s{i}": oracles.random_stream(rng, n_trials=60)
                    for i in range(3)}
        spec = parse_model(f"lineafm({K}) + lineafm({K}%Comparison%Same)"
                           f" + lineafm({K}%Comparison%Different)")
        dm = build_design_matrix(spec, students)
        unsplit, same, diff = dm.X.T
        # residual = prior same-kc trials whose own tag was None
        residual = unsplit - same - diff
        assert np.all(residual >= 0)
        row = 0
        for sid in sorted(students):
            trials = students[sid]
            for i in range(len(trials)):
                none_count = sum(
                    1 for j in range(i)
                    if trials[j].kc_id == trials[i].kc_id
                    and oracles.tag_of(trials, j) == "None")
                assert residual[row] == none_count
                row += 1

    def test_rows_in_student_sequence_order(self, toy_students):
        dm = build_design_matrix(resolve_model("AFM"), toy_students)
        assert list(dm.rows["student"]) == ["s1"] * 4 + ["s2"] * 4
        assert list(dm.rows["sequence_index"]) == [0, 1, 2, 3] * 2

    def test_causality(self):
        rng = np.random.default_rng(33)
        trials = oracles.random_stream(rng, n_trials=25)
        spec = resolve_model("AFM+ppe")
        full = build_design_matrix(spec, {"s0": trials},
                                   nl_params={3: {"x": 0.5}})
        flipped = trials[:20] + [
            type(t)(student_id=t.student_id, item_id=t.item_id,
                    kc_id=t.kc_id, outcome=1 - t.outcome, time=t.time,
                    category=t.category, sequence_index=t.sequence_index)
            for t in trials[20:]]
        edited = build_design_matrix(spec, {"s0": flipped},
                                     nl_params={3: {"x": 0.5}})
        assert np.array_equal(full.X[:20], edited.X[:20])

    def test_unseen_level_gets_zero_column(self, toy_students):
        spec = resolve_model("AFM")
        train = {"s1": toy_students["s1"]}
        dm_train = build_design_matrix(spec, train)
        dm_test = build_design_matrix(spec, {"s2": toy_students["s2"]},
                                      columns=dm_train.columns)
        assert dm_test.X.shape[1] == len(dm_train.columns)
        # s2's items overlap s1's here, so nothing is missing; force one
        assert isinstance(dm_test.missing_levels, list)

    def test_streaming_matches_quadratic_oracle(self):
        rng = np.random.default_rng(55)
        trials = oracles.random_stream(rng, n_trials=80)
        spec = parse_model(
            f"logitdec(Anon.Student.Id, w=0.9) + lineafm({K})"
            f" + linesuc({K}%Comparison%Same) + recency({K}, d=0.7)"
            f" + ppe({K}, x=0.6, c=0.1, b=0.04, m=0.08)"
            f" + base4({K}, x=0.5, c=0.2, d=0.3, s0=2.0)")
        dm = build_design_matrix(spec, {"s0": trials})
        for i in range(len(trials)):
            expected = [
                oracles.logitdec(trials, i, 0.9),
                oracles.count_feature(trials, i, "lineafm"),
                oracles.count_feature(trials, i, "linesuc", "Same"),
                oracles.recency(trials, i, 0.7),
                oracles.ppe(trials, i, 0.6, 0.1, 0.04, 0.08),
                oracles.base4(trials, i, 0.5, 0.2, 0.3, 2.0),
            ]
            assert dm.X[i] == pytest.approx(expected, rel=1e-12, abs=1e-12)
