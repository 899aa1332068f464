import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lktseq.dsl import (COUNTING_FEATURES, PARAM_BOUNDS, ModelParseError,
                        ModelSpec, Term, parse_model, render_model,
                        resolve_model)


def test_afm_parses():
    spec = parse_model("logitdec(Anon.Student.Id)+intercept(Problem.Name)"
                       "+lineafm(KC..Default.)")
    assert [t.feature for t in spec.terms] == ["logitdec", "intercept",
                                               "lineafm"]
    assert [t.component for t in spec.terms] == ["student", "item", "kc"]
    assert spec.terms[1].per_level  # intercept expands per item


def test_attentional_split_terms():
    spec = parse_model("lineafm(KC..Default.%Comparison%Same)"
                       "+lineafm(KC..Default.%Comparison%Different)")
    assert spec.terms[0].interaction == ("Comparison", "Same")
    assert spec.terms[1].interaction == ("Comparison", "Different")


def test_pinned_param():
    spec = parse_model("recency(KC..Default., d=0.5)")
    assert spec.terms[0].params == {"d": 0.5}


def test_spaced_identifier_normalized():
    spec = parse_model("lineafm (KC. . Default. % Comparison% Same)")
    assert spec.terms[0].component == "kc"
    assert spec.terms[0].interaction == ("Comparison", "Same")


@pytest.mark.parametrize("formula,fragment", [
    ("wibble(KC..Default.)", "unknown feature"),
    ("lineafm(Skill.Name)", "unknown component"),
    ("logitdec(Anon.Student.Id%Comparison%Same)", "counting features"),
    ("recency(KC..Default.$)", "'\\$'"),
    ("lineafm(KC..Default.", "expected '\\)'"),
    ("lineafm(KC..Default.%Attention%Same)", "unknown split variable"),
    ("lineafm(KC..Default.%Comparison%Near)", "unknown split level"),
    ("recency(KC..Default., q=1)", "no parameter"),
    ("recency(KC..Default., d=9)", "outside bounds"),
    ("lineafm(KC..Default.) lineafm(KC..Default.)", "expected '\\+'"),
])
def test_errors_carry_offsets(formula, fragment):
    with pytest.raises(ModelParseError, match=fragment) as err:
        parse_model(formula)
    assert err.value.offset >= 0


def test_duplicate_term_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        parse_model("lineafm(KC..Default.)+lineafm(KC..Default.)")


def test_empty_rejected():
    with pytest.raises(ModelParseError):
        parse_model("")


def test_round_trip_apfa():
    spec = resolve_model("a-PFA")
    assert len(spec.terms) == 6
    again = parse_model(render_model(spec))
    assert again.terms == spec.terms


def test_render_without_name():
    spec = parse_model("lineafm(KC..Default.)")
    assert spec.name is None
    assert render_model(spec) == "lineafm(KC..Default.)"


def _term_strategy():
    def build(feature, component, per_level, split, pin):
        interaction = None
        if feature in COUNTING_FEATURES and split:
            interaction = ("Comparison", split)
        params = ()
        if pin and feature in PARAM_BOUNDS:
            name, (lo, hi) = sorted(PARAM_BOUNDS[feature].items())[0]
            params = ((name, (lo + hi) / 2),)
        return Term(feature=feature, component=component,
                    per_level=(per_level and feature in COUNTING_FEATURES)
                    or feature == "intercept",
                    interaction=interaction, fixed_params=params)
    return st.builds(
        build,
        st.sampled_from(["intercept", "lineafm", "linesuc", "linefail",
                         "logitdec", "recency", "ppe", "base4"]),
        st.sampled_from(["student", "item", "kc"]),
        st.booleans(), st.sampled_from([None, "Same", "Different"]),
        st.booleans())


@settings(max_examples=100, deadline=None)
@given(st.lists(_term_strategy(), min_size=1, max_size=6,
                unique_by=lambda t: t.key()))
def test_round_trip_random_specs(terms):
    spec = ModelSpec(terms=tuple(terms))
    assert parse_model(render_model(spec)).terms == spec.terms


@settings(max_examples=150, deadline=None)
@given(st.text(alphabet="linafmsucrecyd(.)%$+=0123456789KCD ", max_size=40))
def test_fuzzed_formulas_never_misparse_silently(text):
    # Either a positioned error or a spec that renders back to itself.
    try:
        spec = parse_model(text)
    except ModelParseError as err:
        assert 0 <= err.offset <= len(text)
    except ValueError:
        pass  # duplicate-term rejection
    else:
        assert parse_model(render_model(spec)).terms == spec.terms
