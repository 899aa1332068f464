"""Symbolic model formulas.

A model is a ``+``-separated list of terms, each ``feature(component)``
with optional decorations inside the parentheses:

    logitdec(Anon.Student.Id) + intercept(Problem.Name) + lineafm(KC..Default.)
    lineafm(KC..Default.%Comparison%Same)     -- attentional split
    lineafm(KC..Default.$)                    -- one slope per component level
    recency(KC..Default., d=0.5)              -- pinned nonlinear parameter

Whitespace is insignificant everywhere, including inside component names
(``KC. . Default.`` parses as ``KC..Default.``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

FEATURES = ("intercept", "lineafm", "linesuc", "linefail",
            "logitdec", "recency", "ppe", "base4")
COUNTING_FEATURES = frozenset({"lineafm", "linesuc", "linefail"})
NONLINEAR_FEATURES = frozenset({"logitdec", "recency", "ppe", "base4"})

#: Per-feature nonlinear parameter bounds.
PARAM_BOUNDS = {
    "recency": {"d": (0.0, 3.0)},
    "ppe": {"x": (0.0, 2.0), "c": (0.0, 1.0), "b": (0.0, 1.0), "m": (0.0, 1.0)},
    "base4": {"x": (0.0, 1.0), "c": (0.0, 1.0), "d": (0.0, 1.0),
              "s0": (0.1, 3600.0)},
    "logitdec": {"w": (1e-3, 1.0)},
}

#: Features whose unpinned parameters the outer search optimizes.  The
#: logitdec decay is held at its default unless pinned explicitly, so
#: baseline models like AFM need no outer search at all.
SEARCHED_FEATURES = frozenset({"recency", "ppe", "base4"})

#: Fallback parameter values when neither pinned nor searched.
PARAM_DEFAULTS = {
    "logitdec": {"w": 0.9},
    "recency": {"d": 0.5},
    "ppe": {"x": 0.6, "c": 0.1, "b": 0.04, "m": 0.08},
    "base4": {"x": 0.5, "c": 0.1, "d": 0.5, "s0": 1.0},
}

COMPONENTS = ("student", "item", "kc")
CANONICAL_COMPONENT = {
    "student": "Anon.Student.Id",
    "item": "Problem.Name",
    "kc": "KC..Default.",
}
_COMPONENT_ALIASES = {
    "anon.student.id": "student", "student": "student",
    "problem.name": "item", "item": "item",
    "kc..default.": "kc", "kc": "kc",
}

SPLIT_VARIABLE = "Comparison"
SPLIT_LEVELS = ("Same", "Different")


class ModelParseError(ValueError):
    """Grammar error with the character offset where it was detected."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Term:
    feature: str
    component: str
    per_level: bool = False
    interaction: tuple[str, str] | None = None
    fixed_params: tuple[tuple[str, float], ...] = ()

    @property
    def params(self) -> dict[str, float]:
        return dict(self.fixed_params)

    def key(self):
        """Identity triple used for duplicate detection."""
        return (self.feature, self.component, self.interaction)


@dataclass(frozen=True)
class ModelSpec:
    terms: tuple[Term, ...]
    name: str | None = None

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a model needs at least one term")
        seen = set()
        for term in self.terms:
            if term.key() in seen:
                raise ValueError(f"duplicate term {render_term(term)}")
            seen.add(term.key())


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            raise ModelParseError(f"expected {ch!r}", self.pos)
        self.pos += 1

    def read_ident(self, what: str, extra: str = "") -> tuple[str, int]:
        """Read an identifier, skipping interior whitespace."""
        self.skip_ws()
        start = self.pos
        chars = []
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch.isalnum() or ch in "._-" or ch in extra:
                chars.append(ch)
                self.pos += 1
            elif ch.isspace():
                # Look ahead: whitespace inside an identifier is dropped.
                nxt = self.pos
                while nxt < len(self.text) and self.text[nxt].isspace():
                    nxt += 1
                if (chars and nxt < len(self.text)
                        and (self.text[nxt].isalnum()
                             or self.text[nxt] in "._-" or self.text[nxt] in extra)):
                    self.pos = nxt
                else:
                    break
            else:
                break
        if not chars:
            raise ModelParseError(f"expected {what}", start)
        return "".join(chars), start


def _parse_number(scanner: _Scanner) -> float:
    scanner.skip_ws()
    start = scanner.pos
    text = scanner.text
    pos = start
    while pos < len(text) and (text[pos].isdigit() or text[pos] in "+-.eE"):
        pos += 1
    try:
        value = float(text[start:pos])
    except ValueError:
        raise ModelParseError("expected a number", start)
    scanner.pos = pos
    return value


def _parse_term(scanner: _Scanner) -> Term:
    feature, fpos = scanner.read_ident("feature name")
    feature_lc = feature.lower()
    if feature_lc not in FEATURES:
        raise ModelParseError(f"unknown feature {feature!r}", fpos)
    feature = feature_lc
    scanner.expect("(")
    comp_raw, cpos = scanner.read_ident("component name")
    comp = _COMPONENT_ALIASES.get(comp_raw.lower())
    if comp is None:
        raise ModelParseError(f"unknown component {comp_raw!r}", cpos)

    per_level = False
    if scanner.peek() == "$":
        scanner.pos += 1
        if feature in NONLINEAR_FEATURES:
            raise ModelParseError(
                f"per-level '$' is not supported on {feature!r}", scanner.pos - 1)
        per_level = True
    if feature == "intercept":
        per_level = True

    interaction = None
    if scanner.peek() == "%":
        scanner.pos += 1
        var, vpos = scanner.read_ident("split variable")
        if var.lower() != SPLIT_VARIABLE.lower():
            raise ModelParseError(f"unknown split variable {var!r}", vpos)
        scanner.expect("%")
        level, lpos = scanner.read_ident("split level")
        level_canon = level.capitalize()
        if level_canon not in SPLIT_LEVELS:
            raise ModelParseError(f"unknown split level {level!r}", lpos)
        if feature not in COUNTING_FEATURES:
            raise ModelParseError(
                f"interaction split is only valid on counting features, "
                f"not {feature!r}", vpos)
        interaction = (SPLIT_VARIABLE, level_canon)

    params = []
    while scanner.peek() == ",":
        scanner.pos += 1
        name, npos = scanner.read_ident("parameter name")
        bounds = PARAM_BOUNDS.get(feature, {})
        if name not in bounds:
            raise ModelParseError(
                f"feature {feature!r} has no parameter {name!r}", npos)
        scanner.expect("=")
        value = _parse_number(scanner)
        lo, hi = bounds[name]
        if not (lo <= value <= hi):
            raise ModelParseError(
                f"parameter {name}={value} outside bounds [{lo}, {hi}]", npos)
        params.append((name, value))
    scanner.expect(")")
    return Term(feature=feature, component=comp, per_level=per_level,
                interaction=interaction,
                fixed_params=tuple(sorted(params)))


def parse_model(text: str, name: str | None = None) -> ModelSpec:
    """Parse a formula string into a validated :class:`ModelSpec`."""
    scanner = _Scanner(text)
    terms = [_parse_term(scanner)]
    while True:
        ch = scanner.peek()
        if ch == "":
            break
        if ch != "+":
            raise ModelParseError(f"expected '+' or end of formula", scanner.pos)
        scanner.pos += 1
        terms.append(_parse_term(scanner))
    return ModelSpec(terms=tuple(terms), name=name)


def render_term(term: Term) -> str:
    inner = CANONICAL_COMPONENT[term.component]
    if term.per_level and term.feature != "intercept":
        inner += "$"
    if term.interaction:
        inner += f"%{term.interaction[0]}%{term.interaction[1]}"
    for pname, pvalue in term.fixed_params:
        inner += f", {pname}={pvalue!r}"
    return f"{term.feature}({inner})"


def render_model(spec: ModelSpec) -> str:
    """Canonical single-line formula; ``parse_model`` round-trips it."""
    return " + ".join(render_term(t) for t in spec.terms)


def effective_params(term: Term) -> dict[str, float]:
    """Default parameter values overridden by the term's pinned values."""
    values = dict(PARAM_DEFAULTS.get(term.feature, {}))
    values.update(term.params)
    return values


def searched_params(spec: ModelSpec) -> list[tuple[int, str, float, float]]:
    """Outer-search dimensions: (term index, param name, lo, hi)."""
    dims = []
    for i, term in enumerate(spec.terms):
        if term.feature not in SEARCHED_FEATURES:
            continue
        pinned = term.params
        for pname, (lo, hi) in sorted(PARAM_BOUNDS[term.feature].items()):
            if pname not in pinned:
                dims.append((i, pname, lo, hi))
    return dims


def _named(name: str, formula: str) -> ModelSpec:
    return parse_model(formula, name=name)


_S = "Anon.Student.Id"
_I = "Problem.Name"
_K = "KC..Default."
_BASE = f"logitdec({_S}) + intercept({_I})"
_SPLIT_AFM = (f"lineafm({_K}%Comparison%Same) + lineafm({_K}%Comparison%Different)")

#: The model zoo used throughout: name -> formula.
STANDARD_MODELS = {
    "AFM": f"{_BASE} + lineafm({_K})",
    "PFA": f"{_BASE} + linesuc({_K}) + linefail({_K})",
    "AFM+recency": f"{_BASE} + lineafm({_K}) + recency({_K})",
    "PFA+recency": f"{_BASE} + linesuc({_K}) + linefail({_K}) + recency({_K})",
    "AFM+ppe": f"{_BASE} + lineafm({_K}) + ppe({_K})",
    "PFA+ppe": f"{_BASE} + linesuc({_K}) + linefail({_K}) + ppe({_K})",
    "AFM+base4": f"{_BASE} + lineafm({_K}) + base4({_K})",
    "a-AFM": f"{_BASE} + {_SPLIT_AFM}",
    "a-PFA": (f"{_BASE} + linesuc({_K}%Comparison%Same)"
              f" + linefail({_K}%Comparison%Same)"
              f" + linesuc({_K}%Comparison%Different)"
              f" + linefail({_K}%Comparison%Different)"),
    "a-AFM+recency": f"{_BASE} + {_SPLIT_AFM} + recency({_K})",
    "a-AFM+ppe": f"{_BASE} + {_SPLIT_AFM} + ppe({_K})",
}


def resolve_model(text: str) -> ModelSpec:
    """Parse a formula, accepting the standard model names as shorthand."""
    if text in STANDARD_MODELS:
        return parse_model(STANDARD_MODELS[text], name=text)
    return parse_model(text)
