"""Logistic knowledge tracing with spacing and attentional comparison features."""

__version__ = "0.1.0"

from .data import TrialRecord, SequenceContext, Phase, ComparisonTag, load_trials, build_context
from .dsl import Term, ModelSpec, parse_model, render_model, STANDARD_MODELS
from .estimator import FitResult, SearchConfig, fit_inner, fit_model, predict
from .evaluation import CvPlan, CvReport, Grouping, make_folds, run_cv
from .simulator import DesignConfig, GroundTruthLearner, generate_sequence, simulate_outcomes

__all__ = [
    "TrialRecord", "SequenceContext", "Phase", "ComparisonTag",
    "load_trials", "build_context",
    "Term", "ModelSpec", "parse_model", "render_model", "STANDARD_MODELS",
    "FitResult", "SearchConfig", "fit_inner", "fit_model", "predict",
    "CvPlan", "CvReport", "Grouping", "make_folds", "run_cv",
    "DesignConfig", "GroundTruthLearner", "generate_sequence", "simulate_outcomes",
]
