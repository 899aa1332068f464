"""Nested maximum-likelihood fitting.

The inner problem (linear coefficients for a fixed set of nonlinear
feature parameters) is a ridge-stabilized logistic likelihood, solved by
damped Newton iterations.  The outer problem searches the bounded box of
unpinned nonlinear parameters with a derivative-free method: Brent for a
single dimension, restarted Nelder-Mead otherwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .dsl import ModelSpec, render_model, searched_params
from .features import DesignMatrix, build_design_matrix, spec_columns

GRAD_TOL = 1e-8
LL_TOL = 1e-10
SEPARATION_BETA = 30.0


class CollinearityError(ValueError):
    """The unpenalized Newton system is singular."""

    def __init__(self, columns):
        super().__init__(f"collinear design columns: {columns}")
        self.columns = columns


@dataclass
class InnerFit:
    beta: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    grad_max: float


@dataclass
class SearchConfig:
    seed: int = 0
    restarts: int = 3
    max_evals: int = 200
    xatol: float = 1e-3  # relative to each parameter's range
    ridge: float = 1e-6


@dataclass
class FitResult:
    coefficients: dict[str, float]
    nl_params: dict[str, dict[str, float]]
    log_likelihood: float
    null_log_likelihood: float
    iterations_inner: int
    outer_evals: int
    converged: bool
    ridge: float
    columns: list[str] = field(default_factory=list)
    formula: str = ""

    @property
    def beta(self) -> np.ndarray:
        return np.array([self.coefficients[c] for c in self.columns])

    def to_dict(self) -> dict:
        return {
            "formula": self.formula,
            "coefficients": self.coefficients,
            "nl_params": self.nl_params,
            "log_likelihood": self.log_likelihood,
            "null_log_likelihood": self.null_log_likelihood,
            "mcfadden_r2_train": (1.0 - self.log_likelihood
                                  / self.null_log_likelihood
                                  if self.null_log_likelihood != 0 else None),
            "iterations_inner": self.iterations_inner,
            "outer_evals": self.outer_evals,
            "converged": self.converged,
            "ridge": self.ridge,
            "columns": self.columns,
        }


def log_likelihood(X, y, beta) -> float:
    z = X @ beta
    # y*z - log(1 + e^z), stable via logaddexp
    return float(np.sum(y * z - np.logaddexp(0.0, z)))


def penalized_ll(X, y, beta, ridge) -> float:
    return log_likelihood(X, y, beta) - 0.5 * ridge * float(beta @ beta)


def gradient(X, y, beta, ridge) -> np.ndarray:
    p = _expit(X @ beta)
    return X.T @ (y - p) - ridge * beta


def _expit(z):
    from scipy.special import expit
    return expit(z)


def null_log_likelihood(y) -> float:
    rate = float(np.mean(y))
    rate = min(max(rate, 1e-12), 1 - 1e-12)
    n1 = float(np.sum(y))
    n0 = len(y) - n1
    return n1 * math.log(rate) + n0 * math.log(1 - rate)


def _collinear_columns(X) -> list[int]:
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    return sorted(piv[rank:].tolist())


def fit_inner(X, y, ridge: float = 1e-6, beta0=None, max_iter: int = 100,
              grad_tol: float = GRAD_TOL, ll_tol: float = LL_TOL) -> InnerFit:
    """Damped Newton ascent on the ridge-penalized logistic likelihood.

    Deterministic and independent of row order.  Raises
    :class:`CollinearityError` for a singular system when ridge is zero;
    quasi-separated fits (huge coefficients, non-vanishing gradient) are
    returned with ``converged=False``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n <= p:
        warnings.warn(f"fewer rows ({n}) than columns ({p}); "
                      "coefficients may be unstable")
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    ll = penalized_ll(X, y, beta, ridge)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        prob = _expit(X @ beta)
        grad = X.T @ (y - prob) - ridge * beta
        grad_max = float(np.max(np.abs(grad))) if p else 0.0
        if grad_max < grad_tol:
            converged = True
            iterations -= 1
            break
        w = prob * (1 - prob)
        hess = X.T @ (X * w[:, None])
        hess[np.diag_indices_from(hess)] += ridge
        try:
            step = scipy.linalg.cho_solve(scipy.linalg.cho_factor(hess), grad)
        except scipy.linalg.LinAlgError:
            if ridge == 0.0:
                raise CollinearityError(_collinear_columns(X))
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        # Damped step: halve until the penalized likelihood improves.
        scale = 1.0
        for _ in range(40):
            candidate = beta + scale * step
            new_ll = penalized_ll(X, y, candidate, ridge)
            if new_ll >= ll - 1e-14:
                break
            scale *= 0.5
        beta = beta + scale * step
        if abs(new_ll - ll) <= ll_tol * max(1.0, abs(ll)):
            ll = new_ll
            converged = True
            break
        ll = new_ll
    prob = _expit(X @ beta)
    grad = X.T @ (y - prob) - ridge * beta
    grad_max = float(np.max(np.abs(grad))) if p else 0.0
    if grad_max < grad_tol:
        converged = True
    if np.any(np.abs(beta) > SEPARATION_BETA) and grad_max > grad_tol:
        converged = False
    return InnerFit(beta=beta, log_likelihood=log_likelihood(X, y, beta),
                    iterations=iterations, converged=converged,
                    grad_max=grad_max)


def _params_map(spec: ModelSpec, dims, theta) -> dict[int, dict[str, float]]:
    by_term: dict[int, dict[str, float]] = {}
    for (idx, name, _lo, _hi), value in zip(dims, theta):
        by_term.setdefault(idx, {})[name] = float(value)
    return by_term


def fit_model(spec: ModelSpec, students: dict,
              search: SearchConfig | None = None) -> FitResult:
    """Fit linear coefficients and unpinned nonlinear parameters.

    Models without searched nonlinear parameters (e.g. AFM, PFA and
    their attentional variants) run exactly one inner fit.
    """
    search = search or SearchConfig()
    if not students:
        raise ValueError("empty dataset")
    dims = searched_params(spec)
    columns = spec_columns(spec, students)

    # Only searched terms' columns change across outer evaluations, so the
    # rest of the design matrix is built once and reused.
    from .features import term_label
    base_dm = build_design_matrix(spec, students, columns=columns)
    searched_idx = sorted({d[0] for d in dims})
    sub_specs = {i: ModelSpec(terms=(spec.terms[i],)) for i in searched_idx}
    col_pos = {i: columns.index(term_label(spec.terms[i]))
               for i in searched_idx}

    state = {"best_ll": -math.inf, "best_theta": None, "best_beta": None,
             "warm": None, "evals": 0, "iters": 0}

    def evaluate(theta) -> float:
        theta = tuple(min(max(t, lo), hi)
                      for t, (_i, _n, lo, hi) in zip(theta, dims))
        per_term = _params_map(spec, dims, theta)
        for i in searched_idx:
            sub = build_design_matrix(sub_specs[i], students,
                                      nl_params={0: per_term.get(i, {})})
            base_dm.X[:, col_pos[i]] = sub.X[:, 0]
        inner = fit_inner(base_dm.X, base_dm.y, ridge=search.ridge,
                          beta0=state["warm"])
        state["evals"] += 1
        state["iters"] += inner.iterations
        state["warm"] = inner.beta
        better = inner.log_likelihood > state["best_ll"] + 1e-12
        tied = (abs(inner.log_likelihood - state["best_ll"]) <= 1e-12
                and state["best_theta"] is not None
                and theta < state["best_theta"])
        if better or tied:
            state["best_ll"] = inner.log_likelihood
            state["best_theta"] = theta
            state["best_beta"] = inner.beta.copy()
        return -inner.log_likelihood

    if not dims:
        best_theta: tuple = ()
        evaluate(best_theta)
    elif len(dims) == 1:
        _i, _n, lo, hi = dims[0]
        scipy.optimize.minimize_scalar(
            lambda v: evaluate((v,)), bounds=(lo, hi), method="bounded",
            options={"xatol": search.xatol * (hi - lo),
                     "maxiter": search.max_evals})
        best_theta = state["best_theta"]
    else:
        los = np.array([d[2] for d in dims])
        his = np.array([d[3] for d in dims])
        span = his - los

        def unit_objective(u):
            return evaluate(tuple(los + np.clip(u, 0, 1) * span))

        rng = np.random.default_rng(search.seed)
        starts = [np.full(len(dims), 0.5)]
        starts += [rng.uniform(0.05, 0.95, size=len(dims))
                   for _ in range(max(search.restarts - 1, 0))]
        for x0 in starts:
            scipy.optimize.minimize(
                unit_objective, x0, method="Nelder-Mead",
                bounds=[(0.0, 1.0)] * len(dims),
                options={"maxfev": search.max_evals,
                         "xatol": search.xatol, "fatol": 1e-7,
                         "adaptive": len(dims) > 2})
        best_theta = state["best_theta"]

    # Final polish at the winning parameters.
    nl = _params_map(spec, dims, best_theta)
    dm = build_design_matrix(spec, students, nl_params=nl, columns=columns)
    inner = fit_inner(dm.X, dm.y, ridge=search.ridge, beta0=state["best_beta"])
    state["iters"] += inner.iterations

    nl_out: dict[str, dict[str, float]] = {}
    from .dsl import PARAM_BOUNDS, effective_params
    from .features import term_label
    for i, term in enumerate(spec.terms):
        if term.feature in PARAM_BOUNDS:
            values = effective_params(term)
            values.update(nl.get(i, {}))
            nl_out[term_label(term)] = values
    return FitResult(
        coefficients=dict(zip(columns, inner.beta.tolist())),
        nl_params=nl_out,
        log_likelihood=inner.log_likelihood,
        null_log_likelihood=null_log_likelihood(dm.y),
        iterations_inner=state["iters"],
        outer_evals=state["evals"],
        converged=inner.converged,
        ridge=search.ridge,
        columns=columns,
        formula=render_model(spec))


def predict(spec: ModelSpec, result: FitResult, students: dict) -> tuple:
    """Predicted probabilities for ``students`` under a fitted model.

    Features come from each student's own trial history; only the fitted
    parameters are reused, so held-out students stay fully held out.
    Returns ``(p, design_matrix)``.
    """
    nl = {}
    from .features import term_label
    for i, term in enumerate(spec.terms):
        label = term_label(term)
        if label in result.nl_params:
            nl[i] = dict(result.nl_params[label])
    dm = build_design_matrix(spec, students, nl_params=nl,
                             columns=result.columns)
    p = _expit(dm.X @ result.beta)
    return p, dm
