"""Command-line entry point: fit, cv, features, simulate, report.

Exit codes: 0 success, 1 validation error, 2 fit non-convergence (the
results are still written, flagged).  Diagnostics go to stderr; data
goes to files or stdout only.  Every run that writes outputs also writes
a manifest (resolved config, version, seeds) beside them.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .data import (DEFAULT_COLUMNS, RowError, SchemaError, ValidationError,
                   load_trials)
from .dsl import ModelParseError, resolve_model, render_model
from .estimator import SearchConfig, fit_model, predict
from .evaluation import DEFAULT_GROUPINGS, CvPlan, Grouping, run_cv
from .features import build_design_matrix
from .simulator import (DesignConfig, GroundTruthLearner, blob_config,
                        generate_sequence, simulate_outcomes, trials_to_frame)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract here is exit 1 with usage.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_ERROR)


def _default_seed() -> int:
    return int(os.environ.get("LKT_SEQ_SEED", "0"))


def _add_column_flags(parser):
    for role, default in DEFAULT_COLUMNS.items():
        flag = "--col-blocksize" if role == "block_size" else f"--col-{role}"
        parser.add_argument(flag, dest=f"col_{role}", default=default,
                            metavar="NAME",
                            help=f"column holding the {role} (default {default})")


def _schema_from_args(args) -> dict:
    return {role: getattr(args, f"col_{role}") for role in DEFAULT_COLUMNS}


def _write_manifest(out_path: Path, command: str, config: dict):
    manifest = {
        "command": command,
        "config": config,
        "version": __version__,
    }
    path = out_path.parent / (out_path.stem + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _json_dump(data, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _load(args):
    students, report = load_trials(args.data, schema=_schema_from_args(args))
    if report.dropped:
        print(f"dropped {len(report.dropped)} rows:", file=sys.stderr)
        for rownum, reason in report.dropped[:20]:
            print(f"  row {rownum}: {reason}", file=sys.stderr)
    return students


def _parse_filters(text: str | None):
    if not text:
        return ()
    pairs = []
    for clause in text.split(","):
        if "=" not in clause:
            raise ValidationError(
                f"--filter clause {clause!r} must look like column=value")
        col, value = clause.split("=", 1)
        pairs.append((col.strip().lower(), value.strip()))
    return tuple(pairs)


def cmd_fit(args) -> int:
    students = _load(args)
    spec = resolve_model(args.model)
    search = SearchConfig(seed=args.seed, restarts=args.restarts,
                          max_evals=args.max_evals, ridge=args.ridge)
    result = fit_model(spec, students, search=search)
    out = Path(args.out)
    _json_dump(result.to_dict(), out)
    _write_manifest(out, "fit", {
        "data": str(args.data), "model": args.model,
        "seed": args.seed, "ridge": args.ridge,
        "restarts": args.restarts, "max_evals": args.max_evals,
        "columns": _schema_from_args(args), "out": str(out)})
    if not result.converged:
        print("warning: fit did not converge (results written)",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_cv(args) -> int:
    students = _load(args)
    spec = resolve_model(args.model)
    plan = CvPlan(n_folds=args.folds, n_repeats=args.repeats, seed=args.seed)
    search = SearchConfig(seed=args.seed, restarts=args.restarts,
                          max_evals=args.max_evals, ridge=args.ridge)
    groupings = list(DEFAULT_GROUPINGS)
    if args.group_by:
        keys = tuple(k.strip().lower() for k in args.group_by.split(","))
        groupings.append(Grouping("custom", keys=keys,
                                  filters=_parse_filters(args.filter)))
    report = run_cv(spec, students, plan=plan, groupings=groupings,
                    search=search, jobs=args.jobs)
    out = Path(args.out)
    data = report.to_dict()
    if spec.name:
        data["name"] = spec.name
    _json_dump(data, out)
    for name, table in report.tables.items():
        if table.empty:
            continue
        table.to_csv(out.parent / f"{out.stem}_groups_{name}.csv", index=False)
    _write_manifest(out, "cv", {
        "data": str(args.data), "model": args.model,
        "folds": args.folds, "repeats": args.repeats, "seed": args.seed,
        "ridge": args.ridge, "group_by": args.group_by,
        "filter": args.filter, "jobs": args.jobs,
        "columns": _schema_from_args(args), "out": str(out)})
    if report.n_failed:
        print(f"warning: {report.n_failed} folds failed", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_features(args) -> int:
    students = _load(args)
    spec = resolve_model(args.model)
    dm = build_design_matrix(spec, students)
    import pandas as pd
    frame = pd.concat(
        [dm.rows[["student", "item", "kc", "phase", "outcome"]],
         pd.DataFrame(dm.X, columns=dm.columns)], axis=1)
    text = frame.to_csv(index=False)
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        _write_manifest(out, "features", {
            "data": str(args.data), "model": args.model,
            "columns": _schema_from_args(args), "out": str(out)})
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.config:
        config_data = json.loads(Path(args.config).read_text())
    else:
        config_data = {}
    config_data.setdefault("seed", args.seed)
    if args.students is not None:
        config_data["n_students"] = args.students
    if args.design == "blob":
        config = blob_config(**config_data)
    else:
        config = DesignConfig(**config_data)

    if args.truth_in:
        learner = GroundTruthLearner.from_dict(
            json.loads(Path(args.truth_in).read_text()))
    else:
        learner = _default_truth()
    skeleton = generate_sequence(config)
    students = simulate_outcomes(skeleton, learner, seed=config.seed)
    frame = trials_to_frame(students)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False)
    if args.truth:
        _json_dump(learner.to_dict(), Path(args.truth))
    _write_manifest(out, "simulate", {
        "design": args.design, "config": config.to_dict(),
        "formula": render_model(learner.spec), "out": str(out),
        "truth": args.truth})
    return EXIT_OK


def _default_truth() -> GroundTruthLearner:
    spec = resolve_model("AFM+recency")
    return GroundTruthLearner(
        spec=spec,
        coefficients={
            "logitdec(Anon.Student.Id)": 0.5,
            "intercept(Problem.Name)": -0.5,
            "lineafm(KC..Default.)": 0.15,
            "recency(KC..Default.)": 1.5,
        },
        nl_params={"recency(KC..Default.)": {"d": 0.5}})


def cmd_report(args) -> int:
    from .reporting import (ReportSchemaError, comparison_table,
                            load_cv_report, render_figures, render_table)
    reports = [load_cv_report(p) for p in args.reports]
    table = comparison_table(reports)
    text = render_table(table, fmt=args.format)
    if args.out:
        out = Path(args.out)
        out.write_text(text + ("\n" if not text.endswith("\n") else ""))
        _write_manifest(out, "report", {
            "reports": [str(p) for p in args.reports],
            "format": args.format, "out": str(out),
            "figures": args.figures})
    else:
        sys.stdout.write(text + "\n")
    if args.figures:
        written = render_figures(table, args.figures)
        print(f"wrote {len(written)} figures to {args.figures}",
              file=sys.stderr)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="lktseq",
                     description="Logistic knowledge tracing with spacing "
                                 "and attentional comparison features")
    parser.add_argument("--version", action="version",
                        version=f"lktseq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit one model to a trial log")
    fit.add_argument("--data", required=True)
    fit.add_argument("--model", required=True,
                     help="formula or standard model name (e.g. AFM)")
    fit.add_argument("--seed", type=int, default=_default_seed())
    fit.add_argument("--ridge", type=float, default=1e-6)
    fit.add_argument("--restarts", type=int, default=3)
    fit.add_argument("--max-evals", type=int, default=200)
    fit.add_argument("--out", required=True)
    _add_column_flags(fit)
    fit.set_defaults(func=cmd_fit)

    cv = sub.add_parser("cv", help="repeated student-stratified CV")
    cv.add_argument("--data", required=True)
    cv.add_argument("--model", required=True)
    cv.add_argument("--folds", type=int, default=5)
    cv.add_argument("--repeats", type=int, default=10)
    cv.add_argument("--seed", type=int, default=_default_seed())
    cv.add_argument("--ridge", type=float, default=1e-6)
    cv.add_argument("--restarts", type=int, default=3)
    cv.add_argument("--max-evals", type=int, default=200)
    cv.add_argument("--group-by", default=None,
                    help="comma-separated keys for an extra grouped "
                         "correlation (e.g. phase,block_size)")
    cv.add_argument("--filter", default=None,
                    help='row filter for the extra grouping, e.g. '
                         '"phase=posttest"')
    cv.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    cv.add_argument("--out", default="cv_report.json")
    _add_column_flags(cv)
    cv.set_defaults(func=cmd_cv)

    feats = sub.add_parser("features",
                           help="dump the design matrix for audit")
    feats.add_argument("--data", required=True)
    feats.add_argument("--model", required=True)
    feats.add_argument("--out", default=None)
    _add_column_flags(feats)
    feats.set_defaults(func=cmd_features)

    sim = sub.add_parser("simulate", help="generate a synthetic trial log")
    sim.add_argument("--design", choices=["bird", "blob", "custom"],
                     default="bird")
    sim.add_argument("--config", default=None,
                     help="JSON file overriding design fields")
    sim.add_argument("--students", type=int, default=None)
    sim.add_argument("--seed", type=int, default=_default_seed())
    sim.add_argument("--truth-in", default=None,
                     help="JSON ground-truth learner to simulate from")
    sim.add_argument("--out", required=True)
    sim.add_argument("--truth", default=None,
                     help="where to write the ground truth used")
    sim.set_defaults(func=cmd_simulate)

    rep = sub.add_parser("report", help="model comparison table")
    rep.add_argument("reports", nargs="+")
    rep.add_argument("--format", choices=["table", "delimited"],
                     default="table")
    rep.add_argument("--out", default=None)
    rep.add_argument("--figures", default=None, metavar="DIR",
                     help="also render per-metric bar charts to DIR")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (SchemaError, RowError, ValidationError, ModelParseError,
            ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
