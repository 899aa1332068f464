"""Model comparison tables and summary figures from CV report files."""

from __future__ import annotations

from pathlib import Path

import pandas as pd

METRIC_ORDER = ["r2_mcfadden", "auc", "rmse", "r1", "r2", "r3"]
_HEADERS = {"r2_mcfadden": "R2", "auc": "AUC", "rmse": "RMSE",
            "r1": "r1", "r2": "r2", "r3": "r3"}


class ReportSchemaError(ValueError):
    pass


def load_cv_report(path) -> dict:
    import json
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except Exception as exc:
        raise ReportSchemaError(f"{path}: not readable as JSON ({exc})")
    if "means" not in data or "formula" not in data:
        raise ReportSchemaError(f"{path}: missing 'means'/'formula' fields")
    return data


def comparison_table(reports: list[dict]) -> pd.DataFrame:
    """Rows = models, columns = mean test-fold metrics."""
    rows = []
    for data in reports:
        means = data["means"]
        label = data.get("name") or data["formula"]
        row = {"model": label}
        for metric in METRIC_ORDER:
            row[_HEADERS[metric]] = means.get(metric)
        rows.append(row)
    return pd.DataFrame(rows)


def render_table(table: pd.DataFrame, fmt: str = "table") -> str:
    frame = table.copy()
    for col in frame.columns:
        if col != "model":
            frame[col] = frame[col].map(
                lambda v: "NA" if v is None or pd.isna(v) else f"{v:.3f}")
    if fmt == "delimited":
        return frame.to_csv(index=False)
    if fmt != "table":
        raise ValueError(f"unknown format {fmt!r}")
    return frame.to_string(index=False)


def render_figures(table: pd.DataFrame, outdir) -> list[Path]:
    """One bar chart per metric across models, written as PNG files."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    labels = [str(m)[:40] for m in table["model"]]
    for col in table.columns:
        if col == "model":
            continue
        values = pd.to_numeric(table[col], errors="coerce")
        if values.isna().all():
            continue
        fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 3.5))
        ax.bar(range(len(labels)), values.fillna(0.0))
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
        ax.set_ylabel(col)
        ax.set_title(f"Mean test-fold {col}")
        fig.tight_layout()
        path = outdir / f"metric_{col.lower()}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
