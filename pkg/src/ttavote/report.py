"""CSV/JSON emission for experiment reports and figure data series."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .selection import ExperimentReport

TABLE1_COLUMNS = ["category", "avg_individual_cer", "error_correlation"]
TABLE2_COLUMNS = ["method", "category"]
CALIBRATION_COLUMNS = [
    "category",
    "n_fields",
    "correlation_raw",
    "correlation_isotonic",
    "ece_raw",
    "ece_isotonic",
    "ace_raw",
    "ace_isotonic",
    "brier_raw",
    "brier_isotonic",
]
RELIABILITY_COLUMNS = ["category", "bin_center", "mean_confidence", "accuracy", "count"]
PR_COLUMNS = ["category", "ensemble_size", "precision", "recall", "f1"]
OUTCOME_COLUMNS = [
    "record_id",
    "field",
    "category",
    "method",
    "ensemble_size",
    "predicted",
    "truth",
    "exact_match",
    "cer",
    "confidence",
    "unanimous",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in columns])


def _size_columns(rows: list[dict], prefix_cols: list[str]) -> list[str]:
    sizes = sorted(
        {
            int(key.rsplit("_", 1)[1])
            for row in rows
            for key in row
            if key.startswith("consensus_cer_")
        }
    )
    cols = list(prefix_cols[:1])
    for size in sizes:
        cols.append(f"consensus_cer_{size}")
    for size in sizes:
        cols.append(f"field_accuracy_{size}")
    cols.extend(prefix_cols[1:])
    return cols


def write_report(report: ExperimentReport, out_dir: Path | str) -> dict[str, Path]:
    """Write the four report CSVs plus the flat outcome table."""
    out_dir = Path(out_dir)
    report_dir = out_dir / "report"
    paths = {
        "table1": report_dir / "table1.csv",
        "table2": report_dir / "table2.csv",
        "calibration": report_dir / "calibration.csv",
        "reliability_curve": report_dir / "reliability_curve.csv",
        "pr_unanimous": report_dir / "pr_unanimous.csv",
        "outcomes": out_dir / "outcomes.csv",
    }
    write_csv(paths["table1"], _size_columns(report.table1_rows, TABLE1_COLUMNS), report.table1_rows)
    write_csv(paths["table2"], _size_columns(report.table2_rows, TABLE2_COLUMNS), report.table2_rows)
    write_csv(paths["calibration"], CALIBRATION_COLUMNS, report.calibration_rows)
    write_csv(paths["reliability_curve"], RELIABILITY_COLUMNS, report.reliability_rows)
    write_csv(paths["pr_unanimous"], PR_COLUMNS, report.pr_rows)
    write_csv(paths["outcomes"], OUTCOME_COLUMNS, report.outcome_rows)
    return paths


def write_aggregate_json(report: ExperimentReport, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "table1": report.table1_rows,
        "table2": report.table2_rows,
        "calibration": report.calibration_rows,
        "pr_unanimous": report.pr_rows,
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_outcomes_csv(path: Path | str) -> list[dict]:
    """Parse a flat outcome CSV, reporting malformed rows by line number."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"outcome CSV not found: {path}")
    rows = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append(
                    {
                        "record_id": row["record_id"],
                        "field": row["field"],
                        "category": row["category"],
                        "method": row["method"],
                        "ensemble_size": int(row["ensemble_size"]),
                        "predicted": row["predicted"],
                        "truth": row["truth"],
                        "exact_match": int(row["exact_match"]),
                        "cer": float(row["cer"]),
                        "confidence": float(row["confidence"]),
                        "unanimous": int(row["unanimous"]),
                    }
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: malformed row at line {lineno}: {exc}") from exc
    return rows


def consensus_cer_series(outcome_rows: list[dict], categories: list[str] | None = None) -> list[dict]:
    """Consensus CER vs ensemble size per category (accuracy-curve shape)."""
    rows = [r for r in outcome_rows if r["method"] in ("greedy_consensus", "baseline")]
    if categories:
        rows = [r for r in rows if r["category"] in categories]
    return _aggregate_series(rows, "category")


def method_comparison_series(outcome_rows: list[dict]) -> list[dict]:
    """Consensus CER vs ensemble size per selection method."""
    return _aggregate_series(outcome_rows, "method")


def _aggregate_series(rows: list[dict], group_col: str) -> list[dict]:
    groups: dict[tuple[str, int], list[dict]] = {}
    for row in rows:
        groups.setdefault((row[group_col], row["ensemble_size"]), []).append(row)
    out = []
    for (group, size), members in sorted(groups.items()):
        out.append(
            {
                group_col: group,
                "ensemble_size": size,
                "consensus_cer": sum(m["cer"] for m in members) / len(members),
                "field_accuracy": 100.0 * sum(m["exact_match"] for m in members) / len(members),
                "n_fields": len(members),
            }
        )
    return out


def pr_series(outcome_rows: list[dict], categories: list[str] | None = None) -> list[dict]:
    """Unanimous-prediction precision/recall vs ensemble size per category."""
    rows = [r for r in outcome_rows if r["method"] == "greedy_consensus"]
    if categories:
        rows = [r for r in rows if r["category"] in categories]
    groups: dict[tuple[str, int], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["category"], row["ensemble_size"]), []).append(row)
    out = []
    for (category, size), members in sorted(groups.items()):
        n_unanimous = sum(m["unanimous"] for m in members)
        n_correct = sum(m["exact_match"] for m in members)
        tp = sum(1 for m in members if m["unanimous"] and m["exact_match"])
        precision = tp / n_unanimous if n_unanimous else None
        recall = tp / n_correct if n_correct else None
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision is not None and recall is not None and precision + recall > 0
            else None
        )
        out.append(
            {
                "category": category,
                "ensemble_size": size,
                "precision": precision,
                "recall": recall,
                "f1": f1,
                "n_fields": len(members),
            }
        )
    return out
