"""Report emission: per-split CSVs, summary tables, aligned markdown.

CSV is the machine contract; floats are written with ``repr`` (shortest
round-trip form) so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .harness import ALL_LAYERS, EvalResult, SplitOutcome


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_per_split_csv(outcomes: list[SplitOutcome], path: str | Path,
                        layer: str | None = None, dimension: int | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["split", "seed", "plcc", "srocc", "status", "detail"]
        if layer is not None:
            header = ["layer", "dimension"] + header
        writer.writerow(header)
        for o in outcomes:
            row = [o.split_index, o.seed, _fmt(o.plcc), _fmt(o.srocc), o.status, o.detail]
            if layer is not None:
                row = [layer, dimension] + row
            writer.writerow(row)


def write_ablation_per_split_csv(results: list[EvalResult], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "dimension", "split", "seed", "plcc", "srocc",
                         "status", "detail"])
        for res in results:
            for o in res.outcomes:
                writer.writerow([
                    res.layer, res.dimension, o.split_index, o.seed,
                    _fmt(o.plcc), _fmt(o.srocc), o.status, o.detail,
                ])


@dataclass
class ReportRow:
    layer: str
    dimension: int
    plcc_mean: float
    plcc_median: float
    plcc_std: float
    srocc_mean: float
    srocc_median: float
    srocc_std: float
    n_effective: int


@dataclass
class ReportTable:
    """One row per layer plus exactly one concatenated-descriptor row."""

    rows: list[ReportRow]

    def __post_init__(self):
        if sum(1 for r in self.rows if r.layer == ALL_LAYERS) != 1:
            raise ValueError(f"report table needs exactly one {ALL_LAYERS!r} row")


def report_rows(results: list[EvalResult]) -> list[ReportRow]:
    rows = []
    for res in results:
        s = res.summary
        if s is None:
            rows.append(ReportRow(res.layer or ALL_LAYERS, res.dimension,
                                  float("nan"), float("nan"), float("nan"),
                                  float("nan"), float("nan"), float("nan"), 0))
        else:
            rows.append(ReportRow(
                res.layer or ALL_LAYERS, res.dimension,
                s.plcc_mean, s.plcc_median, s.plcc_std,
                s.srocc_mean, s.srocc_median, s.srocc_std,
                res.n_effective,
            ))
    return rows


def report_table(results: list[EvalResult]) -> ReportTable:
    return ReportTable(rows=report_rows(results))


_TABLE_COLUMNS = ("layer", "dimension", "plcc_mean", "plcc_median", "plcc_std",
                  "srocc_mean", "srocc_median", "srocc_std", "n_effective")


def write_table_csv(table: ReportTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TABLE_COLUMNS)
        for r in table.rows:
            writer.writerow([_fmt(getattr(r, c)) for c in _TABLE_COLUMNS])


def format_table_markdown(table: ReportTable) -> str:
    return format_rows_markdown(table.rows)


def format_rows_markdown(rows: list[ReportRow]) -> str:
    """Aligned markdown with the mean/median (+-std) layout of the CSV data."""
    header = ["Layer", "Dim", "PLCC", "SROCC", "n"]
    body = []
    for r in rows:
        body.append([
            r.layer,
            str(r.dimension),
            f"{r.plcc_mean:.4f}/{r.plcc_median:.4f} (+-{r.plcc_std:.4f})",
            f"{r.srocc_mean:.4f}/{r.srocc_median:.4f} (+-{r.srocc_std:.4f})",
            str(r.n_effective),
        ])
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = [
        "| " + " | ".join(h.ljust(w) for h, w in zip(header, widths)) + " |",
        "|-" + "-|-".join("-" * w for w in widths) + "-|",
    ]
    for row in body:
        lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |")
    return "\n".join(lines) + "\n"


def write_summary_csv(result: EvalResult, path: str | Path) -> None:
    # single-result summary: same columns as a report table, no table invariant
    rows = report_rows([result])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TABLE_COLUMNS)
        for r in rows:
            writer.writerow([_fmt(getattr(r, c)) for c in _TABLE_COLUMNS])
