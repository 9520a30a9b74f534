"""Result tables and their CSV / Markdown / figure emission.

All emitted files are deterministic: fixed row and column order, 4-decimal
fixed-point values, no timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class IoError(OSError):
    pass


@dataclass(frozen=True)
class ResultTable:
    row_header: str
    rows: list[str]
    columns: list[str]
    values: list[list[float]]  # rows x columns

    def __post_init__(self):
        if not self.rows or not self.columns:
            raise ValueError("result table needs at least one row and one column")
        if len(self.values) != len(self.rows) or any(
            len(r) != len(self.columns) for r in self.values
        ):
            raise ValueError("value grid does not match row/column labels")

    def cell(self, row: str, column: str) -> float:
        return self.values[self.rows.index(row)][self.columns.index(column)]


def _fmt(value: float) -> str:
    return f"{value:.4f}"


def format_csv(table: ResultTable) -> str:
    lines = [",".join([table.row_header] + table.columns)]
    for label, row in zip(table.rows, table.values):
        lines.append(",".join([label] + [_fmt(v) for v in row]))
    return "\n".join(lines) + "\n"


def format_markdown(table: ResultTable) -> str:
    header = [table.row_header] + table.columns
    body = [[label] + [_fmt(v) for v in row] for label, row in zip(table.rows, table.values)]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    def line(cells):
        return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"
    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([line(header), sep] + [line(r) for r in body]) + "\n"


def parse_csv(text: str) -> ResultTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise ValueError("result CSV needs a header and at least one data row")
    header = lines[0].split(",")
    rows, values = [], []
    for ln in lines[1:]:
        cells = ln.split(",")
        rows.append(cells[0])
        values.append([float(c) for c in cells[1:]])
    return ResultTable(row_header=header[0], rows=rows, columns=header[1:], values=values)


def emit_report(table: ResultTable, out_path: str | Path, fmt: str = "csv") -> Path:
    """Write one table in the requested format; returns the written path."""
    out_path = Path(out_path)
    if fmt == "csv":
        text = format_csv(table)
    elif fmt == "markdown":
        text = format_markdown(table)
    else:
        raise ValueError(f"unknown report format {fmt!r}, expected csv or markdown")
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text, encoding="utf-8")
    except OSError as err:
        raise IoError(f"cannot write report to {out_path}: {err}") from err
    return out_path


def run_table(records) -> ResultTable:
    """One-row-per-run summary table from RunRecords."""
    rows, values = [], []
    for rec in records:
        label = f"{rec.language or 'run'}[{rec.arch}]"
        rows.append(label)
        values.append(
            [
                float(rec.best_epoch),
                rec.best_eval_loss,
                rec.eval_macro_f1[rec.best_epoch - 1] if rec.best_epoch else 0.0,
            ]
        )
    return ResultTable(row_header="run", rows=rows, columns=["best_epoch", "eval_loss", "macro_f1"], values=values)


def epochs_csv(record, out_path: str | Path) -> Path:
    """Per-epoch curve data alongside the rendered figure."""
    out_path = Path(out_path)
    lines = ["epoch,train_loss,eval_loss,eval_macro_f1"]
    for i, (tr, ev, f1) in enumerate(
        zip(record.train_loss, record.eval_loss, record.eval_macro_f1), start=1
    ):
        lines.append(f"{i},{tr:.6f},{ev:.6f},{f1:.6f}")
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out_path
