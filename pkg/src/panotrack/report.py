"""Text and CSV tables for evaluation results."""

from __future__ import annotations

import csv
import io
from typing import Sequence

from .metrics import EvalResult, pool

COLUMNS = ["HOTA", "DetA", "AssA", "MOTA", "IDF1", "OSPA", "TP", "FP", "FN", "IDSW"]
_RATIO = {"HOTA": "hota", "DetA": "deta", "AssA": "assa", "MOTA": "mota", "IDF1": "idf1"}
_COUNT = {"TP": "tp", "FP": "fp", "FN": "fn", "IDSW": "idsw"}


def rows(results: Sequence[EvalResult], aggregate_name: str = "COMBINED") -> list[EvalResult]:
    if not results:
        raise ValueError("no results to report")
    return list(results) + [pool(results, aggregate_name)]


def _cells(r: EvalResult) -> list[str]:
    out = [r.name]
    for col in COLUMNS:
        if col in _RATIO:
            out.append(f"{100.0 * getattr(r, _RATIO[col]):.2f}")
        elif col == "OSPA":
            out.append(f"{r.ospa:.2f}")
        else:
            out.append(str(getattr(r, _COUNT[col])))
    return out


def to_text(results: Sequence[EvalResult]) -> str:
    """Aligned table; ratios as percentages, OSPA as a fraction, both to two decimals."""
    table = [["Sequence"] + COLUMNS] + [_cells(r) for r in rows(results)]
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    lines = []
    for k, row in enumerate(table):
        first = row[0].ljust(widths[0])
        rest = [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append("  ".join([first] + rest))
        if k == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def to_csv(results: Sequence[EvalResult]) -> str:
    """CSV at full precision (``repr`` floats) so it re-parses to the in-memory values."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sequence"] + COLUMNS)
    for r in rows(results):
        w.writerow(
            [r.name]
            + [repr(getattr(r, _RATIO[c])) for c in COLUMNS[:5]]
            + [repr(r.ospa)]
            + [getattr(r, _COUNT[c]) for c in COLUMNS[6:]]
        )
    return buf.getvalue()


def parse_csv(text: str) -> list[dict]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        rec = {"sequence": row["sequence"]}
        for c in COLUMNS:
            rec[c] = int(row[c]) if c in _COUNT else float(row[c])
        out.append(rec)
    return out


def report(results: Sequence[EvalResult], format: str = "text") -> str:
    if format == "text":
        return to_text(results)
    if format == "csv":
        return to_csv(results)
    raise ValueError(f"unknown report format {format!r}")
