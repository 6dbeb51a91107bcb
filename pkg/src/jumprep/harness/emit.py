"""Deterministic CSV and JSON emission of result rows.

Rows are dicts. Columns follow a fixed preferred order, then any other keys
sorted by name, so identical rows always give identical bytes. Floats are
written with ``repr`` (shortest round-trip form).
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

PREFERRED = ("check", "quantity", "level", "n", "h", "t", "mark", "statistic", "value",
             "std_error", "tolerance", "status")
DEFAULT_COLUMNS = ("quantity", "value", "std_error")


class EmitError(OSError):
    """Writing a report failed."""


def as_rows(report):
    if report is None:
        return []
    if hasattr(report, "rows"):
        rows = report.rows
        return list(rows() if callable(rows) else rows)
    return list(report)


def columns_of(rows, columns=None):
    if columns is not None:
        return list(columns)
    if not rows:
        return list(DEFAULT_COLUMNS)
    keys = set().union(*(r.keys() for r in rows))
    head = [c for c in PREFERRED if c in keys]
    return head + sorted(keys - set(head))


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "item"):
        return _cell(v.item())
    return str(v)


def _plain(v):
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def to_csv(report, columns=None):
    rows = as_rows(report)
    cols = columns_of(rows, columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def to_json(report):
    rows = [{k: _plain(v) for k, v in r.items()} for r in as_rows(report)]
    return json.dumps(rows, indent=2) + "\n"


def emit_results(report, format="csv", path=None, columns=None):
    """Serialize ``report`` and write it to ``path`` (``None`` or ``"-"``: return only).

    Returns
    -------
    str
        The serialized text.
    """
    if format == "csv":
        text = to_csv(report, columns)
    elif format == "json":
        text = to_json(report)
    else:
        raise ValueError(f"unknown format {format!r}; use csv or json")
    if path is not None and str(path) != "-":
        try:
            Path(path).write_text(text)
        except OSError as exc:
            raise EmitError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return text


def parse_results(text, format="json"):
    """Inverse of :func:`emit_results` (CSV cells come back as strings)."""
    if format == "json":
        return json.loads(text)
    return list(csv.DictReader(io.StringIO(text)))
