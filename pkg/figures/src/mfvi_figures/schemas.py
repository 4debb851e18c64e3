"""CSV readers for the training-harness output files.

The file formats are the only coupling to the producing package: one
provenance comment line (ignored), a header row, then data rows.  Readers
validate the header against the expected schema and fail naming the first
offending column.
"""

from __future__ import annotations

import csv
from pathlib import Path

FUNCTIONALS_COLUMNS = ["scheme", "N", "seed", "t", "functional", "value"]
SUMMARY_COLUMNS = ["scheme", "N", "functional", "t", "mean", "std",
                   "q025", "q25", "q50", "q75", "q975"]
HIST_COLUMNS = ["scheme", "N", "t", "functional", "bin_left", "bin_right", "count"]


class SchemaError(ValueError):
    """Input file does not match the expected schema."""


def _check_header(header: list[str], expected: list[str], path) -> None:
    for i, want in enumerate(expected):
        got = header[i] if i < len(header) else "<missing>"
        if got != want:
            raise SchemaError(f"{path}: expected column {i + 1} to be {want!r}, got {got!r}")
    if len(header) > len(expected):
        raise SchemaError(f"{path}: unexpected extra column {header[len(expected)]!r}")


def read_rows(path: str | Path, expected: list[str]) -> list[dict]:
    """Rows as dicts keyed by column name; comment lines are skipped."""
    path = Path(path)
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(f"{path}: empty file (no header row)") from None
    _check_header(header, expected, path)
    rows = []
    for row in reader:
        if not row:
            continue
        if len(row) != len(expected):
            raise SchemaError(f"{path}: row with {len(row)} fields, expected {len(expected)}")
        rows.append(dict(zip(expected, row)))
    return rows


def read_functionals(path) -> list[dict]:
    rows = read_rows(path, FUNCTIONALS_COLUMNS)
    for r in rows:
        r["N"] = int(r["N"])
        r["seed"] = int(r["seed"])
        r["t"] = float(r["t"])
        r["value"] = float(r["value"])
    return rows


def read_summary(path) -> list[dict]:
    rows = read_rows(path, SUMMARY_COLUMNS)
    for r in rows:
        r["N"] = int(r["N"])
        r["t"] = float(r["t"])
        for key in ("mean", "std", "q025", "q25", "q50", "q75", "q975"):
            r[key] = float(r[key])
    return rows


def read_hist(path) -> list[dict]:
    rows = read_rows(path, HIST_COLUMNS)
    for r in rows:
        r["N"] = int(r["N"])
        r["t"] = float(r["t"])
        r["bin_left"] = float(r["bin_left"])
        r["bin_right"] = float(r["bin_right"])
        r["count"] = int(r["count"])
    return rows
