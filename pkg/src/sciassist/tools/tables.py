"""Session-confined tabular data registry backing the table_* tools.

CSV/TSV parsing with multi-level header detection and light type
inference. Loading is gated on the on-demand catalog so agents can only
touch files the project has declared.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

MAX_HEADER_LEVELS = 3


class TableParseError(Exception):
    pass


@dataclass
class TableHandle:
    table_id: str
    source_path: str
    n_rows: int
    columns: list[dict]  # {name, type}
    header_levels: int

    def to_dict(self) -> dict:
        return {
            "table_id": self.table_id,
            "source_path": self.source_path,
            "n_rows": self.n_rows,
            "columns": self.columns,
            "header_levels": self.header_levels,
        }


def _parse_cell(raw: str) -> Any:
    text = raw.strip()
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _is_data_row(cells: list[Any]) -> bool:
    return any(isinstance(c, (int, float)) for c in cells)


def parse_delimited(path: Path) -> tuple[list[str], list[list[Any]], int]:
    """Returns (column names, typed data rows, header_levels).

    Header levels are the leading rows with no numeric cell, capped at 3;
    multi-level names join with ' / '.
    """
    delimiter = "\t" if path.suffix.lower() == ".tsv" else ","
    with open(path, newline="", encoding="utf-8") as handle:
        raw_rows = [row for row in csv.reader(handle, delimiter=delimiter) if row]
    if not raw_rows:
        raise TableParseError(f"{path.name} is empty")
    typed = [[_parse_cell(c) for c in row] for row in raw_rows]
    header_levels = 0
    for row in typed[:MAX_HEADER_LEVELS]:
        if _is_data_row(row):
            break
        header_levels += 1
    header_levels = max(header_levels, 1)
    width = max(len(r) for r in raw_rows)
    names = []
    for col in range(width):
        parts = []
        for level in range(header_levels):
            row = raw_rows[level]
            if col < len(row) and row[col].strip():
                parts.append(row[col].strip())
        names.append(" / ".join(parts) if parts else f"column_{col + 1}")
    data = [row + [None] * (width - len(row)) for row in typed[header_levels:]]
    return names, data, header_levels


def infer_column_type(values: list[Any]) -> str:
    present = [v for v in values if v is not None]
    if present and all(isinstance(v, int) for v in present):
        return "integer"
    if present and all(isinstance(v, (int, float)) for v in present):
        return "number"
    return "string"


class TableRegistry:
    """Loaded tables for one session."""

    def __init__(self):
        self._tables: dict[str, tuple[TableHandle, list[str], list[list[Any]]]] = {}
        self._counter = 0

    def load(self, path: Path, source_path: str) -> TableHandle:
        names, data, header_levels = parse_delimited(path)
        columns = [
            {"name": name, "type": infer_column_type([row[i] for row in data])}
            for i, name in enumerate(names)
        ]
        if not columns:
            raise TableParseError(f"{path.name} has no columns")
        self._counter += 1
        handle = TableHandle(
            table_id=f"t{self._counter}",
            source_path=source_path,
            n_rows=len(data),
            columns=columns,
            header_levels=header_levels,
        )
        self._tables[handle.table_id] = (handle, names, data)
        return handle

    def get(self, table_id: str) -> Optional[TableHandle]:
        entry = self._tables.get(table_id)
        return entry[0] if entry else None

    def preview(self, table_id: str, n: int) -> list[dict]:
        handle, names, data = self._tables[table_id]
        return [dict(zip(names, row)) for row in data[: max(n, 0)]]

    def describe(self, table_id: str) -> dict:
        handle, names, data = self._tables[table_id]
        out = {}
        for i, col in enumerate(handle.columns):
            values = [row[i] for row in data if row[i] is not None]
            if col["type"] in ("integer", "number"):
                out[col["name"]] = {
                    "count": len(values),
                    "min": min(values) if values else None,
                    "max": max(values) if values else None,
                    "mean": sum(values) / len(values) if values else None,
                }
            else:
                out[col["name"]] = {
                    "count": len(values),
                    "distinct": len({str(v) for v in values}),
                }
        return out
