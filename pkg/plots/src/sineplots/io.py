"""Readers for the engine's documented output schemas."""

from __future__ import annotations

import csv
import json
from pathlib import Path


class SchemaError(ValueError):
    """Input file missing, malformed, or lacking a referenced column."""


def read_csv_columns(path, required: tuple[str, ...]) -> dict[str, list[str]]:
    """Parse a csv into columns, insisting that every required column exists.

    Values stay as strings; the caller knows which columns are numeric.
    A header-only file yields empty lists, which renderers turn into a
    "no data" figure rather than an error.
    """
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"input file not found: {path}")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path.name} is empty, expected a header row") from None
        for col in required:
            if col not in header:
                raise SchemaError(f"{path.name} is missing column {col!r}")
        cols: dict[str, list[str]] = {h: [] for h in header}
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"{path.name}: row has {len(row)} fields, header has {len(header)}"
                )
            for h, v in zip(header, row):
                cols[h].append(v)
    return cols


def floats(cols: dict[str, list[str]], name: str) -> list[float]:
    try:
        return [float(v) for v in cols[name]]
    except ValueError as exc:
        raise SchemaError(f"column {name!r} holds a non-numeric value: {exc}") from None


def read_summary(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"input file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path.name} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{path.name} must hold a JSON object")
    return doc


def summary_beta(doc: dict) -> float:
    """Pull beta out of either summary layout (single run nests it under
    config, the sweep stores it at top level)."""
    if "beta" in doc:
        return float(doc["beta"])
    cfg = doc.get("config")
    if isinstance(cfg, dict) and "beta" in cfg:
        return float(cfg["beta"])
    raise SchemaError("summary.json carries no beta (neither top level nor config)")
