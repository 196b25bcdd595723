"""Output writers: delimited tables and JSON records, each embedding the
configuration hash and seed so every artifact is traceable to its run."""

from __future__ import annotations

import json
import os


def _meta_lines(meta: dict) -> str:
    return "".join(f"# {k}={v}\n" for k, v in meta.items())


def write_table(path, columns: list[str], rows, meta: dict, fmt: str = "csv"):
    """Write a table as CSV with comment metadata, or as a JSON record."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    if fmt == "json":
        payload = dict(meta)
        payload["columns"] = columns
        payload["rows"] = [list(r) for r in rows]
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, default=_jsonify)
            fh.write("\n")
        return
    with open(path, "w", newline="") as fh:
        fh.write(_meta_lines(meta))
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(v) for v in row) + "\n")


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _jsonify(value):
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)


def write_json(path, payload: dict, meta: dict):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    record = dict(meta)
    record.update(payload)
    with open(path, "w") as fh:
        json.dump(record, fh, indent=1, default=_jsonify)
        fh.write("\n")


def read_table(path):
    """Read back a CSV written by write_table: (meta, columns, rows)."""
    meta, columns, rows = {}, None, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line.lstrip("# ").partition("=")
                meta[key] = value
                continue
            if columns is None:
                columns = line.split(",")
                continue
            rows.append(line.split(","))
    return meta, columns or [], rows
