"""Deterministic CSV/JSON writers used by the CLI and report objects.

All files are byte-reproducible: floats are rendered with ``repr`` (shortest
round-trip form), JSON keys are sorted, and CSV rows use CRLF line endings
with a header row. An optional leading ``#`` comment line carries run
provenance (config hash, master seed); readers in this package skip it.
"""

from __future__ import annotations

import csv
import json
from typing import Any, Iterable, Mapping


def format_value(v: Any) -> str:
    """Render a cell deterministically; floats use shortest round-trip repr."""
    if hasattr(v, "item"):  # numpy scalar -> python scalar first
        v = v.item()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(
    path: str,
    header: Iterable[str],
    rows: Iterable[Iterable[Any]],
    meta: Mapping[str, Any] | None = None,
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if meta:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\r\n")
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def _jsonable(obj: Any) -> Any:
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):  # numpy array or scalar
        return _jsonable(obj.tolist())
    return obj


def write_json(path: str, obj: Any, meta: Mapping[str, Any] | None = None) -> None:
    payload = _jsonable(obj)
    if meta:
        payload = dict(payload)
        payload.update({k: _jsonable(v) for k, v in meta.items()})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
