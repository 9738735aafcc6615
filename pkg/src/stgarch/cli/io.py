"""CSV ingestion and serialization."""

from __future__ import annotations

import csv
import datetime as _dt
import logging
import math
from pathlib import Path

import numpy as np

from stgarch.core import Panel

__all__ = [
    "IngestError",
    "FLOAT_FMT",
    "fmt",
    "ingest_panel",
    "read_locations",
    "read_returns",
    "read_targets",
    "write_locations",
    "write_matrix",
    "write_rows",
]

logger = logging.getLogger(__name__)

FLOAT_FMT = ".17g"


class IngestError(ValueError):
    """Malformed input file; ``row`` and ``column`` are 1-based file coordinates."""

    def __init__(self, message: str, path=None, row: int | None = None, column: int | None = None):
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")
        self.path = path
        self.row = row
        self.column = column


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), FLOAT_FMT) if math.isfinite(v) else ("nan" if math.isnan(v) else str(float(v)))
    return str(v)


def _parse_float(text: str, path, row: int, col: int) -> float:
    s = text.strip()
    if s == "":
        raise IngestError("empty cell", path, row, col)
    try:
        v = float(s)
    except ValueError:
        raise IngestError(f"non-numeric cell {text!r}", path, row, col) from None
    if not math.isfinite(v):
        raise IngestError(f"non-finite value {text!r}", path, row, col)
    return v


def _read_rows(path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh)]
    if not rows:
        raise IngestError("file is empty", path)
    return rows


def _date_key(text: str):
    try:
        return _dt.date.fromisoformat(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return None


def read_returns(path) -> tuple[list[str], list[str], np.ndarray]:
    """Parse a returns CSV: header ``date, entity...``, one row per date.

    Dates must be unique and strictly increasing (ISO dates or numbers).
    """
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise IngestError("need a date column and at least one entity column", path, 1)
    entities = header[1:]
    seen = {}
    for c, e in enumerate(entities, start=2):
        if e == "":
            raise IngestError("empty entity name in header", path, 1, c)
        if e in seen:
            raise IngestError(f"duplicate entity {e!r} in header", path, 1, c)
        seen[e] = c
    dates, values = [], []
    keys = []
    for i, r in enumerate(rows[1:], start=2):
        if not r or all(x.strip() == "" for x in r):
            continue
        if len(r) != len(header):
            raise IngestError(f"expected {len(header)} cells, found {len(r)}", path, i)
        d = r[0].strip()
        if d == "":
            raise IngestError("empty date", path, i, 1)
        if d in dates:
            raise IngestError(f"duplicate date {d!r}", path, i, 1)
        k = _date_key(d)
        if k is None:
            raise IngestError(f"unparseable date {d!r}", path, i, 1)
        if keys and (type(k) is not type(keys[-1]) or k <= keys[-1]):
            raise IngestError(f"date {d!r} is not after the previous date", path, i, 1)
        keys.append(k)
        dates.append(d)
        values.append([_parse_float(x, path, i, c) for c, x in enumerate(r[1:], start=2)])
    if not values:
        raise IngestError("no data rows", path)
    return dates, entities, np.array(values, dtype=float)


def read_locations(path) -> dict[str, tuple[float, float]]:
    """Parse a locations CSV with header ``entity, x, y``."""
    rows = _read_rows(path)
    header = [h.strip().lower() for h in rows[0]]
    if header[:3] != ["entity", "x", "y"]:
        raise IngestError("header must be 'entity,x,y'", path, 1)
    out = {}
    for i, r in enumerate(rows[1:], start=2):
        if not r or all(x.strip() == "" for x in r):
            continue
        if len(r) < 3:
            raise IngestError(f"expected 3 cells, found {len(r)}", path, i)
        e = r[0].strip()
        if e in out:
            raise IngestError(f"duplicate entity {e!r}", path, i, 1)
        out[e] = (_parse_float(r[1], path, i, 2), _parse_float(r[2], path, i, 3))
    return out


def read_targets(path) -> tuple[list[str], np.ndarray]:
    loc = read_locations(path)
    names = list(loc)
    return names, np.array([loc[n] for n in names], dtype=float).reshape(-1, 2)


def ingest_panel(returns_path, locations_path) -> Panel:
    """Build a :class:`Panel` from a returns CSV and a locations CSV.

    Columns are matched by entity label; every returns entity needs a
    location. Locations of entities absent from the returns are ignored.
    """
    dates, entities, values = read_returns(returns_path)
    loc = read_locations(locations_path)
    for c, e in enumerate(entities, start=2):
        if e not in loc:
            raise IngestError(f"entity {e!r} has no location", returns_path, 1, c)
    extra = sorted(set(loc) - set(entities))
    if extra:
        logger.info("ignoring %d locations without returns", len(extra))
    coords = np.array([loc[e] for e in entities], dtype=float)
    return Panel(coords, values, labels=list(entities), times=list(dates))


def write_rows(path, header, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def write_matrix(path, index_name: str, index, columns, matrix) -> None:
    """Write a matrix with a leading index column."""
    m = np.asarray(matrix)
    write_rows(path, [index_name, *columns], ([i, *row] for i, row in zip(index, m)))


def write_locations(path, labels, locations) -> None:
    write_rows(path, ["entity", "x", "y"], ([e, x, y] for e, (x, y) in zip(labels, np.asarray(locations))))
