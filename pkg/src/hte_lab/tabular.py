"""CSV input and output for datasets, truths and effect tables."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset, validate_dataset
from .errors import HTEError, MissingColumn, ParseError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoadReport:
    n_rows: int
    n_dropped: int  # blank lines skipped
    feature_names: tuple[str, ...]


def _read(path):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise HTEError(f"{path}: no such file", code="file-not-found") from None
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: missing header row")
    return [h.strip() for h in rows[0]], rows[1:]


def _numeric(path, header, body, columns):
    """Float matrix of ``columns`` (indices), file line of each row, and the
    number of blank lines dropped."""
    out, lines, dropped = [], [], 0
    width = len(header)
    for k, row in enumerate(body):
        line = k + 2
        if not row or all(not c.strip() for c in row):
            dropped += 1
            continue
        if len(row) != width:
            raise ParseError(f"{path}: line {line} has {len(row)} fields, header has {width}")
        vals = []
        for j in columns:
            try:
                vals.append(float(row[j]))
            except ValueError:
                raise ParseError(
                    f"{path}: line {line}, column {header[j]!r}: not a number: {row[j]!r}") from None
        out.append(vals)
        lines.append(line)
    if not out:
        raise HTEError(f"{path}: no data rows (n=0)", code="empty-data")
    return np.array(out, dtype=float), np.array(lines), dropped


def load_csv(path, treatment_col: str = "T", response_col: str = "Y") -> tuple[Dataset, LoadReport]:
    """Dataset from a CSV with a header; every other column is a feature."""
    header, body = _read(path)
    for name in (treatment_col, response_col):
        if name not in header:
            raise MissingColumn(f"{path}: no column {name!r}")
    ti, yi = header.index(treatment_col), header.index(response_col)
    feats = [j for j in range(len(header)) if j not in (ti, yi)]
    if not feats:
        raise MissingColumn(f"{path}: no feature columns")
    M, lines, dropped = _numeric(path, header, body, [ti, yi, *feats])
    t = M[:, 0]
    bad = np.flatnonzero((t != 0) & (t != 1))
    if bad.size:
        raise ParseError(f"{path}: line {lines[bad[0]]}, column {treatment_col!r}: "
                         f"treatment must be 0 or 1, got {t[bad[0]]:g}")
    names = tuple(header[j] for j in feats)
    d = Dataset(M[:, 2:], t.astype(np.int8), M[:, 1], list(names))
    validate_dataset(d)
    if dropped:
        log.info("%s: dropped %d blank rows", path, dropped)
    return d, LoadReport(d.n, dropped, names)


def load_features(path, names: list[str] | None = None) -> tuple[np.ndarray, list[str]]:
    """Feature matrix, selecting ``names`` (in that order) when given."""
    header, body = _read(path)
    if names is None:
        cols = list(range(len(header)))
    else:
        missing = [n for n in names if n not in header]
        if missing:
            raise MissingColumn(f"{path}: missing feature columns {missing[:5]}")
        cols = [header.index(n) for n in names]
    M, _, _ = _numeric(path, header, body, cols)
    return M, [header[j] for j in cols]


def load_columns(path) -> dict[str, np.ndarray]:
    header, body = _read(path)
    M, _, _ = _numeric(path, header, body, list(range(len(header))))
    return {h: M[:, j] for j, h in enumerate(header)}


def write_table(path, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(len(cols[0]) if cols else 0):
            w.writerow([_fmt(c[i]) for c in cols])


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    f = float(v)
    return str(int(f)) if f.is_integer() and abs(f) < 2 ** 53 else repr(f)


def dataset_columns(d: Dataset) -> dict[str, np.ndarray]:
    names = d.feature_names or [f"x{j + 1}" for j in range(d.p)]
    cols = {n: d.X[:, j] for j, n in enumerate(names)}
    cols["T"] = d.t
    cols["Y"] = d.y
    return cols
