"""Delimited-text input and output.

Numbers are written with 17 significant digits so a read/write round trip
is lossless.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import IncompleteMatrix
from .errors import InputError, ParseError, RaggedRowsError

FLOAT_FORMAT = ".17g"


@dataclass(frozen=True)
class DatasetFile:
    path: Path
    delimiter: str = ","
    na_token: str = "NA"
    header: bool = False


@dataclass(frozen=True, eq=False)
class Dataset:
    matrix: IncompleteMatrix
    columns: list[str] | None = None


def format_number(value: float, na_token: str = "NA") -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return na_token
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), FLOAT_FORMAT)


def parse_text(text: str, delimiter: str = ",", na_token: str = "NA",
               header: bool = False) -> Dataset:
    rows = [r for r in csv.reader(text.splitlines(), delimiter=delimiter)]
    # A trailing blank line is not a data row.
    while rows and rows[-1] == []:
        rows.pop()
    columns = None
    first_line = 1
    if header:
        if not rows:
            raise ParseError("missing header line")
        columns = [c.strip() for c in rows.pop(0)]
        first_line = 2
    if not rows:
        raise ParseError("no data rows")
    width = len(columns) if columns is not None else len(rows[0])
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        line = i + first_line
        if len(row) != width:
            raise RaggedRowsError(f"expected {width} fields, found {len(row)}", line, len(row))
        for j, token in enumerate(row):
            token = token.strip()
            if token == "" or token == na_token:
                values[i, j] = np.nan
                continue
            try:
                v = float(token)
            except ValueError:
                raise ParseError(f"non-numeric token {token!r}", line, j + 1) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite value {token!r}", line, j + 1)
            values[i, j] = v
    return Dataset(IncompleteMatrix.from_array(values), columns)


def read_dataset(file: DatasetFile | str | Path, **kwargs) -> Dataset:
    if not isinstance(file, DatasetFile):
        file = DatasetFile(Path(file), **kwargs)
    try:
        text = Path(file.path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {file.path}: {exc}") from exc
    return parse_text(text, file.delimiter, file.na_token, file.header)


def format_matrix(values: np.ndarray, columns: Sequence[str] | None = None,
                  delimiter: str = ",", na_token: str = "NA") -> str:
    lines = []
    if columns is not None:
        lines.append(delimiter.join(columns))
    for row in np.asarray(values, dtype=float):
        lines.append(delimiter.join(format_number(v, na_token) for v in row))
    return "\n".join(lines) + "\n"


def write_matrix(path: Path, values: np.ndarray, columns: Sequence[str] | None = None,
                 delimiter: str = ",", na_token: str = "NA") -> Path:
    path = Path(path)
    path.write_text(format_matrix(values, columns, delimiter, na_token))
    return path


def write_table(path: Path, header: Sequence[str], rows: Iterable[Sequence],
                delimiter: str = ",") -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else format_number(v) for v in row])
    return path


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path: Path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (Path,)):
        return str(obj)
    if isinstance(obj, (tuple, set)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
