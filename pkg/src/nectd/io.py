"""
CSV reading and writing for data sets, draws and summaries.

Formats (headered, comma-separated, UTF-8, ``.`` decimal):

* selection: ``u, y, x1..xK, w1..wL`` with ``y`` empty where ``u == 0``;
* robit: ``y1..yp`` then ``x<k>.<j>``, coefficient ``k`` of equation ``j``;
* lmm (long): ``group, y, x1..xK, z1..zL``;
* nectd: ``x1..xp``;
* draws: one column per scalar parameter, one row per retained draw;
* truth: ``parameter, value``.

Floats are written with ``%.17g`` so a write-read cycle is exact.
"""

import csv
import math
import os

import numpy as np

from .lmm import LmmData
from .robit import RobitData
from .selection import SelectionData


class CsvFormatError(ValueError):
    """Malformed CSV input; the message names the file and line."""


def format_value(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    return "" if math.isnan(value) else "%.17g" % value


def write_table(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_table(path, allow_empty=()):
    """Read a numeric CSV; returns ``(header, array)``.

    Empty cells become NaN in the columns listed in ``allow_empty`` and are
    an error elsewhere. Every error names the offending line.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise CsvFormatError(f"{path}:1: duplicate column names")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
            values = []
            for name, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    if name not in allow_empty:
                        raise CsvFormatError(f"{path}:{line}: empty value in column {name!r}")
                    values.append(math.nan)
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise CsvFormatError(f"{path}:{line}: cannot parse {cell!r} in column {name!r}") from None
                if not math.isfinite(values[-1]):
                    raise CsvFormatError(f"{path}:{line}: non-finite value in column {name!r}")
            rows.append(values)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data


def _numbered(header, prefix):
    """Columns named ``prefix1, prefix2, ...`` in numeric order."""
    found = {}
    for i, name in enumerate(header):
        tail = name[len(prefix):]
        if name.startswith(prefix) and tail.isdigit():
            found[int(tail)] = i
    if sorted(found) != list(range(1, len(found) + 1)):
        raise CsvFormatError(f"columns {prefix}1..{prefix}K must be consecutive")
    return [found[k] for k in sorted(found)]


def _column(header, name, path):
    try:
        return header.index(name)
    except ValueError:
        raise CsvFormatError(f"{path}: missing column {name!r}") from None


def write_selection(path, data: SelectionData):
    header = ["u", "y"] + [f"x{k + 1}" for k in range(data.x.shape[1])]
    header += [f"w{k + 1}" for k in range(data.w.shape[1])]
    rows = (
        [int(data.u[i]), data.y[i], *data.x[i], *data.w[i]] for i in range(data.n)
    )
    write_table(path, header, rows)


def read_selection(path) -> SelectionData:
    header, arr = read_table(path, allow_empty=("y",))
    u = arr[:, _column(header, "u", path)]
    y = arr[:, _column(header, "y", path)]
    bad = np.flatnonzero(np.isnan(y) != (u == 0))
    if bad.size:
        raise CsvFormatError(f"{path}:{bad[0] + 2}: y must be empty exactly when u is 0")
    return SelectionData(arr[:, _numbered(header, "x")], arr[:, _numbered(header, "w")], u, y)


def write_robit(path, data: RobitData):
    p, K = data.p, data.k
    header = [f"y{j + 1}" for j in range(p)]
    header += [f"x{k + 1}.{j + 1}" for j in range(p) for k in range(K)]
    rows = ([*data.y[i], *data.x[i].ravel()] for i in range(data.n))
    write_table(path, header, rows)


def read_robit(path) -> RobitData:
    header, arr = read_table(path)
    ycols = _numbered(header, "y")
    p = len(ycols)
    xcols = {}
    for i, name in enumerate(header):
        if name.startswith("x") and "." in name:
            k, j = name[1:].split(".", 1)
            if not (k.isdigit() and j.isdigit()):
                raise CsvFormatError(f"{path}:1: bad covariate column {name!r}")
            xcols[(int(j), int(k))] = i
    K = max((k for _, k in xcols), default=0)
    expected = {(j, k) for j in range(1, p + 1) for k in range(1, K + 1)}
    if K == 0 or set(xcols) != expected:
        raise CsvFormatError(f"{path}:1: need covariate columns x1.1..x{K}.{p} for every equation")
    x = np.stack([arr[:, [xcols[(j, k)] for k in range(1, K + 1)]] for j in range(1, p + 1)], axis=1)
    return RobitData(arr[:, ycols], x)


def write_lmm(path, data: LmmData):
    header = ["group", "y"] + [f"x{k + 1}" for k in range(data.k)] + [f"z{k + 1}" for k in range(data.l)]
    rows = []
    for g in range(data.m):
        for i in np.flatnonzero(data.mask[g]):
            rows.append([g + 1, data.y[g, i], *data.x[g, i], *data.z[g, i]])
    write_table(path, header, rows)


def read_lmm(path) -> LmmData:
    header, arr = read_table(path)
    gcol = _column(header, "group", path)
    ycol = _column(header, "y", path)
    xcols, zcols = _numbered(header, "x"), _numbered(header, "z")
    labels = arr[:, gcol]
    # groups keep the order of their first appearance
    _, first = np.unique(labels, return_index=True)
    groups = []
    for label in labels[np.sort(first)]:
        rows = arr[labels == label]
        groups.append((rows[:, ycol], rows[:, xcols], rows[:, zcols]))
    if not groups:
        raise CsvFormatError(f"{path}: no data rows")
    return LmmData.from_groups(groups)


def write_matrix(path, X):
    X = np.atleast_2d(X)
    write_table(path, [f"x{k + 1}" for k in range(X.shape[1])], X)


def read_matrix(path) -> np.ndarray:
    header, arr = read_table(path)
    return arr[:, _numbered(header, "x")]


WRITERS = {"selection": write_selection, "robit": write_robit, "lmm": write_lmm, "nectd": write_matrix}
READERS = {"selection": read_selection, "robit": read_robit, "lmm": read_lmm, "nectd": read_matrix}


def write_truth(path, truth: dict):
    write_table(path, ["parameter", "value"], [])
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for name, value in truth.items():
            writer.writerow([name, format_value(value)])


def read_truth(path) -> dict:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["parameter", "value"]:
            raise CsvFormatError(f"{path}:1: header must be 'parameter,value'")
        out = {}
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise CsvFormatError(f"{path}:{reader.line_num}: expected 2 fields")
            try:
                out[row[0]] = float(row[1])
            except ValueError:
                raise CsvFormatError(f"{path}:{reader.line_num}: cannot parse {row[1]!r}") from None
    return out


def write_draws(path, names, draws):
    """One chain: ``draws`` has shape ``(n_draws, len(names))``."""
    write_table(path, names, draws)


def read_draws(path):
    return read_table(path)
