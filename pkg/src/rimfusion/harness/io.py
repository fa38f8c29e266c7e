"""CSV readers and writers for every file the harness produces.

Numbers are written with 9 significant digits, '.' as decimal separator and
no locale.  Readers validate the header and report the 1-based line number
of the first malformed row.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import NonMonotonicTimestamps, ParseError
from ..localization import RangeSet
from ..scenario import RangeEpoch, Track
from ..strapdown import ImuStream

__all__ = [
    "fmt",
    "IMU_HEADER",
    "TRACK_HEADER",
    "METRICS_HEADER",
    "CDF_HEADER",
    "SWEEP_HEADER",
    "range_header",
    "write_imu_csv",
    "read_imu_csv",
    "write_ranges_csv",
    "read_ranges_csv",
    "write_track_csv",
    "read_track_csv",
    "write_rows",
    "read_table",
]

IMU_HEADER = ["t", "ax", "ay", "az", "wx", "wy", "wz", "free_flag"]
TRACK_HEADER = ["t", "px", "py", "pz", "vx", "vy", "vz"] + [f"c{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)]
METRICS_HEADER = [
    "algorithm", "seed", "rmse_v1", "rmse_v2", "rmse_v3", "rmse_avg", "yaw_rmse", "pitch_rmse", "roll_rmse",
]
CDF_HEADER = ["algorithm", "error_m", "fraction"]
SWEEP_HEADER = ["axis", "value", "algorithm", "seed", "rmse_avg"]


def fmt(x) -> str:
    """Format a number with 9 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".9g")


def range_header(m: int = 4) -> list[str]:
    return ["t"] + [f"r{i}{j}" for i in (1, 2, 3) for j in range(1, m + 1)] + [f"los{j}" for j in range(1, m + 1)]


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_table(path, header=None):
    """Read a CSV into ``(header, rows)``; rows are lists of strings.

    Raises
    ------
    ParseError
        If the file is empty, the header differs from ``header``, or a row
        has the wrong number of fields.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="ascii")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise ParseError(str(exc), line=1) from exc
        head = [h.strip() for h in head]
        if header is not None and head != list(header):
            raise ParseError(f"expected header {','.join(header)}, got {','.join(head)}", line=1)
        rows = []
        try:
            for row in reader:
                if not row:
                    continue
                if len(row) != len(head):
                    raise ParseError(f"expected {len(head)} fields, got {len(row)}", line=reader.line_num)
                rows.append((reader.line_num, row))
        except (csv.Error, UnicodeDecodeError) as exc:
            raise ParseError(str(exc), line=reader.line_num) from exc
    return head, rows


def _floats(row, line, cols=None):
    vals = row if cols is None else [row[c] for c in cols]
    try:
        out = [float(v) for v in vals]
    except ValueError as exc:
        raise ParseError(str(exc), line=line) from exc
    if not all(np.isfinite(out)):
        raise ParseError("non-finite value", line=line)
    return out


def _flag(v, line):
    v = v.strip().lower()
    if v in ("1", "true"):
        return True
    if v in ("0", "false"):
        return False
    raise ParseError(f"bad flag {v!r}", line=line)


def _check_increasing(t, lines):
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        k = int(bad[0]) + 1
        exc = NonMonotonicTimestamps(f"line {lines[k]}: timestamp {t[k]!r} does not increase", index=k)
        exc.line = lines[k]
        raise exc


# ---------------------------------------------------------------- IMU


def write_imu_csv(path, stream: ImuStream) -> None:
    rows = (
        [stream.t[k], *stream.accel[k], *stream.gyro[k], bool(stream.free[k])] for k in range(len(stream))
    )
    write_rows(path, IMU_HEADER, rows)


def read_imu_csv(path) -> ImuStream:
    """Read an IMU CSV (s, m/s^2, rad/s).

    Raises
    ------
    ParseError
        Malformed header or row (with line number).
    NonMonotonicTimestamps
        Timestamps not strictly increasing; ``line`` names the offending row.
    """
    _, rows = read_table(path, IMU_HEADER)
    lines = [ln for ln, _ in rows]
    data = np.array([_floats(r, ln, range(7)) for ln, r in rows]).reshape(-1, 7)
    free = np.array([_flag(r[7], ln) for ln, r in rows], dtype=bool)
    _check_increasing(data[:, 0], lines)
    return ImuStream(data[:, 0], data[:, 1:4], data[:, 4:7], free)


# ---------------------------------------------------------------- ranges


def write_ranges_csv(path, epochs) -> None:
    m = epochs[0].ranges.r.shape[1] if epochs else 4
    rows = ([ep.t, *ep.ranges.r.reshape(-1), *ep.ranges.los] for ep in epochs)
    write_rows(path, range_header(m), rows)


def read_ranges_csv(path, imu_rate: float | None = None) -> list[RangeEpoch]:
    """Read a range CSV; epoch indices come from ``imu_rate`` when given."""
    head, rows = read_table(path)
    m = (len(head) - 1) // 4
    if m < 1 or head != range_header(m):
        raise ParseError(f"expected header {','.join(range_header(m if m >= 1 else 4))}", line=1)
    lines = [ln for ln, _ in rows]
    out = []
    for e, (ln, r) in enumerate(rows):
        vals = _floats(r, ln, range(1 + 3 * m))
        los = [_flag(v, ln) for v in r[1 + 3 * m :]]
        k = int(round(vals[0] * imu_rate)) if imu_rate else e
        out.append(RangeEpoch(k, vals[0], RangeSet(np.array(vals[1:]).reshape(3, m), los)))
    _check_increasing(np.array([ep.t for ep in out]), lines)
    return out


# ---------------------------------------------------------------- tracks


def write_track_csv(path, t, p, v, C) -> None:
    C = np.asarray(C).reshape(-1, 9)
    rows = ([t[k], *p[k], *v[k], *C[k]] for k in range(len(t)))
    write_rows(path, TRACK_HEADER, rows)


def write_state_track(path, track: Track) -> None:
    write_track_csv(path, track.t, track.p, track.v, track.C)


def read_track_csv(path) -> Track:
    _, rows = read_table(path, TRACK_HEADER)
    lines = [ln for ln, _ in rows]
    data = np.array([_floats(r, ln) for ln, r in rows]).reshape(-1, 16)
    _check_increasing(data[:, 0], lines)
    C = data[:, 7:16].reshape(-1, 3, 3)
    x = np.column_stack([data[:, 1:7], C.transpose(0, 2, 1).reshape(-1, 9)])
    return Track(data[:, 0], x)
