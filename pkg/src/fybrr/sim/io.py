"""CSV output for traces, metric series and topology snapshots.

Every file is written to a temporary name in the target directory and then
renamed, so a reader never sees a half-written file.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

from ..metrics import SERIES_HEADER, TRACE_HEADER, PacketTraceEntry

SUMMARY_HEADER = ("seed", "scheme", "mean_latency_ms", "mean_jitter_ms", "mean_pdr", "height", "utilization")
ADJ_HEADER = ("parent", "child")


def write_atomic(path: str | os.PathLike, text: str) -> Path:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def write_trace(path, trace: Iterable[PacketTraceEntry]) -> Path:
    return write_atomic(path, csv_text(TRACE_HEADER, (e.row() for e in trace)))


def read_trace(path) -> list[PacketTraceEntry]:
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        if header != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {header}")
        return [
            PacketTraceEntry(node, int(seq), int(emit), int(arr) if arr else None, delivered == "1")
            for node, seq, emit, arr, delivered in r
        ]


def write_series(path, series: Iterable[tuple[str, str, int, float]]) -> Path:
    return write_atomic(path, csv_text(SERIES_HEADER, ((m, n, t, _fmt(v)) for m, n, t, v in series)))


def write_snapshots(directory, snapshots: Sequence[tuple[int, dict[str, Optional[str]]]]) -> list[Path]:
    """One adjacency list per snapshot: ``snapshot_<index>_<time_us>.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for i, (t_us, parents) in enumerate(snapshots):
        rows = sorted((p, c) for c, p in parents.items() if p is not None)
        out.append(write_atomic(directory / f"snapshot_{i:05d}_{t_us}.csv", csv_text(ADJ_HEADER, rows)))
    return out


def write_summary(path, rows: Iterable[Sequence]) -> Path:
    return write_atomic(path, csv_text(SUMMARY_HEADER, ([_fmt(v) for v in row] for row in rows)))
