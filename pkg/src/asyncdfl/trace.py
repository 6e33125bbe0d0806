"""Per-iteration trace records, CSV output and the binary delivery dump.

Dump layout (little-endian): the magic ``b"DFLTRACE"``, then ``version``,
``node_count`` and ``dim`` as u32. After the header come frames of
``slot u64, receiver u32, count u32`` followed by ``count`` message
records in the wire format of :class:`~asyncdfl.protocol.StampedParameter`.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import SchemaError
from .protocol import StampedParameter, encode_messages

MAGIC = b"DFLTRACE"
VERSION = 1
_HEADER = struct.Struct("<8sIII")
_FRAME = struct.Struct("<QII")


@dataclass
class TraceRecord:
    slot: int
    iteration: int
    algorithm: str
    global_loss: float
    bound_U: float
    u_eta: float
    grad_norm_sq: float
    consensus_max: float
    accuracy: float
    gamma_realized: int
    bandwidth_min: float
    scheduled_count: int
    consensus_stale: float = 0.0


COLUMNS = [f.name for f in fields(TraceRecord)]
_CASTS = {f.name: f.type for f in fields(TraceRecord)}


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_to_csv(records: Iterable[TraceRecord], path_or_buffer) -> None:
    own = isinstance(path_or_buffer, (str, Path))
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(COLUMNS)
        for rec in records:
            wr.writerow([_fmt(v) for v in astuple(rec)])
    finally:
        if own:
            fh.close()


def records_to_csv_text(records: Iterable[TraceRecord]) -> str:
    buf = io.StringIO()
    records_to_csv(records, buf)
    return buf.getvalue()


def _parse(name: str, text: str):
    kind = _CASTS[name]
    if kind in ("int", int):
        return int(text)
    if kind in ("str", str):
        return text
    return float(text)


def read_trace_csv(path: str | Path) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty trace file")
    header = rows[0]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    idx = {c: header.index(c) for c in COLUMNS}
    return [TraceRecord(**{c: _parse(c, r[idx[c]]) for c in COLUMNS}) for r in rows[1:]]


def same_records(a: Sequence[TraceRecord], b: Sequence[TraceRecord]) -> bool:
    """Equality that treats NaN fields as equal to NaN."""
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        for u, v in zip(astuple(x), astuple(y)):
            if isinstance(u, float) and isinstance(v, float) and math.isnan(u) and math.isnan(v):
                continue
            if u != v:
                return False
    return True


class DumpWriter:
    """Streams delivery frames to a binary dump file."""

    def __init__(self, path: str | Path, node_count: int, dim: int):
        self._fh = open(path, "wb")
        self._fh.write(_HEADER.pack(MAGIC, VERSION, node_count, dim))

    def frame(self, slot: int, receiver: int, messages: Sequence[StampedParameter]) -> None:
        self._fh.write(_FRAME.pack(slot, receiver, len(messages)))
        self._fh.write(encode_messages(messages))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class DumpFrame:
    slot: int
    receiver: int
    messages: list


def read_dump(path: str | Path) -> tuple[int, int, list[DumpFrame]]:
    """Return ``(node_count, dim, frames)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SchemaError(f"{path}: truncated header")
    magic, version, nodes, dim = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise SchemaError(f"{path}: not a trace dump")
    if version != VERSION:
        raise SchemaError(f"{path}: unsupported dump version {version}")
    frames = list(_iter_frames(raw, _HEADER.size))
    return nodes, dim, frames


def _iter_frames(raw: bytes, offset: int) -> Iterator[DumpFrame]:
    while offset < len(raw):
        if offset + _FRAME.size > len(raw):
            raise SchemaError("truncated frame header")
        slot, receiver, count = _FRAME.unpack_from(raw, offset)
        offset += _FRAME.size
        msgs = []
        for _ in range(count):
            msg, offset = StampedParameter.decode_from(raw, offset)
            msgs.append(msg)
        yield DumpFrame(slot, receiver, msgs)
