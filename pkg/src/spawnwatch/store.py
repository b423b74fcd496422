"""Durable persistence: append-only newline-delimited record logs.

One UTF-8 JSON object per line. A record is either fully on disk or
absent: a torn final line (no trailing newline or unparseable tail) is
truncated away when the log is opened for writing. Positions are byte
offsets of the record start and strictly increase.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

RECORD_TYPES = ("truth", "detection", "telemetry", "manual_count", "alert", "calibration")


class StoreError(Exception):
    """Storage failure surfaced explicitly (never silent loss)."""


@dataclass(frozen=True)
class RecordEnvelope:
    """One stored record: type + timestamp + source ids + payload."""

    record_type: str
    timestamp: float
    payload: dict[str, Any]
    source: dict[str, str] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_line(self) -> str:
        # Fixed key order keeps serialization byte-deterministic.
        return json.dumps(
            {
                "v": self.schema_version,
                "type": self.record_type,
                "ts": self.timestamp,
                "src": dict(sorted(self.source.items())),
                "data": self.payload,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_line(cls, line: str) -> "RecordEnvelope":
        obj = json.loads(line)
        if not isinstance(obj, dict):
            raise ValueError("record line is not an object")
        return cls(
            record_type=obj["type"],
            timestamp=float(obj["ts"]),
            payload=obj.get("data", {}),
            source=obj.get("src", {}),
            schema_version=int(obj.get("v", SCHEMA_VERSION)),
        )


class RecordLog:
    """Single-writer append-only log file; many concurrent readers are fine."""

    def __init__(self, path: str | Path, fsync: bool = False):
        self.path = Path(path)
        self.fsync = fsync
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._recover_torn_tail()
        self._fh = open(self.path, "ab")

    def _recover_torn_tail(self) -> None:
        """Drop a final line that was only partially written."""
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        if not data:
            return
        keep = len(data)
        if not data.endswith(b"\n"):
            nl = data.rfind(b"\n")
            keep = nl + 1 if nl >= 0 else 0
        else:
            # Complete final line that still fails to parse is treated as torn
            # (a crash mid-write can leave a newline from a previous buffer).
            tail_start = data.rfind(b"\n", 0, len(data) - 1) + 1
            tail = data[tail_start : len(data) - 1]
            try:
                RecordEnvelope.from_line(tail.decode("utf-8"))
            except (ValueError, KeyError, UnicodeDecodeError):
                keep = tail_start
        if keep != len(data):
            log.warning("truncating torn tail of %s (%d -> %d bytes)", self.path, len(data), keep)
            with open(self.path, "r+b") as fh:
                fh.truncate(keep)

    def append(self, envelope: RecordEnvelope) -> int:
        """Append one record; returns its byte position in the file."""
        line = envelope.to_line() + "\n"
        try:
            pos = self._fh.tell()
            self._fh.write(line.encode("utf-8"))
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
        except OSError as exc:
            raise StoreError(f"append to {self.path} failed: {exc}") from exc
        return pos

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "RecordLog":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def scan(
    path: str | Path,
    record_type: str | None = None,
    t_min: float | None = None,
    t_max: float | None = None,
    source: dict[str, str] | None = None,
    on_error: Callable[[int, str], None] | None = None,
) -> Iterator[tuple[int, RecordEnvelope]]:
    """Yield (position, envelope) pairs matching the filters, in file order.

    Corrupt interior lines are reported via ``on_error`` (default: warning
    log) and skipped; the scan continues.
    """
    path = Path(path)
    report = on_error or (lambda pos, msg: log.warning("%s @%d: %s", path, pos, msg))
    pos = 0
    with open(path, "rb") as fh:
        for raw in fh:
            start = pos
            pos += len(raw)
            if not raw.endswith(b"\n"):
                report(start, "torn final line skipped")
                continue
            try:
                env = RecordEnvelope.from_line(raw.decode("utf-8"))
            except (ValueError, KeyError, UnicodeDecodeError) as exc:
                report(start, f"corrupt record: {exc}")
                continue
            if record_type is not None and env.record_type != record_type:
                continue
            if t_min is not None and env.timestamp < t_min:
                continue
            if t_max is not None and env.timestamp > t_max:
                continue
            if source is not None and any(env.source.get(k) != v for k, v in source.items()):
                continue
            yield start, env


def scan_envelopes(path: str | Path, **kwargs: Any) -> Iterator[RecordEnvelope]:
    """scan() without positions, for callers that only want records."""
    for _, env in scan(path, **kwargs):
        yield env
