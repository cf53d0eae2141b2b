"""File persistence: JSON snapshot + append-only JSON-lines change log.

State is rebuilt at startup by loading the snapshot and replaying the log.
A torn final line (crash mid-write) is ignored on load and trimmed on the next
append.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path
from typing import Any, Optional

log = logging.getLogger(__name__)


def write_json_atomic(path: Path, obj: Any) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_jsonl(path: Path) -> tuple[list[Any], int]:
    """Parse a JSON-lines file, stopping at the first undecodable line.

    Returns the records and the byte offset just past the last good line.
    """
    if not path.exists():
        return [], 0
    records: list[Any] = []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            stripped = raw.strip()
            if stripped:
                if not raw.endswith(b"\n"):
                    break
                try:
                    records.append(json.loads(stripped))
                except ValueError:
                    break
            offset += len(raw)
    return records, offset


class Journal:
    def __init__(self, directory: os.PathLike | str, name: str, fsync: bool = False):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.snapshot_path = self.directory / f"{name}.json"
        self.log_path = self.directory / f"{name}.log.jsonl"
        self.fsync = fsync
        self._lock = threading.Lock()
        self._checked_tail = False

    def load(self) -> tuple[Optional[Any], list[Any]]:
        snapshot = None
        if self.snapshot_path.exists():
            snapshot = json.loads(self.snapshot_path.read_text(encoding="utf-8"))
        records, _ = read_jsonl(self.log_path)
        return snapshot, records

    def _trim_torn_tail(self) -> None:
        records, good = read_jsonl(self.log_path)
        if self.log_path.exists() and self.log_path.stat().st_size > good:
            log.warning("discarding torn tail of %s", self.log_path.name)
            with open(self.log_path, "rb+") as fh:
                fh.truncate(good)

    def append(self, record: Any) -> None:
        line = json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"
        with self._lock:
            if not self._checked_tail:
                self._trim_torn_tail()
                self._checked_tail = True
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                if self.fsync:
                    os.fsync(fh.fileno())

    def compact(self, snapshot: Any) -> None:
        """Write ``snapshot`` and truncate the log it supersedes."""
        with self._lock:
            write_json_atomic(self.snapshot_path, snapshot)
            with open(self.log_path, "w", encoding="utf-8"):
                pass
            self._checked_tail = True


class EventLog:
    """Append-only JSON-lines log rotated by size (``name``, ``name.1``, ...)."""

    def __init__(self, path: os.PathLike | str, max_bytes: int = 10 * 1024 * 1024, backups: int = 5):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.max_bytes = max_bytes
        self.backups = backups
        self._lock = threading.Lock()

    def _rotate(self) -> None:
        for i in range(self.backups - 1, 0, -1):
            src = self.path.with_name(f"{self.path.name}.{i}")
            if src.exists():
                os.replace(src, self.path.with_name(f"{self.path.name}.{i + 1}"))
        os.replace(self.path, self.path.with_name(f"{self.path.name}.1"))

    def append(self, record: Any) -> None:
        line = json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"
        with self._lock:
            if self.path.exists() and self.path.stat().st_size + len(line) > self.max_bytes:
                self._rotate()
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()

    def files(self) -> list[Path]:
        """Existing log files, oldest first."""
        rotated = [self.path.with_name(f"{self.path.name}.{i}") for i in range(self.backups, 0, -1)]
        return [p for p in rotated + [self.path] if p.exists()]

    def read_all(self) -> list[Any]:
        out: list[Any] = []
        for p in self.files():
            out.extend(read_jsonl(p)[0])
        return out
