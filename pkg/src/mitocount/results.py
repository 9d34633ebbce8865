"""Append-only result record store.

One line-delimited JSON record per slide outcome, guarded by an advisory
file lock so concurrent pipeline workers can append without interleaving.
Scans return records in insertion order.
"""

from __future__ import annotations

import fcntl
import json
from dataclasses import dataclass, field
from pathlib import Path

VALID_STATUSES = ("counted", "no-count", "failed")


@dataclass
class ResultRecord:
    slide_id: str
    status: str
    mf_total: int | None = None
    hpf_count: int | None = None
    timings: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.status not in VALID_STATUSES:
            raise ValueError(f"status must be one of {VALID_STATUSES}, got {self.status!r}")
        if self.status == "no-count" and self.mf_total is not None:
            raise ValueError("no-count records must not carry an mf_total")

    def to_line(self) -> str:
        payload: dict = {"slide_id": self.slide_id, "status": self.status}
        if self.mf_total is not None:
            payload["mf_total"] = self.mf_total
        if self.hpf_count is not None:
            payload["hpf_count"] = self.hpf_count
        if self.timings:
            payload["timings"] = self.timings
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_line(cls, line: str) -> "ResultRecord":
        data = json.loads(line)
        return cls(
            slide_id=data["slide_id"],
            status=data["status"],
            mf_total=data.get("mf_total"),
            hpf_count=data.get("hpf_count"),
            timings=data.get("timings", {}),
        )


class ResultStore:
    """Durable append-only store backed by a JSONL file.

    Appends take an exclusive advisory lock (blocking, so contending writers
    simply wait their turn) and flush before releasing, which keeps records
    whole under concurrent writers.
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: ResultRecord) -> None:
        line = record.to_line() + "\n"
        with open(self.path, "a", encoding="utf-8") as fh:
            fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
            try:
                fh.write(line)
                fh.flush()
            finally:
                fcntl.flock(fh.fileno(), fcntl.LOCK_UN)

    def scan(
        self,
        status: str | None = None,
        slide_id: str | None = None,
    ) -> list[ResultRecord]:
        """Records in insertion order, optionally filtered."""
        if not self.path.exists():
            return []
        records = []
        with open(self.path, encoding="utf-8") as fh:
            fcntl.flock(fh.fileno(), fcntl.LOCK_SH)
            try:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = ResultRecord.from_line(line)
                    if status is not None and rec.status != status:
                        continue
                    if slide_id is not None and rec.slide_id != slide_id:
                        continue
                    records.append(rec)
            finally:
                fcntl.flock(fh.fileno(), fcntl.LOCK_UN)
        return records
