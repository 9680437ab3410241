"""Append-only event trace with a replay hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterator

CODES = (
    "SIM_START",
    "N2N_TX",
    "N2N_ACCEPT",
    "N2N_FLAG",
    "MAC_VIOLATION",
    "JOIN_REQ",
    "JOIN_OK",
    "JOIN_REJ",
    "SPLIT",
    "RENUM",
    "DISSEM",
    "LINK_FAIL",
    "TPD_VIOLATION",
    "TPD_AUDIT",
    "STOP",
    "HALT",
    "EXCL_REPORT",
    "V2X_TX",
    "V2X_BLOCKED",
    "COMPARTMENT_BLOCKED",
    "ATTACK",
    "COLLISION",
    "SIM_END",
)


def _quantize(value):
    if isinstance(value, float):
        return round(value, 6)
    if isinstance(value, dict):
        return {k: _quantize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_quantize(v) for v in value]
    return value


@dataclass(frozen=True)
class TraceEvent:
    t_ns: int
    code: str
    subject: int | None
    data: dict

    def to_record(self) -> dict:
        return {"t_ns": self.t_ns, "code": self.code, "subject": self.subject, "data": _quantize(self.data)}

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=False, separators=(",", ":"))


@dataclass
class Trace:
    events: list[TraceEvent] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def emit(self, t_ns: int, code: str, subject: int | None = None, **data) -> TraceEvent:
        if code not in CODES:
            raise ValueError(f"unknown trace code {code!r}")
        ev = TraceEvent(t_ns, code, subject, data)
        self.events.append(ev)
        return ev

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of(self, *codes: str) -> list[TraceEvent]:
        return [e for e in self.events if e.code in codes]

    def count(self, code: str) -> int:
        return sum(1 for e in self.events if e.code == code)

    @property
    def hash(self) -> str:
        h = hashlib.sha256()
        for ev in self.events:
            payload = json.dumps(_quantize(ev.data), sort_keys=True, separators=(",", ":"))
            h.update(f"{ev.t_ns}|{ev.code}|{ev.subject}|".encode())
            h.update(hashlib.sha256(payload.encode()).digest())
        return h.hexdigest()

    def write_jsonl(self, fh) -> None:
        for ev in self.events:
            fh.write(ev.to_json())
            fh.write("\n")

    def metrics_lines(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in self.metrics.items())


def read_jsonl(fh) -> list[dict]:
    return [json.loads(line) for line in fh if line.strip()]
