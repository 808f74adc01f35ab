"""Append-only scenario trace and its NDJSON form.

Every line is one record with the fields ``seq, sim_time, actor, action,
tx_hash, event_kind, outcome`` plus a free-form ``detail`` object. Mined
blocks appear as ``actor="ledger", action="block"`` records that embed the
full receipts and events, so the ledger can be audited from the file alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from .ledger import Block
from .symcrypto import digest

REQUIRED_FIELDS = ("seq", "sim_time", "actor", "action", "tx_hash", "event_kind", "outcome")


class MalformedTrace(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class TraceRecord:
    seq: int
    sim_time: float
    actor: str
    action: str
    tx_hash: str | None = None
    event_kind: str | None = None
    outcome: str = "ok"
    detail: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "seq": self.seq,
            "sim_time": self.sim_time,
            "actor": self.actor,
            "action": self.action,
            "tx_hash": self.tx_hash,
            "event_kind": self.event_kind,
            "outcome": self.outcome,
            "detail": self.detail,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _hex(b: bytes | None) -> str | None:
    return None if b is None else b.hex()


def block_detail(block: Block) -> dict[str, Any]:
    receipts = []
    for r in block.receipts:
        tx = r.tx
        target = tx.target
        to = getattr(target, "to", None) or getattr(target, "contract", None)
        receipts.append({
            "tx_hash": r.tx_hash.hex(),
            "sender": tx.sender.hex(),
            "nonce": tx.nonce,
            "kind": tx.kind,
            "to": _hex(to),
            "function": tx.function,
            "args": _hex(getattr(target, "args", None)),
            "value": str(tx.value),
            "gas_price": str(tx.gas_price),
            "gas_used": r.gas_used,
            "fee": str(r.fee),
            "status": r.status,
            "error": r.error,
            "contract": _hex(r.contract),
            "events": [
                {"index": e.index, "kind": e.kind.name,
                 "attrs": {k: v.hex() for k, v in sorted(e.attrs.items())}}
                for e in r.events
            ],
        })
    return {
        "number": block.number,
        "timestamp": block.timestamp,
        "parent": block.parent.hex(),
        "hash": block.hash.hex(),
        "receipts": receipts,
    }


class Trace:
    def __init__(self, records: list[TraceRecord] | None = None):
        self.records: list[TraceRecord] = list(records or [])

    def record(self, sim_time: float, actor: str, action: str, *, tx_hash: bytes | str | None = None,
               event_kind: str | None = None, outcome: str = "ok", **detail: Any) -> TraceRecord:
        if self.records and sim_time < self.records[-1].sim_time:
            raise ValueError("trace records must be appended in time order")
        if isinstance(tx_hash, bytes):
            tx_hash = tx_hash.hex()
        rec = TraceRecord(len(self.records), float(sim_time), actor, action, tx_hash,
                          event_kind, outcome, detail)
        self.records.append(rec)
        return rec

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def blocks(self) -> list[dict[str, Any]]:
        return [r.detail for r in self.records if r.actor == "ledger" and r.action == "block"]

    def to_ndjson(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def digest(self) -> bytes:
        return digest(self.to_ndjson().encode())

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ndjson(), encoding="utf-8")

    @classmethod
    def from_ndjson(cls, text: str) -> "Trace":
        records = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                raise MalformedTrace("blank line", lineno)
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedTrace(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(doc, dict):
                raise MalformedTrace("record is not an object", lineno)
            missing = [f for f in REQUIRED_FIELDS if f not in doc]
            if missing:
                raise MalformedTrace(f"missing fields {missing}", lineno)
            if doc["seq"] != len(records):
                raise MalformedTrace(f"sequence gap (expected {len(records)}, got {doc['seq']})",
                                     lineno)
            if records and doc["sim_time"] < records[-1].sim_time:
                raise MalformedTrace("sim_time decreases", lineno)
            records.append(TraceRecord(doc["seq"], float(doc["sim_time"]), doc["actor"],
                                       doc["action"], doc["tx_hash"], doc["event_kind"],
                                       doc["outcome"], doc.get("detail") or {}))
        if text and not text.endswith("\n"):
            raise MalformedTrace("file does not end with a newline (truncated?)", len(records))
        return cls(records)

    @classmethod
    def read(cls, path: str | Path) -> "Trace":
        return cls.from_ndjson(Path(path).read_text(encoding="utf-8"))
