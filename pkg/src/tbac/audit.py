"""Tamper-evident audit log: a SHA-256 hash chain over canonical JSON entries.

Each entry hashes the previous entry's hash concatenated with the canonical
encoding of (seq, timestamp, kind, body); the genesis entry chains from 32
zero bytes. Persistence is an append-only file of newline-delimited JSON so
a crashed or tampered log can be inspected and replayed with nothing but a
text editor and this module.

Audit is mandatory: a failed append must fail the enclosing authorization
operation (the service treats an unauditable approval as no approval).
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable

import json

from .encoding import canonical_json
from .errors import PersistenceFailure

KIND_PROPOSAL = "proposal"
KIND_DECISION = "decision"
KIND_ESCALATION_RESOLVED = "escalation_resolved"
KIND_TOKEN_ISSUED = "token_issued"
KIND_REVOKED = "revoked"

KINDS = frozenset(
    {KIND_PROPOSAL, KIND_DECISION, KIND_ESCALATION_RESOLVED, KIND_TOKEN_ISSUED, KIND_REVOKED}
)

GENESIS_PREV_HASH = "00" * 32


def _entry_hash(prev_hash_hex: str, seq: int, timestamp: str, kind: str, body: Any) -> str:
    material = bytes.fromhex(prev_hash_hex) + canonical_json(
        {"seq": seq, "timestamp": timestamp, "kind": kind, "body": body}
    )
    return hashlib.sha256(material).hexdigest()


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    timestamp: str  # ISO 8601 UTC
    kind: str
    body: dict[str, Any]
    prev_hash: str  # hex, 32 bytes
    entry_hash: str  # hex, 32 bytes

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "kind": self.kind,
            "body": self.body,
            "prev_hash": self.prev_hash,
            "entry_hash": self.entry_hash,
        }


@dataclass(frozen=True)
class ChainStatus:
    ok: bool
    first_bad_index: int | None
    length: int

    def to_dict(self) -> dict[str, Any]:
        return {"ok": self.ok, "first_bad_index": self.first_bad_index, "length": self.length}


def verify_entries(entries: Iterable[dict[str, Any]]) -> ChainStatus:
    """Recompute every hash and linkage; report the lowest failing index."""
    prev_hash = GENESIS_PREV_HASH
    count = 0
    for index, raw in enumerate(entries):
        count += 1
        try:
            seq = raw["seq"]
            timestamp = raw["timestamp"]
            kind = raw["kind"]
            body = raw["body"]
            recorded_prev = raw["prev_hash"]
            recorded_hash = raw["entry_hash"]
            if seq != index:
                return ChainStatus(False, index, count)
            if recorded_prev != prev_hash:
                return ChainStatus(False, index, count)
            if _entry_hash(prev_hash, seq, timestamp, kind, body) != recorded_hash:
                return ChainStatus(False, index, count)
        except (KeyError, TypeError, ValueError):
            return ChainStatus(False, index, count)
        prev_hash = recorded_hash
    return ChainStatus(True, None, count)


def verify_file(path: str | Path) -> ChainStatus:
    """Verify a persisted log; a line that fails to parse is a bad index."""
    lines = Path(path).read_bytes().splitlines()
    entries: list[dict[str, Any]] = []
    for index, line in enumerate(lines):
        try:
            entries.append(json.loads(line.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError):
            partial = verify_entries(entries)
            if not partial.ok:
                return ChainStatus(False, partial.first_bad_index, len(lines))
            return ChainStatus(False, index, len(lines))
    status = verify_entries(entries)
    return ChainStatus(status.ok, status.first_bad_index, len(lines))


class AuditLog:
    """Single-writer, hash-chained log with optional file persistence.

    An existing file is replayed on open so the chain continues across
    restarts. Appends are serialized and flushed before returning; reads
    see immutable history.
    """

    def __init__(self, path: str | Path | None = None, clock: Callable[[], float] = time.time):
        self._lock = threading.Lock()
        self._clock = clock
        self._entries: list[AuditEntry] = []
        self._path = Path(path) if path is not None else None
        self._handle = None
        if self._path is not None:
            if self._path.exists():
                self._replay()
            else:
                self._path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = open(self._path, "a", encoding="utf-8")

    def _replay(self) -> None:
        for line in self._path.read_text("utf-8").splitlines():
            raw = json.loads(line)
            self._entries.append(
                AuditEntry(
                    seq=raw["seq"],
                    timestamp=raw["timestamp"],
                    kind=raw["kind"],
                    body=raw["body"],
                    prev_hash=raw["prev_hash"],
                    entry_hash=raw["entry_hash"],
                )
            )

    def append(self, kind: str, body: dict[str, Any]) -> AuditEntry:
        """Append one entry; durable before return or PersistenceFailure."""
        if kind not in KINDS:
            raise ValueError(f"unknown audit kind: {kind}")
        with self._lock:
            seq = len(self._entries)
            prev_hash = self._entries[-1].entry_hash if self._entries else GENESIS_PREV_HASH
            timestamp = datetime.fromtimestamp(self._clock(), tz=timezone.utc).isoformat()
            try:
                entry_hash = _entry_hash(prev_hash, seq, timestamp, kind, body)
            except (TypeError, ValueError) as exc:
                raise PersistenceFailure(f"body not serializable: {exc}") from exc
            entry = AuditEntry(
                seq=seq,
                timestamp=timestamp,
                kind=kind,
                body=body,
                prev_hash=prev_hash,
                entry_hash=entry_hash,
            )
            if self._handle is not None:
                try:
                    self._handle.write(
                        canonical_json(entry.to_dict()).decode("utf-8") + "\n"
                    )
                    self._handle.flush()
                except OSError as exc:
                    raise PersistenceFailure(f"audit write failed: {exc}") from exc
            self._entries.append(entry)
            return entry

    def entries(self, from_seq: int = 0, limit: int | None = None) -> list[AuditEntry]:
        with self._lock:
            window = self._entries[from_seq:]
        if limit is not None:
            window = window[:limit]
        return list(window)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def chain_status(self) -> ChainStatus:
        with self._lock:
            snapshot = [e.to_dict() for e in self._entries]
        return verify_entries(snapshot)

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None
