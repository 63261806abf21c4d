"""Capability tokens: short-lived Ed25519-signed credentials encoding a policy.

Wire format is two base64url segments joined by ".": the canonical claims
bytes and a detached signature over those exact bytes. There is no separate
header; the signature scheme travels inside the claims as key_id, which
avoids algorithm-confusion pitfalls. Verification order is structure,
signature, expiry (exclusive), revocation, and the signature is checked over
the raw payload bytes before the claims are parsed, so corrupted payloads
always classify as BadSignature.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

import json

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .encoding import b64url_decode, b64url_encode, canonical_json
from .errors import (
    SigningFailure,
    TokenBadSignature,
    TokenExpired,
    TokenMalformed,
    TokenRevoked,
)
from .manifest import Policy

_REQUIRED_CLAIMS = {
    "task_id",
    "agent_id",
    "permissions",
    "r_comp",
    "issued_at",
    "expires_at",
    "key_id",
}


@dataclass(frozen=True)
class SigningKey:
    """Ed25519 keypair wrapper; the private half is a 32-byte seed."""

    seed: bytes

    def __post_init__(self):
        if len(self.seed) != 32:
            raise SigningFailure(f"seed must be 32 bytes, got {len(self.seed)}")

    @classmethod
    def generate(cls) -> "SigningKey":
        return cls(Ed25519PrivateKey.generate().private_bytes_raw())

    @classmethod
    def from_seed_hex(cls, seed_hex: str) -> "SigningKey":
        try:
            return cls(bytes.fromhex(seed_hex.strip()))
        except ValueError as exc:
            raise SigningFailure(f"bad seed hex: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "SigningKey":
        return cls.from_seed_hex(Path(path).read_text("utf-8"))

    def _private(self) -> Ed25519PrivateKey:
        return Ed25519PrivateKey.from_private_bytes(self.seed)

    @property
    def seed_hex(self) -> str:
        return self.seed.hex()

    @property
    def public_key_bytes(self) -> bytes:
        return self._private().public_key().public_bytes_raw()

    @property
    def public_key_hex(self) -> str:
        return self.public_key_bytes.hex()

    @property
    def key_id(self) -> str:
        digest = hashlib.sha256(self.public_key_bytes).hexdigest()
        return f"ed25519:{digest[:16]}"

    def sign(self, data: bytes) -> bytes:
        try:
            return self._private().sign(data)
        except Exception as exc:
            raise SigningFailure(str(exc)) from exc


def _public_key(public_key: str | bytes) -> Ed25519PublicKey:
    raw = bytes.fromhex(public_key) if isinstance(public_key, str) else public_key
    return Ed25519PublicKey.from_public_bytes(raw)


def canonical_encode(claims: dict[str, Any]) -> bytes:
    """Deterministic claims bytes: sorted keys, no whitespace, UTF-8.

    Equal claims always encode to identical bytes regardless of insertion
    order. Timestamps must already be integers; r_comp renders in shortest
    round-trip decimal form.
    """
    missing = _REQUIRED_CLAIMS - set(claims)
    if missing:
        raise SigningFailure(f"claims incomplete, missing {sorted(missing)}")
    return canonical_json(claims)


def issue(
    task_id: str,
    agent_id: str,
    policy: Policy,
    r_comp: float,
    ttl: int,
    signing_key: SigningKey,
    now: float | None = None,
) -> str:
    """Mint a signed token string for an already-validated policy."""
    if ttl <= 0:
        raise ValueError(f"ttl must be positive, got {ttl}")
    issued_at = int(now if now is not None else time.time())
    claims = {
        "task_id": task_id,
        "agent_id": agent_id,
        "permissions": [list(p) for p in policy.sorted_pairs()],
        "r_comp": float(r_comp),
        "issued_at": issued_at,
        "expires_at": issued_at + int(ttl),
        "key_id": signing_key.key_id,
    }
    payload = canonical_encode(claims)
    signature = signing_key.sign(payload)
    return f"{b64url_encode(payload)}.{b64url_encode(signature)}"


class RevocationChecker(Protocol):
    def is_revoked(self, task_id: str) -> bool: ...


def _parse_claims(payload: bytes) -> dict[str, Any]:
    try:
        claims = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TokenMalformed(f"claims are not valid JSON: {exc}") from exc
    if not isinstance(claims, dict) or set(claims) != _REQUIRED_CLAIMS:
        raise TokenMalformed("claims keys do not match the token schema")
    if not isinstance(claims["task_id"], str) or not isinstance(claims["agent_id"], str):
        raise TokenMalformed("task_id and agent_id must be strings")
    perms = claims["permissions"]
    if not isinstance(perms, list) or any(
        not isinstance(p, list) or len(p) != 2 or not all(isinstance(x, str) for x in p)
        for p in perms
    ):
        raise TokenMalformed("permissions must be [tool, transaction] string pairs")
    pairs = [tuple(p) for p in perms]
    if pairs != sorted(set(pairs)):
        raise TokenMalformed("permissions must be sorted and duplicate-free")
    for ts_field in ("issued_at", "expires_at"):
        if not isinstance(claims[ts_field], int) or isinstance(claims[ts_field], bool):
            raise TokenMalformed(f"{ts_field} must be an integer")
    if isinstance(claims["r_comp"], bool) or not isinstance(claims["r_comp"], (int, float)):
        raise TokenMalformed("r_comp must be a number")
    if not isinstance(claims["key_id"], str):
        raise TokenMalformed("key_id must be a string")
    if claims["expires_at"] <= claims["issued_at"]:
        raise TokenMalformed("expires_at must be after issued_at")
    return claims


def verify(
    token_string: str,
    public_key: str | bytes,
    now: float,
    revocations: RevocationChecker | None = None,
) -> dict[str, Any]:
    """Validate a token and return its claims.

    Raises TokenMalformed, TokenBadSignature, TokenExpired, or TokenRevoked;
    each is distinct so enforcement points can report the exact cause. Expiry
    is exclusive: a token dies at the instant now == expires_at.
    """
    parts = token_string.split(".")
    if len(parts) != 2:
        raise TokenMalformed(f"expected 2 segments, got {len(parts)}")
    try:
        payload = b64url_decode(parts[0])
        signature = b64url_decode(parts[1])
    except ValueError as exc:
        raise TokenMalformed(str(exc)) from exc
    try:
        _public_key(public_key).verify(signature, payload)
    except (InvalidSignature, ValueError) as exc:
        raise TokenBadSignature(f"signature check failed: {exc}") from exc
    claims = _parse_claims(payload)
    if now >= claims["expires_at"]:
        raise TokenExpired(
            f"token expired at {claims['expires_at']} (checked at {now})"
        )
    if revocations is not None and revocations.is_revoked(claims["task_id"]):
        raise TokenRevoked(f"task {claims['task_id']} is revoked")
    return claims


@dataclass(frozen=True)
class RevocationEntry:
    seq: int
    task_id: str
    revoked_at: float

    def to_dict(self) -> dict[str, Any]:
        return {"seq": self.seq, "task_id": self.task_id, "revoked_at": self.revoked_at}


class RevocationList:
    """Append-only revoked-task set with sequence numbers for polling."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: list[RevocationEntry] = []
        self._by_task: dict[str, RevocationEntry] = {}

    def revoke(self, task_id: str, now: float | None = None) -> RevocationEntry:
        """Record a revocation; repeat calls return the original entry."""
        with self._lock:
            existing = self._by_task.get(task_id)
            if existing is not None:
                return existing
            entry = RevocationEntry(
                seq=len(self._entries) + 1,
                task_id=task_id,
                revoked_at=now if now is not None else time.time(),
            )
            self._entries.append(entry)
            self._by_task[task_id] = entry
            return entry

    def is_revoked(self, task_id: str) -> bool:
        with self._lock:
            return task_id in self._by_task

    def since(self, seq: int) -> list[RevocationEntry]:
        with self._lock:
            return [e for e in self._entries if e.seq > seq]

    @property
    def last_seq(self) -> int:
        with self._lock:
            return len(self._entries)

    def snapshot(self) -> frozenset[str]:
        with self._lock:
            return frozenset(self._by_task)


def revoke(task_id: str, revocations: RevocationList, now: float | None = None) -> RevocationList:
    """Idempotently add task_id to the revocation list and return it."""
    revocations.revoke(task_id, now)
    return revocations


def generate_keypair() -> tuple[str, str]:
    """New Ed25519 keypair as (seed_hex, public_key_hex)."""
    key = SigningKey.generate()
    return key.seed_hex, key.public_key_hex


def write_keypair(out_dir: str | Path) -> tuple[Path, Path, str]:
    """Write signing.key (seed hex, 0600) and signing.pub (public hex)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    key = SigningKey.generate()
    private_path = out / "signing.key"
    public_path = out / "signing.pub"
    private_path.write_text(key.seed_hex + "\n", "utf-8")
    private_path.chmod(0o600)
    public_path.write_text(key.public_key_hex + "\n", "utf-8")
    return private_path, public_path, key.key_id
