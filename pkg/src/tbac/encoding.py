"""Canonical JSON and base64url helpers shared by tokens and the audit chain."""

from __future__ import annotations

import base64
import json
from typing import Any


def canonical_json(obj: Any) -> bytes:
    """Deterministic UTF-8 JSON: sorted keys, no insignificant whitespace.

    Floats render in Python's shortest round-trip form; NaN/Inf are rejected
    so equal values always produce identical bytes.
    """
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def b64url_encode(data: bytes) -> str:
    """Base64url without padding."""
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    """Strict inverse of b64url_encode; raises ValueError on bad input."""
    pad = -len(text) % 4
    try:
        return base64.b64decode(
            text.replace("-", "+").replace("_", "/") + "=" * pad, validate=True
        )
    except Exception as exc:
        raise ValueError(f"invalid base64url segment: {exc}") from exc
