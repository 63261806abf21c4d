"""Policy enforcement: token checks at the resource boundary.

Enforcement is fail-closed and local: a PEP verifies tokens with the
published public key and a polled revocation snapshot instead of calling the
authorization service per request. The snapshot's staleness is bounded by
the poll interval, which is the documented revocation-propagation window.

The reference gateway wraps in-process stub resources and never invokes a
stub unless the outcome is an explicit Allow.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable

import httpx
from fastapi import FastAPI, Header, Request
from fastapi.responses import JSONResponse

from .errors import TokenVerificationError, UnknownStub
from .tokens import RevocationChecker, verify

logger = logging.getLogger(__name__)

PERMISSION_MISSING = "permission_missing"

AUDIT_STANDARD = "standard"
AUDIT_ELEVATED = "elevated"

DEFAULT_HIGH_RISK_MARK = 8.0


@dataclass(frozen=True)
class EnforcementOutcome:
    allowed: bool
    tool_id: str
    transaction: str
    reason: str | None = None  # malformed|bad_signature|expired|revoked|permission_missing
    audit_hint: str = AUDIT_STANDARD
    claims: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "allowed": self.allowed,
            "tool_id": self.tool_id,
            "transaction": self.transaction,
            "reason": self.reason,
            "audit_hint": self.audit_hint,
        }


def enforce(
    token_string: str,
    tool_id: str,
    transaction: str,
    public_key: str | bytes,
    now: float,
    revocations: RevocationChecker | None,
    high_risk_mark: float = DEFAULT_HIGH_RISK_MARK,
) -> EnforcementOutcome:
    """Verify the token, then allow iff (tool_id, transaction) is in its policy.

    Every failure is a Deny outcome, never an exception. The audit hint is
    elevated for tokens whose embedded composite risk reaches the high-risk
    mark, so high-risk activity gets heavy local logging without a callback
    to the authorization service.
    """
    try:
        claims = verify(token_string, public_key, now, revocations)
    except TokenVerificationError as exc:
        return EnforcementOutcome(
            allowed=False, tool_id=tool_id, transaction=transaction, reason=exc.code
        )
    hint = AUDIT_ELEVATED if claims["r_comp"] >= high_risk_mark else AUDIT_STANDARD
    granted = {(t, tx) for t, tx in claims["permissions"]}
    if (tool_id, transaction) not in granted:
        return EnforcementOutcome(
            allowed=False,
            tool_id=tool_id,
            transaction=transaction,
            reason=PERMISSION_MISSING,
            audit_hint=hint,
            claims=claims,
        )
    return EnforcementOutcome(
        allowed=True,
        tool_id=tool_id,
        transaction=transaction,
        audit_hint=hint,
        claims=claims,
    )


class PolledRevocations:
    """Revocation snapshot refreshed from a poll source.

    The source is called with the last seen sequence number and returns
    (new entries, last_seq). The snapshot swap is atomic; readers never
    block on a poll.
    """

    def __init__(self, source: Callable[[int], tuple[list[dict[str, Any]], int]]):
        self._source = source
        self._lock = threading.Lock()
        self._snapshot: frozenset[str] = frozenset()
        self._last_seq = 0

    def poll(self) -> int:
        """Fetch entries newer than the last poll; returns how many arrived."""
        with self._lock:
            last_seq = self._last_seq
        entries, new_seq = self._source(last_seq)
        task_ids = {e["task_id"] for e in entries}
        with self._lock:
            self._snapshot = self._snapshot | frozenset(task_ids)
            self._last_seq = max(self._last_seq, new_seq)
        return len(task_ids)

    def is_revoked(self, task_id: str) -> bool:
        return task_id in self._snapshot

    @property
    def last_seq(self) -> int:
        with self._lock:
            return self._last_seq


def http_revocation_source(
    base_url: str, client: httpx.Client | None = None
) -> Callable[[int], tuple[list[dict[str, Any]], int]]:
    """Poll source backed by the service's GET /v1/revocations endpoint."""
    http = client or httpx.Client(timeout=10.0)

    def fetch(since: int) -> tuple[list[dict[str, Any]], int]:
        response = http.get(f"{base_url}/v1/revocations", params={"since": since})
        response.raise_for_status()
        data = response.json()
        return data["revocations"], data["last_seq"]

    return fetch


# A stub resource takes (transaction, payload) and returns a JSON-able result.
StubHandler = Callable[[str, dict[str, Any]], Any]


@dataclass(frozen=True)
class GatewayResponse:
    outcome: EnforcementOutcome
    result: Any = None

    def to_dict(self) -> dict[str, Any]:
        return {"outcome": self.outcome.to_dict(), "result": self.result}


class ResourceGateway:
    """Reference PEP wrapping in-process stub resources."""

    def __init__(
        self,
        public_key: str | bytes,
        stubs: dict[str, StubHandler],
        revocations: RevocationChecker | None = None,
        high_risk_mark: float = DEFAULT_HIGH_RISK_MARK,
        clock: Callable[[], float] = time.time,
    ):
        self.public_key = public_key
        self.stubs = dict(stubs)
        self.revocations = revocations
        self.high_risk_mark = high_risk_mark
        self.clock = clock

    def dispatch(
        self,
        token_string: str,
        tool_id: str,
        transaction: str,
        payload: dict[str, Any] | None = None,
    ) -> GatewayResponse:
        """Enforce, then invoke the stub only on an explicit Allow."""
        payload = payload or {}
        outcome = enforce(
            token_string,
            tool_id,
            transaction,
            self.public_key,
            self.clock(),
            self.revocations,
            self.high_risk_mark,
        )
        if not outcome.allowed:
            logger.info(
                "deny %s %s: %s", tool_id, transaction, outcome.reason
            )
            return GatewayResponse(outcome=outcome)
        if outcome.audit_hint == AUDIT_ELEVATED:
            # High-risk tokens get full payload capture, not just the verdict.
            logger.warning(
                "allow %s %s task=%s r_comp=%s payload=%r",
                tool_id,
                transaction,
                outcome.claims["task_id"],
                outcome.claims["r_comp"],
                payload,
            )
        else:
            logger.info("allow %s %s task=%s", tool_id, transaction, outcome.claims["task_id"])
        handler = self.stubs.get(tool_id)
        if handler is None:
            raise UnknownStub(tool_id)
        return GatewayResponse(outcome=outcome, result=handler(transaction, payload))


def create_gateway_app(gateway: ResourceGateway) -> FastAPI:
    """FastAPI wrapper: POST /resource/{tool_id}/{transaction}.

    Expects ``Authorization: Capability <token>``; responds 200 with the stub
    result on Allow and 403 with the deny reason otherwise.
    """
    app = FastAPI(title="tbac resource gateway")

    @app.post("/resource/{tool_id}/{transaction}")
    async def dispatch(
        tool_id: str,
        transaction: str,
        request: Request,
        authorization: str | None = Header(default=None),
    ):
        if not authorization or not authorization.startswith("Capability "):
            return JSONResponse(
                status_code=403, content={"reason": "missing_capability_header"}
            )
        token = authorization.removeprefix("Capability ").strip()
        try:
            body = await request.json()
        except Exception:
            body = {}
        try:
            response = gateway.dispatch(token, tool_id, transaction, body)
        except UnknownStub as exc:
            return JSONResponse(status_code=502, content=exc.to_dict())
        if not response.outcome.allowed:
            return JSONResponse(
                status_code=403, content={"reason": response.outcome.reason}
            )
        return response.to_dict()

    return app
