"""Dual-threshold decision logic and the human-escalation queue.

A task escalates when its composite risk or its measured uncertainty
strictly exceeds the configured threshold (equality auto-approves; the
comparison is deliberately strict, so operators expecting >= at the boundary
should set thresholds accordingly). Deny is reserved for syntactically
invalid policies and never produced by the threshold rule itself.
"""

from __future__ import annotations

import enum
import itertools
import threading
from dataclasses import dataclass, replace
from typing import Any

from .errors import (
    AlreadyResolved,
    EscalationExpired,
    InputOutOfRange,
    NotAnEscalation,
    UnknownEscalation,
)
from .manifest import Policy

RISK_ABOVE_THRESHOLD = "risk_above_threshold"
UNCERTAINTY_ABOVE_THRESHOLD = "uncertainty_above_threshold"


@dataclass(frozen=True)
class Thresholds:
    theta_risk: float
    theta_uncertainty: float

    def __post_init__(self):
        if not (0.0 <= self.theta_risk <= 10.0):
            raise InputOutOfRange(f"theta_risk must be in [0,10], got {self.theta_risk}")
        if not (0.0 <= self.theta_uncertainty <= 1.0):
            raise InputOutOfRange(
                f"theta_uncertainty must be in [0,1], got {self.theta_uncertainty}"
            )


@dataclass(frozen=True)
class EscalationReason:
    """Why a task was routed to a human, with the numbers that triggered it."""

    reason: str  # RISK_ABOVE_THRESHOLD | UNCERTAINTY_ABOVE_THRESHOLD
    value: float
    threshold: float

    def to_dict(self) -> dict[str, Any]:
        return {"reason": self.reason, "value": self.value, "threshold": self.threshold}


class DecisionKind(enum.Enum):
    AUTO_APPROVE = "auto_approve"
    ESCALATE = "escalate"
    DENY = "deny"


@dataclass(frozen=True)
class Decision:
    kind: DecisionKind
    reasons: tuple[EscalationReason, ...] = ()
    findings: tuple[dict[str, Any], ...] = ()

    def __post_init__(self):
        if self.kind is DecisionKind.ESCALATE and not self.reasons:
            raise InputOutOfRange("an escalation must carry at least one reason")

    @classmethod
    def auto_approve(cls) -> "Decision":
        return cls(DecisionKind.AUTO_APPROVE)

    @classmethod
    def escalate(cls, reasons: tuple[EscalationReason, ...]) -> "Decision":
        return cls(DecisionKind.ESCALATE, reasons=reasons)

    @classmethod
    def deny(cls, findings: tuple[dict[str, Any], ...]) -> "Decision":
        return cls(DecisionKind.DENY, findings=findings)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "reasons": [r.to_dict() for r in self.reasons],
            "findings": [dict(f) for f in self.findings],
        }


def decide(r_comp: float, upsilon: float, thresholds: Thresholds) -> Decision:
    """Escalate iff r_comp > theta_risk OR upsilon > theta_uncertainty.

    Strict inequalities: sitting exactly on a threshold auto-approves. One
    reason is attached per violated threshold.
    """
    if not (0.0 <= r_comp <= 10.0):
        raise InputOutOfRange(f"r_comp must be in [0,10], got {r_comp}")
    if not (0.0 <= upsilon <= 1.0):
        raise InputOutOfRange(f"upsilon must be in [0,1], got {upsilon}")
    reasons = []
    if r_comp > thresholds.theta_risk:
        reasons.append(
            EscalationReason(RISK_ABOVE_THRESHOLD, r_comp, thresholds.theta_risk)
        )
    if upsilon > thresholds.theta_uncertainty:
        reasons.append(
            EscalationReason(
                UNCERTAINTY_ABOVE_THRESHOLD, upsilon, thresholds.theta_uncertainty
            )
        )
    if reasons:
        return Decision.escalate(tuple(reasons))
    return Decision.auto_approve()


class ApprovalPath(enum.Enum):
    AUTO_APPROVED = "auto_approved"
    HUMAN_APPROVED = "human_approved"


def ttl_for(path: ApprovalPath, r_comp: float, config) -> int:
    """Token lifetime in seconds, keyed on how the task was approved.

    Human-approved (escalated) tasks get the short leash; r_comp is accepted
    for future risk-tiered policies but does not change the result today.
    """
    if path is ApprovalPath.HUMAN_APPROVED:
        return config.escalated_ttl
    return config.default_ttl


@dataclass(frozen=True)
class AuthorizationTuple:
    """The full authorization record for one task."""

    task_id: str
    agent_id: str
    goal: str
    policy: Policy
    r_comp: float
    upsilon: float
    decision: Decision
    thresholds: Thresholds
    created_at: float  # unix seconds, UTC
    reasoning: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "agent_id": self.agent_id,
            "goal": self.goal,
            "policy": [list(p) for p in self.policy.sorted_pairs()],
            "r_comp": self.r_comp,
            "upsilon": self.upsilon,
            "decision": self.decision.to_dict(),
            "thresholds": {
                "theta_risk": self.thresholds.theta_risk,
                "theta_uncertainty": self.thresholds.theta_uncertainty,
            },
            "created_at": self.created_at,
            "reasoning": self.reasoning,
        }


class EscalationStatus(enum.Enum):
    PENDING = "pending"
    APPROVED = "approved"
    DENIED = "denied"


@dataclass(frozen=True)
class EscalationItem:
    escalation_id: str
    tuple_: AuthorizationTuple
    expires_at: float
    status: EscalationStatus = EscalationStatus.PENDING
    # (tool, transaction, static risk) rows, resolved at enqueue time so the
    # dashboard never needs the manifest.
    permission_rows: tuple[tuple[str, str, float], ...] = ()
    approver_id: str | None = None
    comment: str | None = None
    resolved_at: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "escalation_id": self.escalation_id,
            "status": self.status.value,
            "expires_at": self.expires_at,
            "permissions": [
                {"tool": t, "transaction": tx, "risk": r}
                for t, tx, r in self.permission_rows
            ],
            "approver_id": self.approver_id,
            "comment": self.comment,
            "resolved_at": self.resolved_at,
            "tuple": self.tuple_.to_dict(),
        }


class EscalationQueue:
    """Linearizable in-memory escalation store.

    resolve() is an atomic check-and-set on status: under concurrent
    resolutions exactly one caller wins and the rest get AlreadyResolved.
    Pending items past their queue TTL resolve to Denied(system, "expired")
    the first time they are touched.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._items: dict[str, EscalationItem] = {}
        self._counter = itertools.count(1)

    def enqueue(
        self,
        tuple_: AuthorizationTuple,
        queue_ttl: float,
        now: float,
        permission_rows: tuple[tuple[str, str, float], ...] = (),
    ) -> EscalationItem:
        if tuple_.decision.kind is not DecisionKind.ESCALATE:
            raise NotAnEscalation(
                f"decision is {tuple_.decision.kind.value}, not an escalation"
            )
        with self._lock:
            escalation_id = f"e-{next(self._counter):06d}"
            item = EscalationItem(
                escalation_id=escalation_id,
                tuple_=tuple_,
                expires_at=now + queue_ttl,
                permission_rows=permission_rows,
            )
            self._items[escalation_id] = item
            return item

    def _expire_locked(self, item: EscalationItem, now: float) -> EscalationItem:
        expired = replace(
            item,
            status=EscalationStatus.DENIED,
            approver_id="system",
            comment="expired",
            resolved_at=now,
        )
        self._items[item.escalation_id] = expired
        return expired

    def resolve(
        self,
        escalation_id: str,
        approve: bool,
        approver_id: str,
        comment: str | None,
        now: float,
    ) -> EscalationItem:
        with self._lock:
            item = self._items.get(escalation_id)
            if item is None:
                raise UnknownEscalation(escalation_id)
            if item.status is not EscalationStatus.PENDING:
                # An expiry transition stays reported as Expired, not as a
                # competing resolution.
                if item.approver_id == "system" and item.comment == "expired":
                    raise EscalationExpired(escalation_id)
                raise AlreadyResolved(escalation_id, item.status.value)
            if now >= item.expires_at:
                self._expire_locked(item, now)
                raise EscalationExpired(escalation_id)
            resolved = replace(
                item,
                status=EscalationStatus.APPROVED if approve else EscalationStatus.DENIED,
                approver_id=approver_id,
                comment=comment,
                resolved_at=now,
            )
            self._items[escalation_id] = resolved
            return resolved

    def get(self, escalation_id: str, now: float) -> EscalationItem:
        with self._lock:
            item = self._items.get(escalation_id)
            if item is None:
                raise UnknownEscalation(escalation_id)
            if item.status is EscalationStatus.PENDING and now >= item.expires_at:
                item = self._expire_locked(item, now)
            return item

    def list(
        self, now: float, status: EscalationStatus | None = None
    ) -> list[EscalationItem]:
        with self._lock:
            items = []
            for item in self._items.values():
                if item.status is EscalationStatus.PENDING and now >= item.expires_at:
                    item = self._expire_locked(item, now)
                items.append(item)
        if status is not None:
            items = [i for i in items if i.status is status]
        return items

    def sweep_expired(self, now: float) -> list[EscalationItem]:
        """Expire overdue pending items; returns the newly expired ones."""
        with self._lock:
            expired = []
            for item in list(self._items.values()):
                if item.status is EscalationStatus.PENDING and now >= item.expires_at:
                    expired.append(self._expire_locked(item, now))
            return expired
