"""Task authorization service: judge, decide, mint, escalate, audit.

One submit_task call runs the full pipeline against an immutable snapshot of
the current manifest: cache lookup, ensemble synthesis, threshold decision,
then token issuance, escalation enqueue, or denial. Every outcome writes
Proposal and Decision entries to the audit chain before any token exists,
and a token whose TokenIssued entry cannot be persisted is revoked and the
request failed (an unauditable approval is no approval).

Auto-approved tuples are cached keyed by normalized goal, agent, manifest
version, and the decision-config fingerprint, so an identical future request
skips the judge; escalated and denied results are never cached.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable

from . import audit as audit_mod
from .audit import AuditLog
from .config import ServiceConfig
from .decision import (
    ApprovalPath,
    AuthorizationTuple,
    Decision,
    DecisionKind,
    EscalationItem,
    EscalationQueue,
    EscalationStatus,
    decide,
    ttl_for,
)
from .errors import (
    InvalidRequest,
    PolicyInvalid,
    SameVersion,
    UnknownTask,
)
from .judge import (
    AuthorizationProposal,
    Judge,
    MockJudge,
    RemoteJudge,
    SampleMeta,
    TaskRequest,
    judge_task,
    normalize_goal,
)
from .manifest import Policy, ToolManifest, parse_manifest
from .tokens import RevocationList, SigningKey, issue

logger = logging.getLogger(__name__)

STATUS_APPROVED = "approved"
STATUS_PENDING = "pending_escalation"
STATUS_DENIED = "denied"


class ServiceStats:
    """Monotonic counters, safe for concurrent submissions."""

    def __init__(self):
        self._lock = threading.Lock()
        self.submissions = 0
        self.judge_invocations = 0
        self.cache_hits = 0
        self.auto_approvals = 0
        self.escalations = 0
        self.denials = 0

    def bump(self, name: str) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + 1)

    def to_dict(self) -> dict[str, int]:
        with self._lock:
            return {
                "submissions": self.submissions,
                "judge_invocations": self.judge_invocations,
                "cache_hits": self.cache_hits,
                "auto_approvals": self.auto_approvals,
                "escalations": self.escalations,
                "denials": self.denials,
            }


@dataclass(frozen=True)
class CacheEntry:
    key: str
    manifest_version: str
    policy: Policy
    r_comp: float
    upsilon: float
    reasoning: str | None
    claimed_risk: float | None
    claimed_uncertainty: float | None
    samples_meta: tuple[SampleMeta, ...]
    stored_at: float


@dataclass(frozen=True)
class SubmissionResult:
    task_id: str
    status: str
    tuple_: AuthorizationTuple
    token: str | None = None
    token_ttl: int | None = None
    escalation_id: str | None = None
    findings: tuple[dict[str, Any], ...] = ()
    cached: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "status": self.status,
            "token": self.token,
            "token_ttl": self.token_ttl,
            "escalation_id": self.escalation_id,
            "findings": [dict(f) for f in self.findings],
            "cached": self.cached,
            "tuple": self.tuple_.to_dict(),
        }


@dataclass(frozen=True)
class TaskRecord:
    task_id: str
    status: str
    tuple_: AuthorizationTuple
    escalation_id: str | None = None
    token: str | None = None
    token_ttl: int | None = None
    updated_at: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "status": self.status,
            "escalation_id": self.escalation_id,
            "token": self.token,
            "token_ttl": self.token_ttl,
            "updated_at": self.updated_at,
            "tuple": self.tuple_.to_dict(),
        }


def cache_key(
    normalized_goal: str, agent_id: str, manifest_version: str, config_fingerprint: str
) -> str:
    material = "\x00".join([normalized_goal, agent_id, manifest_version, config_fingerprint])
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


class AuthorizationService:
    """The service core; the HTTP layer in api.py is a thin adapter over it."""

    def __init__(
        self,
        manifest: ToolManifest,
        judge: Judge,
        signing_key: SigningKey,
        config: ServiceConfig | None = None,
        audit_log: AuditLog | None = None,
        clock: Callable[[], float] = time.time,
    ):
        self.config = config or ServiceConfig()
        self.judge = judge
        self.signing_key = signing_key
        self.clock = clock
        self.audit = audit_log if audit_log is not None else AuditLog(clock=clock)
        self.queue = EscalationQueue()
        self.revocations = RevocationList()
        self.stats = ServiceStats()
        self._manifest = manifest
        self._manifest_lock = threading.Lock()
        self._cache: dict[str, CacheEntry] = {}
        self._cache_lock = threading.Lock()
        self._registry: dict[str, TaskRecord] = {}
        self._registry_lock = threading.Lock()
        self._task_counter = itertools.count(1)

    # -- manifest ------------------------------------------------------------

    @property
    def manifest(self) -> ToolManifest:
        return self._manifest

    def swap_manifest(self, document: bytes | str | ToolManifest) -> ToolManifest:
        """Atomically replace the manifest; the version must change.

        All cache entries die with the old version (the key embeds it); the
        store is cleared as well so stale entries do not pin memory.
        """
        new = document if isinstance(document, ToolManifest) else parse_manifest(document)
        with self._manifest_lock:
            if new.version == self._manifest.version:
                raise SameVersion(new.version)
            self._manifest = new
        with self._cache_lock:
            self._cache.clear()
        logger.info("manifest swapped to version %s (%d tools)", new.version, len(new.tools))
        return new

    # -- submission pipeline ---------------------------------------------------

    def submit_task(self, agent_id: str, goal: str) -> SubmissionResult:
        if not isinstance(agent_id, str) or not agent_id.strip():
            raise InvalidRequest("agent_id must be non-empty")
        normalized = normalize_goal(goal or "")
        if not normalized:
            raise InvalidRequest("goal must be non-empty")
        now = self.clock()
        manifest = self._manifest
        task_id = f"t-{next(self._task_counter):06d}"
        self.stats.bump("submissions")

        key = cache_key(normalized, agent_id, manifest.version, self.config.fingerprint())
        if self.config.cache_enabled:
            entry = self._cache_lookup(key, now)
            if entry is not None:
                return self._approve_from_cache(task_id, agent_id, goal, entry, now)

        request = TaskRequest(task_id=task_id, agent_id=agent_id, goal=goal, submitted_at=now)
        self.stats.bump("judge_invocations")
        try:
            proposal = judge_task(
                self.judge,
                request,
                manifest,
                k=self.config.k_samples,
                aggregator=self.config.aggregator,
                principles=self.config.principles,
            )
        except PolicyInvalid as exc:
            return self._deny(task_id, agent_id, goal, exc, now)

        decision = decide(proposal.r_comp, proposal.upsilon, self.config.thresholds)
        tuple_ = AuthorizationTuple(
            task_id=task_id,
            agent_id=agent_id,
            goal=goal,
            policy=proposal.policy,
            r_comp=proposal.r_comp,
            upsilon=proposal.upsilon,
            decision=decision,
            thresholds=self.config.thresholds,
            created_at=now,
            reasoning=proposal.reasoning,
        )
        self._audit_proposal(tuple_, proposal.samples_meta, proposal, cached=False)
        self._audit_decision(tuple_)

        if decision.kind is DecisionKind.AUTO_APPROVE:
            ttl = ttl_for(ApprovalPath.AUTO_APPROVED, proposal.r_comp, self.config)
            token = self._mint(tuple_, ttl, now)
            self._cache_store(key, manifest.version, proposal, now)
            self.stats.bump("auto_approvals")
            self._record(
                TaskRecord(task_id, STATUS_APPROVED, tuple_, token=token, token_ttl=ttl, updated_at=now)
            )
            return SubmissionResult(
                task_id=task_id,
                status=STATUS_APPROVED,
                tuple_=tuple_,
                token=token,
                token_ttl=ttl,
            )

        rows = tuple(
            (tool, tx, manifest.lookup_risk(tool)) for tool, tx in proposal.policy.sorted_pairs()
        )
        item = self.queue.enqueue(tuple_, self.config.queue_ttl, now, permission_rows=rows)
        self.stats.bump("escalations")
        self._record(
            TaskRecord(
                task_id, STATUS_PENDING, tuple_, escalation_id=item.escalation_id, updated_at=now
            )
        )
        return SubmissionResult(
            task_id=task_id,
            status=STATUS_PENDING,
            tuple_=tuple_,
            escalation_id=item.escalation_id,
        )

    def _approve_from_cache(
        self, task_id: str, agent_id: str, goal: str, entry: CacheEntry, now: float
    ) -> SubmissionResult:
        self.stats.bump("cache_hits")
        tuple_ = AuthorizationTuple(
            task_id=task_id,
            agent_id=agent_id,
            goal=goal,
            policy=entry.policy,
            r_comp=entry.r_comp,
            upsilon=entry.upsilon,
            decision=Decision.auto_approve(),
            thresholds=self.config.thresholds,
            created_at=now,
            reasoning=entry.reasoning,
        )
        self._audit_proposal(tuple_, entry.samples_meta, None, cached=True)
        self._audit_decision(tuple_)
        ttl = ttl_for(ApprovalPath.AUTO_APPROVED, entry.r_comp, self.config)
        token = self._mint(tuple_, ttl, now)
        self.stats.bump("auto_approvals")
        self._record(
            TaskRecord(task_id, STATUS_APPROVED, tuple_, token=token, token_ttl=ttl, updated_at=now)
        )
        return SubmissionResult(
            task_id=task_id,
            status=STATUS_APPROVED,
            tuple_=tuple_,
            token=token,
            token_ttl=ttl,
            cached=True,
        )

    def _deny(
        self, task_id: str, agent_id: str, goal: str, exc: PolicyInvalid, now: float
    ) -> SubmissionResult:
        findings = tuple(dict(f) for f in exc.findings)
        tuple_ = AuthorizationTuple(
            task_id=task_id,
            agent_id=agent_id,
            goal=goal,
            policy=Policy.of(()),
            r_comp=0.0,
            upsilon=0.0,
            decision=Decision.deny(findings),
            thresholds=self.config.thresholds,
            created_at=now,
            reasoning=None,
        )
        self._audit_proposal(tuple_, exc.samples_meta, None, cached=False)
        self._audit_decision(tuple_)
        self.stats.bump("denials")
        self._record(TaskRecord(task_id, STATUS_DENIED, tuple_, updated_at=now))
        return SubmissionResult(
            task_id=task_id, status=STATUS_DENIED, tuple_=tuple_, findings=findings
        )

    def _mint(self, tuple_: AuthorizationTuple, ttl: int, now: float) -> str:
        token = issue(
            tuple_.task_id,
            tuple_.agent_id,
            tuple_.policy,
            tuple_.r_comp,
            ttl,
            self.signing_key,
            now=now,
        )
        try:
            self.audit.append(
                audit_mod.KIND_TOKEN_ISSUED,
                {
                    "task_id": tuple_.task_id,
                    "agent_id": tuple_.agent_id,
                    "key_id": self.signing_key.key_id,
                    "ttl": ttl,
                    "permissions": [list(p) for p in tuple_.policy.sorted_pairs()],
                    "r_comp": tuple_.r_comp,
                },
            )
        except Exception:
            # A token that cannot be audited must not circulate.
            self.revocations.revoke(tuple_.task_id, now)
            raise
        return token

    # -- escalations ---------------------------------------------------------------

    def list_escalations(self, status: str | None = None) -> list[EscalationItem]:
        now = self.clock()
        self._sweep_and_audit(now)
        wanted = EscalationStatus(status) if status else None
        return self.queue.list(now, wanted)

    def get_escalation(self, escalation_id: str) -> EscalationItem:
        now = self.clock()
        self._sweep_and_audit(now)
        return self.queue.get(escalation_id, now)

    def resolve_escalation(
        self, escalation_id: str, verdict: str, approver_id: str, comment: str | None = None
    ) -> dict[str, Any]:
        """One-time human resolution; Approve mints the short-TTL token."""
        if verdict not in ("approve", "deny"):
            raise InvalidRequest(f"verdict must be 'approve' or 'deny', got {verdict!r}")
        if not approver_id or not approver_id.strip():
            raise InvalidRequest("approver_id must be non-empty")
        now = self.clock()
        # The sweep transitions and audits anything already past its queue
        # TTL, so resolve() below reports Expired without a second audit entry.
        self._sweep_and_audit(now)
        item = self.queue.resolve(
            escalation_id, verdict == "approve", approver_id, comment, now
        )
        self._audit_resolution(item)
        tuple_ = item.tuple_
        if item.status is EscalationStatus.APPROVED:
            ttl = ttl_for(ApprovalPath.HUMAN_APPROVED, tuple_.r_comp, self.config)
            token = self._mint(tuple_, ttl, now)
            self._update_record_status(
                escalation_id=escalation_id,
                status=STATUS_APPROVED,
                now=now,
                token=token,
                token_ttl=ttl,
            )
            return {
                "escalation_id": escalation_id,
                "status": item.status.value,
                "token": token,
                "token_ttl": ttl,
            }
        self._update_record_status(escalation_id=escalation_id, status=STATUS_DENIED, now=now)
        return {"escalation_id": escalation_id, "status": item.status.value, "token": None}

    def _sweep_and_audit(self, now: float) -> None:
        for item in self.queue.sweep_expired(now):
            self._audit_resolution(item)
            self._update_record_status(
                escalation_id=item.escalation_id, status=STATUS_DENIED, now=now
            )

    # -- revocation -------------------------------------------------------------------

    def revoke_task(self, task_id: str) -> dict[str, Any]:
        now = self.clock()
        already = self.revocations.is_revoked(task_id)
        entry = self.revocations.revoke(task_id, now)
        if not already:
            self.audit.append(
                audit_mod.KIND_REVOKED, {"task_id": task_id, "seq": entry.seq}
            )
        return entry.to_dict()

    def revocations_since(self, seq: int) -> dict[str, Any]:
        return {
            "revocations": [e.to_dict() for e in self.revocations.since(seq)],
            "last_seq": self.revocations.last_seq,
        }

    # -- queries -----------------------------------------------------------------------

    def get_task(self, task_id: str) -> TaskRecord:
        with self._registry_lock:
            record = self._registry.get(task_id)
        if record is None:
            raise UnknownTask(task_id)
        return record

    def public_key_info(self) -> dict[str, str]:
        return {
            "public_key": self.signing_key.public_key_hex,
            "key_id": self.signing_key.key_id,
        }

    # -- internals -----------------------------------------------------------------------

    def _cache_lookup(self, key: str, now: float) -> CacheEntry | None:
        with self._cache_lock:
            entry = self._cache.get(key)
            if entry is None:
                return None
            if now - entry.stored_at > self.config.cache_max_age:
                del self._cache[key]
                return None
            if entry.manifest_version != self._manifest.version:
                del self._cache[key]
                return None
            return entry

    def _cache_store(
        self, key: str, manifest_version: str, proposal: AuthorizationProposal, now: float
    ) -> None:
        if not self.config.cache_enabled:
            return
        with self._cache_lock:
            self._cache[key] = CacheEntry(
                key=key,
                manifest_version=manifest_version,
                policy=proposal.policy,
                r_comp=proposal.r_comp,
                upsilon=proposal.upsilon,
                reasoning=proposal.reasoning,
                claimed_risk=proposal.claimed_risk,
                claimed_uncertainty=proposal.claimed_uncertainty,
                samples_meta=proposal.samples_meta,
                stored_at=now,
            )

    def _record(self, record: TaskRecord) -> None:
        with self._registry_lock:
            self._registry[record.task_id] = record

    def _update_record_status(
        self,
        escalation_id: str,
        status: str,
        now: float,
        token: str | None = None,
        token_ttl: int | None = None,
    ) -> None:
        with self._registry_lock:
            for task_id, record in self._registry.items():
                if record.escalation_id == escalation_id:
                    self._registry[task_id] = TaskRecord(
                        task_id=record.task_id,
                        status=status,
                        tuple_=record.tuple_,
                        escalation_id=escalation_id,
                        token=token,
                        token_ttl=token_ttl,
                        updated_at=now,
                    )
                    return

    def _audit_proposal(
        self,
        tuple_: AuthorizationTuple,
        samples_meta: tuple[SampleMeta, ...],
        proposal: AuthorizationProposal | None,
        cached: bool,
    ) -> None:
        body = {
            "task_id": tuple_.task_id,
            "agent_id": tuple_.agent_id,
            "goal": tuple_.goal,
            "policy": [list(p) for p in tuple_.policy.sorted_pairs()],
            "r_comp": tuple_.r_comp,
            "upsilon": tuple_.upsilon,
            "reasoning": tuple_.reasoning,
            "cached": cached,
            "samples": [m.to_dict() for m in samples_meta],
        }
        if proposal is not None:
            body["claimed_risk"] = proposal.claimed_risk
            body["claimed_uncertainty"] = proposal.claimed_uncertainty
            body["k_requested"] = proposal.k_requested
            body["k_effective"] = proposal.k_effective
        self.audit.append(audit_mod.KIND_PROPOSAL, body)

    def _audit_decision(self, tuple_: AuthorizationTuple) -> None:
        self.audit.append(
            audit_mod.KIND_DECISION,
            {
                "task_id": tuple_.task_id,
                "decision": tuple_.decision.to_dict(),
                "r_comp": tuple_.r_comp,
                "upsilon": tuple_.upsilon,
                "thresholds": {
                    "theta_risk": tuple_.thresholds.theta_risk,
                    "theta_uncertainty": tuple_.thresholds.theta_uncertainty,
                },
            },
        )

    def _audit_resolution(self, item: EscalationItem) -> None:
        self.audit.append(
            audit_mod.KIND_ESCALATION_RESOLVED,
            {
                "escalation_id": item.escalation_id,
                "task_id": item.tuple_.task_id,
                "status": item.status.value,
                "approver_id": item.approver_id,
                "comment": item.comment,
            },
        )


def build_judge(config: ServiceConfig) -> Judge:
    if config.judge is None:
        raise InvalidRequest("config has no judge section")
    if config.judge.type == "mock":
        return MockJudge.from_file(config.judge.rules_path)
    return RemoteJudge(
        url=config.judge.url, timeout=config.judge.timeout, retries=config.judge.retries
    )


def build_service(
    config: ServiceConfig, clock: Callable[[], float] = time.time
) -> AuthorizationService:
    """Wire a service from file-based config: manifest, judge, keys, audit."""
    if not config.manifest_path:
        raise InvalidRequest("config has no manifest_path")
    with open(config.manifest_path, "rb") as fh:
        manifest = parse_manifest(fh.read())
    judge = build_judge(config)
    if config.signing_key_path:
        signing_key = SigningKey.from_file(config.signing_key_path)
    else:
        signing_key = SigningKey.generate()
        logger.warning("no signing key configured; generated an ephemeral keypair")
    audit_log = AuditLog(config.audit_path, clock=clock)
    return AuthorizationService(
        manifest=manifest,
        judge=judge,
        signing_key=signing_key,
        config=config,
        audit_log=audit_log,
        clock=clock,
    )
