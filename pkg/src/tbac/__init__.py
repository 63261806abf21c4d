"""Task-based access control with just-in-time policy synthesis.

A pluggable judge proposes a permission set for each novel agent task; the
service recomputes the task's composite risk from a risk-enriched tool
manifest, measures the judge ensemble's disagreement, and either mints a
short-lived signed capability token or escalates to a human analyst. Every
decision lands in a tamper-evident hash-chained audit log, and enforcement
points validate tokens offline against the published public key.
"""

from .config import JudgeConfig, ServiceConfig
from .decision import (
    ApprovalPath,
    AuthorizationTuple,
    Decision,
    DecisionKind,
    EscalationQueue,
    EscalationStatus,
    Thresholds,
    decide,
    ttl_for,
)
from .judge import (
    CandidatePolicy,
    Judge,
    MockJudge,
    RemoteJudge,
    TaskRequest,
    build_prompt,
    estimate_uncertainty,
    jaccard_distance,
    judge_task,
    normalize_goal,
    sample_policies,
    select_policy,
)
from .manifest import (
    Aggregator,
    Policy,
    ToolEntry,
    ToolManifest,
    composite_risk,
    lookup_risk,
    parse_manifest,
    validate_policy,
)
from .pep import ResourceGateway, enforce
from .service import AuthorizationService, SubmissionResult, build_service
from .tokens import RevocationList, SigningKey, canonical_encode, issue, revoke, verify

__all__ = [
    "Aggregator",
    "ApprovalPath",
    "AuthorizationService",
    "AuthorizationTuple",
    "CandidatePolicy",
    "Decision",
    "DecisionKind",
    "EscalationQueue",
    "EscalationStatus",
    "Judge",
    "JudgeConfig",
    "MockJudge",
    "Policy",
    "RemoteJudge",
    "ResourceGateway",
    "RevocationList",
    "ServiceConfig",
    "SigningKey",
    "SubmissionResult",
    "TaskRequest",
    "Thresholds",
    "ToolEntry",
    "ToolManifest",
    "build_prompt",
    "build_service",
    "canonical_encode",
    "composite_risk",
    "decide",
    "enforce",
    "estimate_uncertainty",
    "issue",
    "jaccard_distance",
    "judge_task",
    "lookup_risk",
    "normalize_goal",
    "parse_manifest",
    "revoke",
    "sample_policies",
    "select_policy",
    "ttl_for",
    "validate_policy",
    "verify",
]
