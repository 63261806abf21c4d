"""Exception hierarchy for the task authorization service.

Every error that crosses a module boundary is a subclass of TbacError and
carries a machine-readable ``code`` used by the HTTP layer and the CLI.
"""

from __future__ import annotations

from typing import Any


class TbacError(Exception):
    """Base class for all service errors."""

    code = "error"

    def to_dict(self) -> dict[str, Any]:
        return {"error": self.code, "detail": str(self)}


# --- manifest ---------------------------------------------------------------


class ManifestError(TbacError):
    code = "manifest_error"


class MalformedDocument(ManifestError):
    code = "malformed_document"


class DuplicateToolId(ManifestError):
    code = "duplicate_tool_id"

    def __init__(self, tool_id: str):
        super().__init__(f"duplicate tool id: {tool_id}")
        self.tool_id = tool_id


class RiskOutOfRange(ManifestError):
    code = "risk_out_of_range"

    def __init__(self, tool_id: str, value: float):
        super().__init__(f"risk {value!r} for tool {tool_id} outside [0, 10]")
        self.tool_id = tool_id
        self.value = value


class UnknownTransactionVerb(ManifestError):
    code = "unknown_transaction_verb"

    def __init__(self, tool_id: str, verb: str):
        super().__init__(f"unknown transaction verb {verb!r} for tool {tool_id}")
        self.tool_id = tool_id
        self.verb = verb


class EmptyTransactions(ManifestError):
    code = "empty_transactions"

    def __init__(self, tool_id: str):
        super().__init__(f"tool {tool_id} declares no transactions")
        self.tool_id = tool_id


class UnknownTool(ManifestError):
    code = "unknown_tool"

    def __init__(self, tool_id: str):
        super().__init__(f"tool not in manifest: {tool_id}")
        self.tool_id = tool_id


# --- judge ------------------------------------------------------------------


class JudgeError(TbacError):
    code = "judge_error"


class KTooSmall(JudgeError):
    code = "k_too_small"

    def __init__(self, k: int):
        super().__init__(f"ensemble size must be >= 2, got {k}")
        self.k = k


class TooFewSamples(JudgeError):
    code = "too_few_samples"


class NoValidSamples(JudgeError):
    code = "no_valid_samples"


class JudgeUnavailable(JudgeError):
    code = "judge_unavailable"


class SynthesisFailed(JudgeError):
    """Raised when the ensemble cannot produce enough usable samples."""

    code = "synthesis_failed"

    def __init__(self, message: str, failures: tuple = ()):
        super().__init__(message)
        self.failures = failures


class PolicyInvalid(JudgeError):
    """Selected policy failed validation; surfaces as a Deny downstream."""

    code = "policy_invalid"

    def __init__(self, findings: tuple, samples_meta: tuple = ()):
        details = "; ".join(str(f) for f in findings) or "invalid policy"
        super().__init__(details)
        self.findings = findings
        self.samples_meta = samples_meta


# --- decision engine ----------------------------------------------------------


class DecisionError(TbacError):
    code = "decision_error"


class InputOutOfRange(DecisionError):
    code = "input_out_of_range"


class NotAnEscalation(DecisionError):
    code = "not_an_escalation"


class UnknownEscalation(DecisionError):
    code = "unknown_escalation"

    def __init__(self, escalation_id: str):
        super().__init__(f"no such escalation: {escalation_id}")
        self.escalation_id = escalation_id


class AlreadyResolved(DecisionError):
    code = "already_resolved"

    def __init__(self, escalation_id: str, status: str):
        super().__init__(f"escalation {escalation_id} already {status}")
        self.escalation_id = escalation_id
        self.status = status


class EscalationExpired(DecisionError):
    code = "escalation_expired"

    def __init__(self, escalation_id: str):
        super().__init__(f"escalation {escalation_id} expired")
        self.escalation_id = escalation_id


# --- tokens -------------------------------------------------------------------


class TokenError(TbacError):
    code = "token_error"


class SigningFailure(TokenError):
    code = "signing_failure"


class TokenVerificationError(TokenError):
    """Base for the four distinct verify() rejections."""

    code = "token_rejected"


class TokenMalformed(TokenVerificationError):
    code = "malformed"


class TokenBadSignature(TokenVerificationError):
    code = "bad_signature"


class TokenExpired(TokenVerificationError):
    code = "expired"


class TokenRevoked(TokenVerificationError):
    code = "revoked"


# --- audit --------------------------------------------------------------------


class PersistenceFailure(TbacError):
    code = "persistence_failure"


# --- service ------------------------------------------------------------------


class ServiceError(TbacError):
    code = "service_error"


class InvalidRequest(ServiceError):
    code = "invalid_request"


class UnknownTask(ServiceError):
    code = "unknown_task"

    def __init__(self, task_id: str):
        super().__init__(f"no such task: {task_id}")
        self.task_id = task_id


class SameVersion(ServiceError):
    code = "same_version"

    def __init__(self, version: str):
        super().__init__(f"manifest version {version!r} is already active")
        self.version = version


class AdminAuthFailure(ServiceError):
    code = "admin_auth_failure"


class UnknownStub(ServiceError):
    code = "unknown_stub"

    def __init__(self, tool_id: str):
        super().__init__(f"no stub registered for tool: {tool_id}")
        self.tool_id = tool_id


# --- cli ------------------------------------------------------------------------


class WorkloadParseError(TbacError):
    code = "workload_parse_error"


class EndpointUnreachable(TbacError):
    code = "endpoint_unreachable"
