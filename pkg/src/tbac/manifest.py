"""Risk-enriched tool manifest, policies, and composite task risk.

The manifest is the operator-managed catalog of tools an agent may request.
Every tool carries a static risk score on a 0-10 scale and the set of
transaction verbs it supports. A policy is the set of (tool, transaction)
permission pairs granted for one task; its composite risk is an aggregate of
the distinct tools' static scores.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .errors import (
    DuplicateToolId,
    EmptyTransactions,
    MalformedDocument,
    RiskOutOfRange,
    UnknownTool,
    UnknownTransactionVerb,
)

TRANSACTION_VERBS = frozenset({"read", "write", "execute", "delete", "create"})

RISK_MIN = 0.0
RISK_MAX = 10.0

# Weight of a permission when aggregating with the risk-weighted mean:
# read-only access counts half, every mutating verb counts in full.
_READ_WEIGHT = 0.5
_DEFAULT_WEIGHT = 1.0


class Aggregator(enum.Enum):
    """How per-tool risks combine into the composite task risk."""

    MAX = "max"
    WEIGHTED_MEAN = "weighted_mean"


@dataclass(frozen=True)
class ToolEntry:
    """One tool in the manifest with its static risk score."""

    tool_id: str
    description: str
    risk: float
    transactions: frozenset[str]


@dataclass(frozen=True)
class ToolManifest:
    """Validated, immutable tool catalog keyed by tool_id."""

    version: str
    tools: Mapping[str, ToolEntry]

    def lookup_risk(self, tool_id: str) -> float:
        """Static risk score for a tool; raises UnknownTool if absent."""
        entry = self.tools.get(tool_id)
        if entry is None:
            raise UnknownTool(tool_id)
        return entry.risk

    def get(self, tool_id: str) -> ToolEntry | None:
        return self.tools.get(tool_id)

    def to_document(self) -> dict[str, Any]:
        """Manifest JSON document form; tools sorted by id for determinism."""
        return {
            "version": self.version,
            "tools": [
                {
                    "id": e.tool_id,
                    "description": e.description,
                    "risk": e.risk,
                    "transactions": sorted(e.transactions),
                }
                for e in sorted(self.tools.values(), key=lambda e: e.tool_id)
            ],
        }

    def serialize(self) -> bytes:
        return json.dumps(self.to_document(), indent=2).encode("utf-8")


@dataclass(frozen=True)
class Policy:
    """Set of (tool_id, transaction) permission pairs for one task."""

    permissions: frozenset[tuple[str, str]] = field(default_factory=frozenset)

    @classmethod
    def of(cls, pairs: Iterable[tuple[str, str]]) -> "Policy":
        return cls(frozenset((str(t), str(tx)) for t, tx in pairs))

    def tools(self) -> set[str]:
        """Distinct tool ids touched by this policy."""
        return {tool for tool, _ in self.permissions}

    def transactions_for(self, tool_id: str) -> set[str]:
        """Transaction verbs this policy grants on one tool."""
        return {tx for tool, tx in self.permissions if tool == tool_id}

    def sorted_pairs(self) -> list[tuple[str, str]]:
        """Canonical serialization order: lexicographic by (tool, verb)."""
        return sorted(self.permissions)

    def __len__(self) -> int:
        return len(self.permissions)

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return pair in self.permissions


@dataclass(frozen=True)
class Finding:
    """One policy-validation violation."""

    kind: str  # "unknown_tool" | "disallowed_transaction"
    tool_id: str
    transaction: str | None = None

    def __str__(self) -> str:
        if self.kind == "unknown_tool":
            return f"unknown tool: {self.tool_id}"
        return f"transaction {self.transaction!r} not allowed on {self.tool_id}"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "tool_id": self.tool_id, "transaction": self.transaction}


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.findings


_TOOL_KEYS = {"id", "description", "risk", "transactions"}


def parse_manifest(document: bytes | str) -> ToolManifest:
    """Parse and validate a manifest JSON document.

    Rejects unknown keys, duplicate tool ids, risks outside [0, 10], verbs
    outside the closed set, and empty transaction lists. Out-of-range risks
    are an error rather than being clamped, so manifest mistakes surface at
    load time.
    """
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not UTF-8: {exc}") from exc
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"not valid JSON: {exc}") from exc

    if not isinstance(doc, dict):
        raise MalformedDocument("top level must be an object")
    unknown = set(doc) - {"version", "tools"}
    if unknown:
        raise MalformedDocument(f"unknown top-level keys: {sorted(unknown)}")
    version = doc.get("version")
    if not isinstance(version, str) or not version:
        raise MalformedDocument("version must be a non-empty string")
    raw_tools = doc.get("tools")
    if not isinstance(raw_tools, list):
        raise MalformedDocument("tools must be a list")

    tools: dict[str, ToolEntry] = {}
    for raw in raw_tools:
        if not isinstance(raw, dict):
            raise MalformedDocument("each tool must be an object")
        if set(raw) != _TOOL_KEYS:
            missing = _TOOL_KEYS - set(raw)
            extra = set(raw) - _TOOL_KEYS
            raise MalformedDocument(
                f"tool entry keys mismatch (missing {sorted(missing)}, extra {sorted(extra)})"
            )
        tool_id = raw["id"]
        if not isinstance(tool_id, str) or not tool_id:
            raise MalformedDocument("tool id must be a non-empty string")
        if tool_id in tools:
            raise DuplicateToolId(tool_id)
        description = raw["description"]
        if not isinstance(description, str):
            raise MalformedDocument(f"description of {tool_id} must be a string")
        risk = raw["risk"]
        if isinstance(risk, bool) or not isinstance(risk, (int, float)):
            raise MalformedDocument(f"risk of {tool_id} must be a number")
        risk = float(risk)
        if not (RISK_MIN <= risk <= RISK_MAX):
            raise RiskOutOfRange(tool_id, risk)
        raw_tx = raw["transactions"]
        if not isinstance(raw_tx, list):
            raise MalformedDocument(f"transactions of {tool_id} must be a list")
        if not raw_tx:
            raise EmptyTransactions(tool_id)
        for verb in raw_tx:
            if verb not in TRANSACTION_VERBS:
                raise UnknownTransactionVerb(tool_id, str(verb))
        tools[tool_id] = ToolEntry(
            tool_id=tool_id,
            description=description,
            risk=risk,
            transactions=frozenset(raw_tx),
        )

    return ToolManifest(version=version, tools=tools)


def lookup_risk(manifest: ToolManifest, tool_id: str) -> float:
    return manifest.lookup_risk(tool_id)


def composite_risk(
    policy: Policy, manifest: ToolManifest, aggregator: Aggregator = Aggregator.MAX
) -> float:
    """Aggregate the distinct tools' static risks into one task risk.

    MAX is the conservative default: one high-risk tool makes the whole task
    high-risk. WEIGHTED_MEAN weights each tool by its heaviest granted verb
    (read 0.5, anything else 1.0) and stays on the 0-10 scale. Duplicate
    tools contribute once; empty policies score 0.0.
    """
    per_tool: dict[str, float] = {}
    for tool_id in policy.tools():
        per_tool[tool_id] = manifest.lookup_risk(tool_id)
    if not per_tool:
        return 0.0
    if aggregator is Aggregator.MAX:
        return max(per_tool.values())

    weighted = 0.0
    total = 0.0
    for tool_id, risk in per_tool.items():
        weight = max(
            _READ_WEIGHT if tx == "read" else _DEFAULT_WEIGHT
            for tx in policy.transactions_for(tool_id)
        )
        weighted += weight * risk
        total += weight
    return weighted / total


def validate_policy(policy: Policy, manifest: ToolManifest) -> ValidationReport:
    """Syntactic policy check: every pair's tool exists and allows the verb.

    Violations are returned as findings, never raised.
    """
    findings: list[Finding] = []
    for tool_id, tx in policy.sorted_pairs():
        entry = manifest.get(tool_id)
        if entry is None:
            findings.append(Finding("unknown_tool", tool_id, tx))
        elif tx not in entry.transactions:
            findings.append(Finding("disallowed_transaction", tool_id, tx))
    return ValidationReport(tuple(findings))
