"""Shared fixtures: the four-tool manifest, mock judge rules, service factory.

The incident-response rule's perturbation script is tuned so the measured
ensemble disagreement over five samples is exactly 0.75 (three pair
distances of 0.5 and six of 1.0, checked by exact rational arithmetic in
the tests) while the medoid stays the firewall+backup policy.
"""

from __future__ import annotations

import json

import pytest

from tbac import (
    AuthorizationService,
    MockJudge,
    Policy,
    ServiceConfig,
    SigningKey,
    Thresholds,
    parse_manifest,
)
from tbac.audit import AuditLog

MANIFEST_DOC = {
    "version": "2026-08-01",
    "tools": [
        {
            "id": "networkAPI.updateFirewallRule",
            "description": "Modify firewall rules on production network segments",
            "risk": 9.5,
            "transactions": ["write", "execute"],
        },
        {
            "id": "dbAPI.restoreFromBackup",
            "description": "Provision a database instance from a stored backup",
            "risk": 7.0,
            "transactions": ["read", "execute", "create"],
        },
        {
            "id": "crmAPI.readLeads",
            "description": "Read lead records from the sales CRM",
            "risk": 3.0,
            "transactions": ["read"],
        },
        {
            "id": "slackAPI.postMessage",
            "description": "Post a message to a Slack channel",
            "risk": 2.0,
            "transactions": ["write"],
        },
    ],
}

FIREWALL_WRITE = ("networkAPI.updateFirewallRule", "write")
BACKUP_EXECUTE = ("dbAPI.restoreFromBackup", "execute")
CRM_READ = ("crmAPI.readLeads", "read")
SLACK_WRITE = ("slackAPI.postMessage", "write")

INCIDENT_GOAL = (
    "Isolate compromised database db-prod-123, analyze its outbound traffic by "
    "mirroring traffic to a sandbox, and provision a replacement from the latest backup."
)
LEADS_GOAL = (
    "Read the daily new leads from the sales-crm system and post a summary count "
    "to the #sales-updates Slack channel."
)
GHOST_GOAL = "Use the phantom integration to launch the migration."

MOCK_RULES = [
    {
        "match": "isolate compromised database",
        "permissions": [list(FIREWALL_WRITE), list(BACKUP_EXECUTE)],
        "perturbations": {
            "2": {"remove": [list(BACKUP_EXECUTE)]},
            "3": {
                "remove": [list(FIREWALL_WRITE), list(BACKUP_EXECUTE)],
                "add": [list(CRM_READ)],
            },
            "4": {
                "remove": [list(FIREWALL_WRITE), list(BACKUP_EXECUTE)],
                "add": [list(CRM_READ), list(SLACK_WRITE)],
            },
        },
        "claimed_risk": 9.5,
        "claimed_uncertainty": 0.75,
        "reasoning": "Novel high-impact incident response touching the production firewall.",
    },
    {
        "match": "daily new leads",
        "permissions": [list(CRM_READ), list(SLACK_WRITE)],
        "claimed_risk": 3.0,
        "claimed_uncertainty": 0.10,
        "reasoning": "Routine read-and-post reporting task.",
    },
    {
        "match": "phantom integration",
        "permissions": [["ghostAPI.launch", "execute"]],
    },
]


class FakeClock:
    """Settable clock so expiry and cache-age tests control time."""

    def __init__(self, start: float = 1_700_000_000.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


def manifest_bytes(doc: dict = MANIFEST_DOC) -> bytes:
    return json.dumps(doc).encode("utf-8")


@pytest.fixture
def manifest_doc() -> dict:
    return json.loads(json.dumps(MANIFEST_DOC))


@pytest.fixture
def manifest():
    return parse_manifest(manifest_bytes())


@pytest.fixture
def mock_judge():
    return MockJudge(MOCK_RULES)


@pytest.fixture
def signing_key():
    return SigningKey.generate()


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def leads_policy():
    return Policy.of([CRM_READ, SLACK_WRITE])


@pytest.fixture
def incident_policy():
    return Policy.of([FIREWALL_WRITE, BACKUP_EXECUTE])


def make_service(
    tmp_path,
    clock,
    manifest=None,
    judge=None,
    config=None,
    signing_key=None,
    audit_path=None,
) -> AuthorizationService:
    manifest = manifest if manifest is not None else parse_manifest(manifest_bytes())
    judge = judge if judge is not None else MockJudge(MOCK_RULES)
    config = config or ServiceConfig(
        thresholds=Thresholds(8.0, 0.6), admin_token="admin-secret"
    )
    path = audit_path if audit_path is not None else tmp_path / "audit.log"
    return AuthorizationService(
        manifest=manifest,
        judge=judge,
        signing_key=signing_key or SigningKey.generate(),
        config=config,
        audit_log=AuditLog(path, clock=clock),
        clock=clock,
    )


@pytest.fixture
def service(tmp_path, clock):
    return make_service(tmp_path, clock)
