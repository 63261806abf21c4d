"""Service configuration: thresholds, ensemble size, TTLs, judge backend, paths.

Config files are JSON; relative paths inside them resolve against the file's
directory. TBAC_SIGNING_KEY, TBAC_AUDIT_PATH, and TBAC_ADMIN_TOKEN override
the corresponding fields from the environment, and TBAC_CONFIG names the
config file itself for the CLI.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import json

from .decision import Thresholds
from .encoding import canonical_json
from .errors import InvalidRequest
from .manifest import Aggregator

DEFAULT_PRINCIPLES = (
    "Always prefer read-only access.",
    "Grant no permission beyond what the stated goal requires.",
)


@dataclass(frozen=True)
class JudgeConfig:
    type: str = "mock"  # "mock" | "remote"
    rules_path: str | None = None
    url: str | None = None
    timeout: float = 30.0
    retries: int = 2

    def __post_init__(self):
        if self.type not in ("mock", "remote"):
            raise InvalidRequest(f"judge.type must be 'mock' or 'remote', got {self.type!r}")
        if self.type == "mock" and not self.rules_path:
            raise InvalidRequest("mock judge needs judge.rules_path")
        if self.type == "remote" and not self.url:
            raise InvalidRequest("remote judge needs judge.url")


@dataclass(frozen=True)
class ServiceConfig:
    thresholds: Thresholds = field(default_factory=lambda: Thresholds(8.0, 0.6))
    k_samples: int = 5
    aggregator: Aggregator = Aggregator.MAX
    default_ttl: int = 3600
    escalated_ttl: int = 600
    queue_ttl: int = 86400
    cache_enabled: bool = True
    cache_max_age: int = 3600
    high_risk_mark: float = 8.0
    principles: tuple[str, ...] = DEFAULT_PRINCIPLES
    judge: JudgeConfig | None = None
    manifest_path: str | None = None
    signing_key_path: str | None = None
    audit_path: str | None = None
    admin_token: str | None = None
    host: str = "127.0.0.1"
    port: int = 8470

    def __post_init__(self):
        if self.k_samples < 2:
            raise InvalidRequest(f"k_samples must be >= 2, got {self.k_samples}")
        for name in ("default_ttl", "escalated_ttl", "queue_ttl", "cache_max_age"):
            if getattr(self, name) <= 0:
                raise InvalidRequest(f"{name} must be positive")

    def fingerprint(self) -> str:
        """Hash of the decision-relevant settings; part of every cache key."""
        material = canonical_json(
            {
                "theta_risk": self.thresholds.theta_risk,
                "theta_uncertainty": self.thresholds.theta_uncertainty,
                "k_samples": self.k_samples,
                "aggregator": self.aggregator.value,
            }
        )
        return hashlib.sha256(material).hexdigest()

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: Path | None = None) -> "ServiceConfig":
        def resolve(p: str | None) -> str | None:
            if p is None or base_dir is None:
                return p
            return str((base_dir / p).resolve()) if not Path(p).is_absolute() else p

        thresholds_raw = data.get("thresholds", {})
        judge_raw = data.get("judge")
        listen = data.get("listen", {})
        config = cls(
            thresholds=Thresholds(
                theta_risk=float(thresholds_raw.get("theta_risk", 8.0)),
                theta_uncertainty=float(thresholds_raw.get("theta_uncertainty", 0.6)),
            ),
            k_samples=int(data.get("k_samples", 5)),
            aggregator=Aggregator(data.get("aggregator", "max")),
            default_ttl=int(data.get("default_ttl", 3600)),
            escalated_ttl=int(data.get("escalated_ttl", 600)),
            queue_ttl=int(data.get("queue_ttl", 86400)),
            cache_enabled=bool(data.get("cache_enabled", True)),
            cache_max_age=int(data.get("cache_max_age", 3600)),
            high_risk_mark=float(data.get("high_risk_mark", 8.0)),
            principles=tuple(data.get("principles", DEFAULT_PRINCIPLES)),
            judge=JudgeConfig(
                type=judge_raw.get("type", "mock"),
                rules_path=resolve(judge_raw.get("rules_path")),
                url=judge_raw.get("url"),
                timeout=float(judge_raw.get("timeout", 30.0)),
                retries=int(judge_raw.get("retries", 2)),
            )
            if judge_raw
            else None,
            manifest_path=resolve(data.get("manifest_path")),
            signing_key_path=resolve(data.get("signing_key_path")),
            audit_path=resolve(data.get("audit_path")),
            admin_token=data.get("admin_token"),
            host=listen.get("host", "127.0.0.1"),
            port=int(listen.get("port", 8470)),
        )
        return config._with_env_overrides()

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidRequest(f"cannot load config {path}: {exc}") from exc
        return cls.from_dict(data, base_dir=path.parent)

    def _with_env_overrides(self) -> "ServiceConfig":
        overrides: dict[str, Any] = {}
        if os.environ.get("TBAC_SIGNING_KEY"):
            overrides["signing_key_path"] = os.environ["TBAC_SIGNING_KEY"]
        if os.environ.get("TBAC_AUDIT_PATH"):
            overrides["audit_path"] = os.environ["TBAC_AUDIT_PATH"]
        if os.environ.get("TBAC_ADMIN_TOKEN"):
            overrides["admin_token"] = os.environ["TBAC_ADMIN_TOKEN"]
        return replace(self, **overrides) if overrides else self

    def public_view(self) -> dict[str, Any]:
        """Read-only slice served to the dashboard."""
        return {
            "thresholds": {
                "theta_risk": self.thresholds.theta_risk,
                "theta_uncertainty": self.thresholds.theta_uncertainty,
            },
            "k_samples": self.k_samples,
            "aggregator": self.aggregator.value,
            "default_ttl": self.default_ttl,
            "escalated_ttl": self.escalated_ttl,
            "high_risk_mark": self.high_risk_mark,
        }
