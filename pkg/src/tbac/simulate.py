"""Scripted agent workloads for measuring decision behavior in aggregate.

A workload is an ordered task list with optional expected-outcome labels,
replayed sequentially (or concurrently with --parallel) against an
in-process service or a remote endpoint. Reports are deterministic: no
timestamps, task ids, or token strings, so two runs against the same
deterministic judge produce byte-identical JSON.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

import json

import httpx

from .errors import EndpointUnreachable, WorkloadParseError
from .service import AuthorizationService

_STATUS_FOR_LABEL = {
    "auto_approve": "approved",
    "escalate": "pending_escalation",
    "deny": "denied",
}


@dataclass(frozen=True)
class WorkloadTask:
    agent_id: str
    goal: str
    expected: str | None = None


@dataclass(frozen=True)
class Workload:
    tasks: tuple[WorkloadTask, ...]
    repeat: int = 1


def parse_workload(data: Any) -> Workload:
    if isinstance(data, (bytes, str)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise WorkloadParseError(f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("tasks"), list):
        raise WorkloadParseError("workload must be an object with a 'tasks' list")
    raw_tasks = data["tasks"]
    if not raw_tasks:
        raise WorkloadParseError("workload task list must be non-empty")
    tasks = []
    for i, raw in enumerate(raw_tasks):
        if not isinstance(raw, dict) or "agent_id" not in raw or "goal" not in raw:
            raise WorkloadParseError(f"task {i} needs 'agent_id' and 'goal'")
        expected = raw.get("expected")
        if expected is not None and expected not in _STATUS_FOR_LABEL:
            raise WorkloadParseError(
                f"task {i} expected label must be one of {sorted(_STATUS_FOR_LABEL)}"
            )
        tasks.append(WorkloadTask(str(raw["agent_id"]), str(raw["goal"]), expected))
    repeat = int(data.get("repeat", 1))
    if repeat < 1:
        raise WorkloadParseError("repeat must be >= 1")
    return Workload(tasks=tuple(tasks), repeat=repeat)


def load_workload(path: str | Path) -> Workload:
    return parse_workload(Path(path).read_bytes())


class Submitter(Protocol):
    def submit(self, agent_id: str, goal: str) -> dict[str, Any]: ...


class InProcessSubmitter:
    def __init__(self, service: AuthorizationService):
        self.service = service

    def submit(self, agent_id: str, goal: str) -> dict[str, Any]:
        return self.service.submit_task(agent_id, goal).to_dict()


class HttpSubmitter:
    def __init__(self, base_url: str, client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self.client = client or httpx.Client(timeout=30.0)

    def submit(self, agent_id: str, goal: str) -> dict[str, Any]:
        try:
            response = self.client.post(
                f"{self.base_url}/v1/tasks", json={"agent_id": agent_id, "goal": goal}
            )
        except httpx.TransportError as exc:
            raise EndpointUnreachable(f"cannot reach {self.base_url}: {exc}") from exc
        if response.status_code >= 500:
            return {"status": "error", "error": response.json()}
        response.raise_for_status()
        return response.json()


@dataclass(frozen=True)
class TaskOutcome:
    index: int
    agent_id: str
    goal: str
    status: str
    expected: str | None
    match: bool | None
    cached: bool
    r_comp: float | None
    upsilon: float | None
    reasons: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "agent_id": self.agent_id,
            "goal": self.goal,
            "status": self.status,
            "expected": self.expected,
            "match": self.match,
            "cached": self.cached,
            "r_comp": self.r_comp,
            "upsilon": self.upsilon,
            "reasons": list(self.reasons),
        }


@dataclass(frozen=True)
class SimulationReport:
    outcomes: tuple[TaskOutcome, ...]
    total: int
    completed: int
    auto_rate: float
    escalation_rate: float
    deny_rate: float
    error_count: int
    cache_hit_count: int
    mismatches: tuple[int, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "completed": self.completed,
            "auto_rate": self.auto_rate,
            "escalation_rate": self.escalation_rate,
            "deny_rate": self.deny_rate,
            "error_count": self.error_count,
            "cache_hit_count": self.cache_hit_count,
            "mismatches": list(self.mismatches),
            "outcomes": [o.to_dict() for o in self.outcomes],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _outcome(index: int, task: WorkloadTask, result: dict[str, Any]) -> TaskOutcome:
    status = result.get("status", "error")
    tuple_ = result.get("tuple") or {}
    decision = tuple_.get("decision") or {}
    match = None
    if task.expected is not None:
        match = status == _STATUS_FOR_LABEL[task.expected]
    return TaskOutcome(
        index=index,
        agent_id=task.agent_id,
        goal=task.goal,
        status=status,
        expected=task.expected,
        match=match,
        cached=bool(result.get("cached", False)),
        r_comp=tuple_.get("r_comp"),
        upsilon=tuple_.get("upsilon"),
        reasons=tuple(r["reason"] for r in decision.get("reasons", [])),
    )


def run_simulation(
    workload: Workload, submitter: Submitter, parallel: int = 1
) -> SimulationReport:
    """Submit every task (repeat times over the list) and tally outcomes.

    escalation_rate, auto_rate, and deny_rate are fractions of completed
    submissions and sum to 1 when no submission errored.
    """
    sequence = [
        (run * len(workload.tasks) + i, task)
        for run in range(workload.repeat)
        for i, task in enumerate(workload.tasks)
    ]
    outcomes: list[TaskOutcome] = []
    if parallel <= 1:
        for index, task in sequence:
            outcomes.append(_outcome(index, task, submitter.submit(task.agent_id, task.goal)))
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=parallel) as pool:
            futures = {
                pool.submit(submitter.submit, task.agent_id, task.goal): (index, task)
                for index, task in sequence
            }
            for future in concurrent.futures.as_completed(futures):
                index, task = futures[future]
                outcomes.append(_outcome(index, task, future.result()))
        outcomes.sort(key=lambda o: o.index)

    total = len(outcomes)
    by_status = {"approved": 0, "pending_escalation": 0, "denied": 0}
    errors = 0
    for outcome in outcomes:
        if outcome.status in by_status:
            by_status[outcome.status] += 1
        else:
            errors += 1
    completed = total - errors
    return SimulationReport(
        outcomes=tuple(outcomes),
        total=total,
        completed=completed,
        auto_rate=by_status["approved"] / completed if completed else 0.0,
        escalation_rate=by_status["pending_escalation"] / completed if completed else 0.0,
        deny_rate=by_status["denied"] / completed if completed else 0.0,
        error_count=errors,
        cache_hit_count=sum(1 for o in outcomes if o.cached),
        mismatches=tuple(o.index for o in outcomes if o.match is False),
    )
