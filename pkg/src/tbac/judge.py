"""Policy-synthesis judges and ensemble uncertainty estimation.

A judge turns a risk-enriched prompt into one candidate policy per sample.
The service draws k samples, keeps the valid ones, picks the medoid as the
consensus policy, and measures disagreement (mean pairwise Jaccard distance
over permission sets) as the model-uncertainty signal. Judges may self-report
a risk and an uncertainty; both are recorded for audit and never used for
the decision.

MockJudge is a deterministic keyword-rule judge for tests and simulation;
RemoteJudge adapts a single HTTP endpoint (one JSON object per sample).
"""

from __future__ import annotations

import abc
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import httpx

from .errors import (
    InvalidRequest,
    JudgeUnavailable,
    KTooSmall,
    NoValidSamples,
    PolicyInvalid,
    SynthesisFailed,
    TooFewSamples,
)
from .manifest import Aggregator, Policy, ToolManifest, composite_risk, validate_policy


def normalize_goal(goal: str) -> str:
    """Trim, collapse whitespace runs to single spaces, case-fold."""
    return " ".join(goal.split()).casefold()


@dataclass(frozen=True)
class TaskRequest:
    """An agent's intent submission."""

    task_id: str
    agent_id: str
    goal: str
    submitted_at: float  # unix seconds, UTC

    def __post_init__(self):
        if not normalize_goal(self.goal):
            raise InvalidRequest("goal must be non-empty")


@dataclass(frozen=True)
class PromptDocument:
    """Deterministic rendering of goal, principles, and the tool catalog."""

    goal: str
    principles: tuple[str, ...]
    manifest_digest: str
    manifest_version: str

    def render(self) -> str:
        lines = [f"Goal: {self.goal}", ""]
        lines.append("Security principles:")
        for i, p in enumerate(self.principles, start=1):
            lines.append(f"{i}. {p}")
        lines.append("")
        lines.append("Available tools (id | risk 0-10 | transactions | description):")
        lines.append(self.manifest_digest)
        lines.append("")
        lines.append(
            "Respond with one JSON object: "
            '{"permissions": [[tool_id, transaction], ...], '
            '"claimed_risk": number, "claimed_uncertainty": number in [0,1], '
            '"reasoning": string}'
        )
        return "\n".join(lines)


@dataclass(frozen=True)
class CandidatePolicy:
    """One ensemble sample: a policy plus the judge's optional self-reports."""

    policy: Policy
    claimed_risk: float | None = None
    claimed_uncertainty: float | None = None
    reasoning: str | None = None

    def __post_init__(self):
        if self.claimed_uncertainty is not None and not (
            0.0 <= self.claimed_uncertainty <= 1.0
        ):
            raise InvalidRequest(
                f"claimed_uncertainty must be in [0,1], got {self.claimed_uncertainty}"
            )


@dataclass(frozen=True)
class SampleMeta:
    """Audit record for one ensemble sample, valid or failed."""

    index: int
    valid: bool
    permissions: tuple[tuple[str, str], ...] | None = None
    claimed_risk: float | None = None
    claimed_uncertainty: float | None = None
    reasoning: str | None = None
    findings: tuple[dict[str, Any], ...] = ()
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "valid": self.valid,
            "permissions": [list(p) for p in self.permissions] if self.permissions else None,
            "claimed_risk": self.claimed_risk,
            "claimed_uncertainty": self.claimed_uncertainty,
            "reasoning": self.reasoning,
            "findings": [dict(f) for f in self.findings],
            "error": self.error,
        }


@dataclass(frozen=True)
class SampleBatch:
    """Outcome of one ensemble run: valid candidates plus failure records."""

    requested: int
    candidates: tuple[CandidatePolicy, ...]
    meta: tuple[SampleMeta, ...]

    @property
    def k_effective(self) -> int:
        return len(self.candidates)


class Judge(abc.ABC):
    """Produces one candidate policy per (prompt, sample_index) pair.

    Implementations must be safe for concurrent calls across requests.
    """

    @abc.abstractmethod
    def synthesize(self, prompt: PromptDocument, sample_index: int) -> CandidatePolicy:
        ...


class SampleError(Exception):
    """A single sample came back unusable; the batch may still succeed."""


class MockJudge(Judge):
    """Deterministic keyword-rule judge.

    Rules are a JSON list of objects: ``match`` (substring checked against
    the normalized goal), ``permissions`` ([[tool, transaction], ...]),
    optional ``perturbations`` keyed by zero-based sample index with
    ``add``/``remove`` pair lists, and optional ``claimed_risk``,
    ``claimed_uncertainty``, ``reasoning``. First matching rule wins; no
    match raises SynthesisFailed. Pure function of (prompt, index, rules).
    """

    def __init__(self, rules: Sequence[dict[str, Any]]):
        parsed = []
        for rule in rules:
            if "match" not in rule or "permissions" not in rule:
                raise InvalidRequest("mock judge rule needs 'match' and 'permissions'")
            perturbations = {}
            for key, spec in (rule.get("perturbations") or {}).items():
                perturbations[int(key)] = (
                    tuple((t, tx) for t, tx in spec.get("add", ())),
                    tuple((t, tx) for t, tx in spec.get("remove", ())),
                )
            parsed.append(
                (
                    str(rule["match"]).casefold(),
                    tuple((t, tx) for t, tx in rule["permissions"]),
                    perturbations,
                    rule.get("claimed_risk"),
                    rule.get("claimed_uncertainty"),
                    rule.get("reasoning"),
                )
            )
        self._rules = tuple(parsed)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockJudge":
        data = json.loads(Path(path).read_text("utf-8"))
        if not isinstance(data, list):
            raise InvalidRequest("mock judge rule file must be a JSON list")
        return cls(data)

    def synthesize(self, prompt: PromptDocument, sample_index: int) -> CandidatePolicy:
        goal = normalize_goal(prompt.goal)
        for match, permissions, perturbations, risk, uncertainty, reasoning in self._rules:
            if match in goal:
                pairs = set(permissions)
                if sample_index in perturbations:
                    add, remove = perturbations[sample_index]
                    pairs -= set(remove)
                    pairs |= set(add)
                return CandidatePolicy(
                    policy=Policy.of(pairs),
                    claimed_risk=risk,
                    claimed_uncertainty=uncertainty,
                    reasoning=reasoning,
                )
        raise SynthesisFailed(f"no mock rule matches goal: {goal!r}")


class RemoteJudge(Judge):
    """HTTP adapter: POSTs the prompt fields, expects one sample per response.

    Response body: ``{"permissions": [[tool, transaction], ...],
    "claimed_risk"?, "claimed_uncertainty"?, "reasoning"?}``. Transport
    failures are retried; exhaustion raises JudgeUnavailable. A malformed
    response body counts as a failed sample, not a batch failure.
    """

    def __init__(
        self,
        url: str,
        timeout: float = 30.0,
        retries: int = 2,
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self._client = client or httpx.Client(timeout=timeout)

    def synthesize(self, prompt: PromptDocument, sample_index: int) -> CandidatePolicy:
        body = {
            "goal": prompt.goal,
            "principles": list(prompt.principles),
            "manifest_digest": prompt.manifest_digest,
            "manifest_version": prompt.manifest_version,
            "sample_index": sample_index,
        }
        last_exc: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                response = self._client.post(self.url, json=body, timeout=self.timeout)
                response.raise_for_status()
                return self._parse(response.json())
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_exc = exc
        raise JudgeUnavailable(f"judge endpoint failed after retries: {last_exc}")

    @staticmethod
    def _parse(data: Any) -> CandidatePolicy:
        try:
            pairs = [(str(t), str(tx)) for t, tx in data["permissions"]]
            return CandidatePolicy(
                policy=Policy.of(pairs),
                claimed_risk=data.get("claimed_risk"),
                claimed_uncertainty=data.get("claimed_uncertainty"),
                reasoning=data.get("reasoning"),
            )
        except (KeyError, TypeError, ValueError, InvalidRequest) as exc:
            raise SampleError(f"malformed judge response: {exc}") from exc


def build_prompt(
    request: TaskRequest, manifest: ToolManifest, principles: Sequence[str]
) -> PromptDocument:
    """Render the risk-enriched prompt; tools in lexicographic id order."""
    lines = []
    for entry in sorted(manifest.tools.values(), key=lambda e: e.tool_id):
        tx = ", ".join(sorted(entry.transactions))
        lines.append(
            f"- {entry.tool_id} | risk {entry.risk} | {tx} | {entry.description}"
        )
    return PromptDocument(
        goal=request.goal,
        principles=tuple(principles),
        manifest_digest="\n".join(lines),
        manifest_version=manifest.version,
    )


def sample_policies(
    judge: Judge,
    prompt: PromptDocument,
    k: int,
    manifest: ToolManifest | None = None,
) -> SampleBatch:
    """Draw k candidate policies; validate each against the manifest if given.

    Invalid or malformed samples are excluded and recorded; if fewer than two
    usable samples remain the batch fails with SynthesisFailed (which carries
    the failure records). Adapter exhaustion propagates as JudgeUnavailable.
    """
    if k < 2:
        raise KTooSmall(k)
    candidates: list[CandidatePolicy] = []
    meta: list[SampleMeta] = []
    for index in range(k):
        try:
            candidate = judge.synthesize(prompt, index)
        except SampleError as exc:
            meta.append(SampleMeta(index=index, valid=False, error=str(exc)))
            continue
        findings: tuple = ()
        if manifest is not None:
            report = validate_policy(candidate.policy, manifest)
            if not report.valid:
                meta.append(
                    SampleMeta(
                        index=index,
                        valid=False,
                        permissions=tuple(candidate.policy.sorted_pairs()),
                        claimed_risk=candidate.claimed_risk,
                        claimed_uncertainty=candidate.claimed_uncertainty,
                        reasoning=candidate.reasoning,
                        findings=tuple(f.to_dict() for f in report.findings),
                    )
                )
                continue
        candidates.append(candidate)
        meta.append(
            SampleMeta(
                index=index,
                valid=True,
                permissions=tuple(candidate.policy.sorted_pairs()),
                claimed_risk=candidate.claimed_risk,
                claimed_uncertainty=candidate.claimed_uncertainty,
                reasoning=candidate.reasoning,
            )
        )
    if len(candidates) < 2:
        raise SynthesisFailed(
            f"only {len(candidates)} of {k} samples usable", failures=tuple(meta)
        )
    return SampleBatch(requested=k, candidates=tuple(candidates), meta=tuple(meta))


def jaccard_distance(a: Policy, b: Policy) -> float:
    """1 - |a∩b| / |a∪b| over permission pairs; two empty policies are at 0."""
    union = a.permissions | b.permissions
    if not union:
        return 0.0
    return 1.0 - len(a.permissions & b.permissions) / len(union)


def estimate_uncertainty(samples: Sequence[CandidatePolicy]) -> float:
    """Mean pairwise Jaccard distance over all unordered sample pairs."""
    n = len(samples)
    if n < 2:
        raise TooFewSamples(f"need >= 2 samples to measure disagreement, got {n}")
    distances = [
        jaccard_distance(samples[i].policy, samples[j].policy)
        for i in range(n)
        for j in range(i + 1, n)
    ]
    # fsum: correctly rounded regardless of pair order, so any permutation of
    # the samples yields the bit-identical result.
    return math.fsum(distances) / (n * (n - 1) / 2)


def select_policy(samples: Sequence[CandidatePolicy]) -> CandidatePolicy:
    """Medoid of the ensemble: minimal mean distance to the other samples.

    Ties break toward the fewest permissions (least privilege), then the
    lexicographically smallest serialized permission set, so the pick is
    invariant under any permutation of the samples.
    """
    if not samples:
        raise NoValidSamples("no valid samples to select from")

    def key(i: int):
        sample = samples[i]
        others = [samples[j] for j in range(len(samples)) if j != i]
        mean_distance = (
            math.fsum(jaccard_distance(sample.policy, o.policy) for o in others)
            / len(others)
            if others
            else 0.0
        )
        return (
            mean_distance,
            len(sample.policy),
            json.dumps(sample.policy.sorted_pairs()),
            json.dumps([sample.claimed_risk, sample.claimed_uncertainty, sample.reasoning]),
        )

    return samples[min(range(len(samples)), key=key)]


@dataclass(frozen=True)
class AuthorizationProposal:
    """Judge pipeline output retained in full for audit."""

    policy: Policy
    r_comp: float
    upsilon: float
    samples_meta: tuple[SampleMeta, ...]
    reasoning: str | None
    prompt: PromptDocument
    k_requested: int
    k_effective: int
    claimed_risk: float | None = None
    claimed_uncertainty: float | None = None


def judge_task(
    judge: Judge,
    request: TaskRequest,
    manifest: ToolManifest,
    *,
    k: int = 5,
    aggregator: Aggregator = Aggregator.MAX,
    principles: Sequence[str] = (),
) -> AuthorizationProposal:
    """Full synthesis pipeline: prompt, ensemble, consensus, risk, uncertainty.

    The composite risk is always recomputed from the manifest; any risk the
    judge claims is carried in samples_meta only. If every sample fails
    policy validation the result is PolicyInvalid so the caller can deny
    rather than retry.
    """
    prompt = build_prompt(request, manifest, principles)
    try:
        batch = sample_policies(judge, prompt, k, manifest=manifest)
    except SynthesisFailed as exc:
        failures = exc.failures
        if failures and all(not m.valid for m in failures):
            validation_failures = [m for m in failures if m.findings]
            if len(validation_failures) == len(failures):
                raise PolicyInvalid(
                    findings=validation_failures[0].findings,
                    samples_meta=tuple(failures),
                ) from exc
        raise
    selected = select_policy(batch.candidates)
    report = validate_policy(selected.policy, manifest)
    if not report.valid:
        raise PolicyInvalid(
            findings=tuple(f.to_dict() for f in report.findings),
            samples_meta=batch.meta,
        )
    r_comp = composite_risk(selected.policy, manifest, aggregator)
    upsilon = estimate_uncertainty(batch.candidates)
    return AuthorizationProposal(
        policy=selected.policy,
        r_comp=r_comp,
        upsilon=upsilon,
        samples_meta=batch.meta,
        reasoning=selected.reasoning,
        prompt=prompt,
        k_requested=k,
        k_effective=batch.k_effective,
        claimed_risk=selected.claimed_risk,
        claimed_uncertainty=selected.claimed_uncertainty,
    )
