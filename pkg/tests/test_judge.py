"""Tests for prompts, mock/remote judges, ensemble disagreement, and medoid pick."""

from __future__ import annotations

import random
from fractions import Fraction
from itertools import combinations

import httpx
import pytest

from tbac import (
    CandidatePolicy,
    MockJudge,
    Policy,
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
from tbac.errors import (
    JudgeUnavailable,
    KTooSmall,
    NoValidSamples,
    PolicyInvalid,
    SynthesisFailed,
    TooFewSamples,
)

from conftest import (
    BACKUP_EXECUTE,
    CRM_READ,
    FIREWALL_WRITE,
    INCIDENT_GOAL,
    LEADS_GOAL,
    MOCK_RULES,
    SLACK_WRITE,
)


def oracle_upsilon(policies) -> Fraction:
    """Exact mean pairwise Jaccard distance, computed with rationals."""

    def distance(a, b):
        union = a | b
        if not union:
            return Fraction(0)
        return 1 - Fraction(len(a & b), len(union))

    pairs = list(combinations(policies, 2))
    return sum(distance(a, b) for a, b in pairs) / len(pairs)


def request(goal: str) -> TaskRequest:
    return TaskRequest(task_id="t-000001", agent_id="agent-1", goal=goal, submitted_at=0.0)


class TestNormalizeGoal:
    def test_stated_rules(self):
        assert normalize_goal("  Read The Daily  leads ") == "read the daily leads"

    def test_idempotent(self):
        assert normalize_goal("read the daily leads") == "read the daily leads"

    def test_whitespace_classes(self):
        assert normalize_goal("A\t\nB") == "a b"


class TestBuildPrompt:
    def test_digest_lists_all_four_tools_with_risks(self, manifest):
        doc = build_prompt(request(LEADS_GOAL), manifest, ["Always prefer read-only access."])
        for tool_id, risk in [
            ("networkAPI.updateFirewallRule", "9.5"),
            ("dbAPI.restoreFromBackup", "7.0"),
            ("crmAPI.readLeads", "3.0"),
            ("slackAPI.postMessage", "2.0"),
        ]:
            assert doc.manifest_digest.count(tool_id) == 1
            assert f"{tool_id} | risk {risk}" in doc.manifest_digest

    def test_lexicographic_tool_order(self, manifest):
        doc = build_prompt(request(LEADS_GOAL), manifest, [])
        lines = doc.manifest_digest.splitlines()
        ids = [line.split(" | ")[0].removeprefix("- ") for line in lines]
        assert ids == sorted(ids)
        assert len(ids) == 4

    def test_empty_principles_still_valid(self, manifest):
        doc = build_prompt(request(LEADS_GOAL), manifest, [])
        assert doc.principles == ()
        assert doc.render()

    def test_deterministic(self, manifest):
        a = build_prompt(request(LEADS_GOAL), manifest, ["p1", "p2"])
        b = build_prompt(request(LEADS_GOAL), manifest, ["p1", "p2"])
        assert a == b
        assert a.render() == b.render()

    def test_version_carried(self, manifest):
        assert build_prompt(request(LEADS_GOAL), manifest, []).manifest_version == "2026-08-01"


class TestTaskRequest:
    def test_blank_goal_rejected(self):
        from tbac.errors import InvalidRequest

        with pytest.raises(InvalidRequest):
            TaskRequest(task_id="t", agent_id="a", goal="   \t", submitted_at=0.0)


class TestMockJudge:
    def test_static_rule_five_identical(self, manifest, mock_judge):
        prompt = build_prompt(request(LEADS_GOAL), manifest, [])
        batch = sample_policies(mock_judge, prompt, 5, manifest)
        assert batch.k_effective == 5
        assert len({c.policy for c in batch.candidates}) == 1
        assert batch.candidates[0].policy == Policy.of([CRM_READ, SLACK_WRITE])

    def test_perturbation_adds_at_one_index(self, manifest):
        judge = MockJudge(
            [
                {
                    "match": "daily new leads",
                    "permissions": [list(CRM_READ)],
                    "perturbations": {"2": {"add": [list(FIREWALL_WRITE)]}},
                }
            ]
        )
        prompt = build_prompt(request(LEADS_GOAL), manifest, [])
        batch = sample_policies(judge, prompt, 3, manifest)
        assert batch.candidates[0].policy == batch.candidates[1].policy
        assert batch.candidates[2].policy.permissions > batch.candidates[0].policy.permissions

    def test_no_match_raises_synthesis_failed(self, manifest, mock_judge):
        prompt = build_prompt(request("polish the chrome"), manifest, [])
        with pytest.raises(SynthesisFailed):
            mock_judge.synthesize(prompt, 0)

    def test_first_matching_rule_wins(self, manifest):
        judge = MockJudge(
            [
                {"match": "leads", "permissions": [list(CRM_READ)]},
                {"match": "leads", "permissions": [list(SLACK_WRITE)]},
            ]
        )
        prompt = build_prompt(request(LEADS_GOAL), manifest, [])
        assert judge.synthesize(prompt, 0).policy == Policy.of([CRM_READ])

    def test_from_file(self, tmp_path, manifest):
        import json

        path = tmp_path / "rules.json"
        path.write_text(json.dumps(MOCK_RULES))
        judge = MockJudge.from_file(path)
        prompt = build_prompt(request(LEADS_GOAL), manifest, [])
        assert judge.synthesize(prompt, 0).policy == Policy.of([CRM_READ, SLACK_WRITE])

    def test_self_reports_carried(self, manifest, mock_judge):
        prompt = build_prompt(request(LEADS_GOAL), manifest, [])
        candidate = mock_judge.synthesize(prompt, 0)
        assert candidate.claimed_risk == 3.0
        assert candidate.claimed_uncertainty == 0.10


class TestSamplePolicies:
    def test_k_too_small(self, manifest, mock_judge):
        prompt = build_prompt(request(LEADS_GOAL), manifest, [])
        with pytest.raises(KTooSmall):
            sample_policies(mock_judge, prompt, 1, manifest)

    def test_invalid_samples_shrink_batch(self, manifest):
        judge = MockJudge(
            [
                {
                    "match": "daily new leads",
                    "permissions": [list(CRM_READ)],
                    "perturbations": {
                        "1": {"add": [["ghostAPI.launch", "execute"]]},
                    },
                }
            ]
        )
        prompt = build_prompt(request(LEADS_GOAL), manifest, [])
        batch = sample_policies(judge, prompt, 4, manifest)
        assert batch.k_effective == 3
        failed = [m for m in batch.meta if not m.valid]
        assert len(failed) == 1 and failed[0].index == 1
        assert failed[0].findings[0]["kind"] == "unknown_tool"

    def test_all_invalid_raises_synthesis_failed(self, manifest):
        judge = MockJudge(
            [{"match": "daily new leads", "permissions": [["ghostAPI.launch", "execute"]]}]
        )
        prompt = build_prompt(request(LEADS_GOAL), manifest, [])
        with pytest.raises(SynthesisFailed) as err:
            sample_policies(judge, prompt, 3, manifest)
        assert len(err.value.failures) == 3

    def test_without_manifest_no_validation(self, manifest):
        judge = MockJudge(
            [{"match": "daily new leads", "permissions": [["ghostAPI.launch", "execute"]]}]
        )
        prompt = build_prompt(request(LEADS_GOAL), manifest, [])
        batch = sample_policies(judge, prompt, 2)
        assert batch.k_effective == 2


class TestRemoteJudge:
    def _prompt(self, manifest):
        return build_prompt(request(LEADS_GOAL), manifest, ["p"])

    def test_parses_sample(self, manifest):
        def handler(req: httpx.Request) -> httpx.Response:
            import json

            body = json.loads(req.content)
            assert body["goal"] == LEADS_GOAL
            assert body["sample_index"] == 3
            assert body["manifest_version"] == "2026-08-01"
            return httpx.Response(
                200,
                json={
                    "permissions": [list(CRM_READ)],
                    "claimed_uncertainty": 0.2,
                    "reasoning": "ok",
                },
            )

        judge = RemoteJudge("http://judge.test/v1", client=httpx.Client(transport=httpx.MockTransport(handler)))
        candidate = judge.synthesize(self._prompt(manifest), 3)
        assert candidate.policy == Policy.of([CRM_READ])
        assert candidate.claimed_uncertainty == 0.2

    def test_retries_then_succeeds(self, manifest):
        calls = {"n": 0}

        def handler(req: httpx.Request) -> httpx.Response:
            calls["n"] += 1
            if calls["n"] == 1:
                raise httpx.ConnectError("boom")
            return httpx.Response(200, json={"permissions": [list(CRM_READ)]})

        judge = RemoteJudge(
            "http://judge.test/v1",
            retries=2,
            client=httpx.Client(transport=httpx.MockTransport(handler)),
        )
        assert judge.synthesize(self._prompt(manifest), 0).policy == Policy.of([CRM_READ])
        assert calls["n"] == 2

    def test_unavailable_after_retries(self, manifest):
        def handler(req: httpx.Request) -> httpx.Response:
            raise httpx.ConnectError("down")

        judge = RemoteJudge(
            "http://judge.test/v1",
            retries=1,
            client=httpx.Client(transport=httpx.MockTransport(handler)),
        )
        with pytest.raises(JudgeUnavailable):
            judge.synthesize(self._prompt(manifest), 0)

    def test_malformed_response_is_failed_sample(self, manifest):
        def handler(req: httpx.Request) -> httpx.Response:
            import json

            index = json.loads(req.content)["sample_index"]
            if index == 1:
                return httpx.Response(200, json={"nope": True})
            return httpx.Response(200, json={"permissions": [list(CRM_READ)]})

        judge = RemoteJudge(
            "http://judge.test/v1",
            client=httpx.Client(transport=httpx.MockTransport(handler)),
        )
        batch = sample_policies(judge, self._prompt(manifest), 3, manifest)
        assert batch.k_effective == 2
        assert [m.index for m in batch.meta if not m.valid] == [1]


def cand(*pairs) -> CandidatePolicy:
    return CandidatePolicy(policy=Policy.of(pairs))


class TestJaccardDistance:
    def test_identical_nonempty(self):
        assert jaccard_distance(Policy.of([CRM_READ]), Policy.of([CRM_READ])) == 0.0

    def test_disjoint(self):
        assert jaccard_distance(Policy.of([CRM_READ]), Policy.of([SLACK_WRITE])) == 1.0

    def test_half_overlap(self):
        a = Policy.of([("db", "read")])
        b = Policy.of([("db", "read"), ("fw", "write")])
        assert jaccard_distance(a, b) == 0.5

    def test_both_empty(self):
        assert jaccard_distance(Policy.of([]), Policy.of([])) == 0.0

    def test_symmetric_and_bounded(self):
        rng = random.Random(3)
        pool = [(f"tool{i}", tx) for i in range(4) for tx in ("read", "write")]
        for _ in range(200):
            a = Policy.of(rng.sample(pool, rng.randint(0, len(pool))))
            b = Policy.of(rng.sample(pool, rng.randint(0, len(pool))))
            d = jaccard_distance(a, b)
            assert d == jaccard_distance(b, a)
            assert 0.0 <= d <= 1.0


class TestEstimateUncertainty:
    def test_identical_five(self):
        assert estimate_uncertainty([cand(CRM_READ)] * 5) == 0.0

    def test_two_disjoint(self):
        assert estimate_uncertainty([cand(CRM_READ), cand(SLACK_WRITE)]) == 1.0

    def test_three_sample_fixture_third(self):
        s1 = cand(("db", "read"))
        s2 = cand(("db", "read"))
        s3 = cand(("db", "read"), ("fw", "write"))
        expected = oracle_upsilon(
            [s.policy.permissions for s in (s1, s2, s3)]
        )
        assert expected == Fraction(1, 3)
        assert estimate_uncertainty([s1, s2, s3]) == pytest.approx(float(expected), abs=1e-9)

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            estimate_uncertainty([cand(CRM_READ)])

    def test_permutation_invariance(self):
        rng = random.Random(5)
        pool = [(f"t{i}", "read") for i in range(5)]
        samples = [
            cand(*rng.sample(pool, rng.randint(0, len(pool)))) for _ in range(6)
        ]
        base = estimate_uncertainty(samples)
        for _ in range(50):
            shuffled = samples[:]
            rng.shuffle(shuffled)
            assert estimate_uncertainty(shuffled) == pytest.approx(base, abs=1e-12)

    def test_zero_iff_all_equal(self):
        rng = random.Random(9)
        pool = [(f"t{i}", tx) for i in range(3) for tx in ("read", "write")]
        for _ in range(200):
            samples = [
                cand(*rng.sample(pool, rng.randint(0, 3))) for _ in range(rng.randint(2, 5))
            ]
            u = estimate_uncertainty(samples)
            all_equal = len({s.policy for s in samples}) == 1
            assert (u == 0.0) == all_equal
            assert 0.0 <= u <= 1.0

    def test_matches_rational_oracle(self):
        rng = random.Random(21)
        pool = [(f"t{i}", tx) for i in range(4) for tx in ("read", "write", "execute")]
        for _ in range(100):
            samples = [
                cand(*rng.sample(pool, rng.randint(0, 5))) for _ in range(rng.randint(2, 6))
            ]
            expected = oracle_upsilon([s.policy.permissions for s in samples])
            assert estimate_uncertainty(samples) == pytest.approx(float(expected), abs=1e-12)


class TestSelectPolicy:
    def test_medoid_from_fixture(self):
        s1 = cand(("db", "read"))
        s2 = cand(("db", "read"))
        s3 = cand(("db", "read"), ("fw", "write"))
        # s1 mean distance 0.25 vs s3's 0.5 (hand-enumerated)
        assert select_policy([s1, s2, s3]).policy == s1.policy

    def test_single_sample(self):
        only = cand(CRM_READ)
        assert select_policy([only]) is only

    def test_least_privilege_tie_break(self):
        small = cand(("a", "read"))
        big = cand(("b", "read"), ("c", "read"))
        # disjoint, so both are equidistant; the 1-permission one wins
        assert select_policy([small, big]) is select_policy([big, small])
        assert select_policy([small, big]).policy == small.policy

    def test_lexicographic_final_tie_break(self):
        a = cand(("a", "read"))
        b = cand(("b", "read"))
        assert select_policy([a, b]).policy == a.policy
        assert select_policy([b, a]).policy == a.policy

    def test_empty_raises(self):
        with pytest.raises(NoValidSamples):
            select_policy([])

    def test_output_is_an_input_and_permutation_invariant(self):
        rng = random.Random(31)
        pool = [(f"t{i}", tx) for i in range(4) for tx in ("read", "write")]
        for _ in range(100):
            samples = [
                cand(*rng.sample(pool, rng.randint(0, 4))) for _ in range(rng.randint(1, 6))
            ]
            chosen = select_policy(samples)
            assert chosen in samples
            shuffled = samples[:]
            rng.shuffle(shuffled)
            assert select_policy(shuffled).policy == chosen.policy

    def test_medoid_minimizes_mean_distance_oracle(self):
        rng = random.Random(41)
        pool = [(f"t{i}", tx) for i in range(4) for tx in ("read", "write")]
        for _ in range(100):
            samples = [
                cand(*rng.sample(pool, rng.randint(0, 4))) for _ in range(rng.randint(2, 6))
            ]
            chosen = select_policy(samples)

            def mean_d(index):
                others = [s for j, s in enumerate(samples) if j != index]
                return sum(
                    jaccard_distance(samples[index].policy, o.policy) for o in others
                ) / len(others)

            best = min(mean_d(i) for i in range(len(samples)))
            chosen_index = samples.index(chosen)
            assert mean_d(chosen_index) == pytest.approx(best, abs=1e-12)


class TestJudgeTask:
    def test_leads_use_case(self, manifest, mock_judge):
        proposal = judge_task(mock_judge, request(LEADS_GOAL), manifest, k=5)
        assert proposal.policy == Policy.of([CRM_READ, SLACK_WRITE])
        assert proposal.r_comp == 3.0
        assert proposal.upsilon == 0.0
        assert proposal.k_effective == 5
        # self-reported uncertainty is recorded, never used as upsilon
        assert proposal.claimed_uncertainty == 0.10

    def test_incident_ensemble_disagreement(self, manifest, mock_judge):
        proposal = judge_task(mock_judge, request(INCIDENT_GOAL), manifest, k=5)
        assert proposal.policy == Policy.of([FIREWALL_WRITE, BACKUP_EXECUTE])
        assert proposal.r_comp == 9.5
        assert proposal.upsilon == 0.75

    def test_three_of_five_split_upsilon(self, manifest):
        judge = MockJudge(
            [
                {
                    "match": "daily new leads",
                    "permissions": [list(CRM_READ)],
                    "perturbations": {
                        str(i): {"add": [list(FIREWALL_WRITE)]} for i in range(3)
                    },
                }
            ]
        )
        proposal = judge_task(judge, request(LEADS_GOAL), manifest, k=5)
        # 6 discordant pairs at distance 0.5 over 10 pairs
        sets = [frozenset([CRM_READ, FIREWALL_WRITE])] * 3 + [frozenset([CRM_READ])] * 2
        assert oracle_upsilon(sets) == Fraction(3, 10)
        assert proposal.upsilon == pytest.approx(0.3, abs=1e-9)

    def test_unknown_tool_in_all_samples_policy_invalid(self, manifest):
        judge = MockJudge(
            [{"match": "daily new leads", "permissions": [["ghostAPI.launch", "execute"]]}]
        )
        with pytest.raises(PolicyInvalid) as err:
            judge_task(judge, request(LEADS_GOAL), manifest, k=5)
        assert err.value.findings[0]["kind"] == "unknown_tool"
        assert len(err.value.samples_meta) == 5

    def test_r_comp_ignores_claimed_risk(self, manifest):
        judge = MockJudge(
            [
                {
                    "match": "daily new leads",
                    "permissions": [list(CRM_READ)],
                    "claimed_risk": 9.9,
                }
            ]
        )
        proposal = judge_task(judge, request(LEADS_GOAL), manifest, k=5)
        assert proposal.r_comp == 3.0
        assert proposal.claimed_risk == 9.9

    def test_reproducible(self, manifest, mock_judge):
        a = judge_task(mock_judge, request(INCIDENT_GOAL), manifest, k=5)
        b = judge_task(mock_judge, request(INCIDENT_GOAL), manifest, k=5)
        assert a == b

    def test_samples_retained_for_audit(self, manifest, mock_judge):
        proposal = judge_task(mock_judge, request(INCIDENT_GOAL), manifest, k=5)
        assert len(proposal.samples_meta) == 5
        assert all(m.valid for m in proposal.samples_meta)
        assert proposal.prompt.manifest_version == "2026-08-01"
