from __future__ import annotations

import json
from collections import Counter

import pytest

from fixtures import brute_force_pairs, reasoner_fixture, rewrite_fixture, sampled_plan_fixture
from stride import jsonl
from stride.errors import ValidationError
from stride.ftdata import (
    ModuleTag,
    PlanPreferencePair,
    SftExample,
    TrajectoryScore,
    build_extractor_examples,
    build_plan_pairs,
    build_reasoner_examples,
    filter_rewrite_examples,
    group_samples,
    is_verbose,
    plan_similarity,
    write_outputs,
)
from stride.gateway import FunctionProvider, Gateway, Role
from stride.types import (
    Action,
    Blueprint,
    Fact,
    IterationRecord,
    OutcomeKind,
    Question,
    ResolutionOutcome,
    SolvedEntry,
    StrategyStep,
    SubQuestion,
    Trajectory,
)


def bp(*texts):
    return Blueprint((StrategyStep(1, "s"),), tuple(SubQuestion(i, t) for i, t in enumerate(texts, 1)))


def traj(qid="q", correct=True, f1=None, sample=None, answer="gold"):
    q = Question(qid, "question", ("gold",))
    t = Trajectory(q, None, (), answer, False, planner_prompt="P", sample_index=sample)
    return t.with_metrics({"em": 1.0 if correct else 0.0, "f1": 1.0 if correct else (f1 or 0.0)})


def test_plan_similarity_examples():
    assert plan_similarity(bp("alpha beta"), bp("alpha beta")) == 1.0
    assert plan_similarity(bp("alpha beta"), bp("gamma delta")) == 0.0
    assert plan_similarity(bp("alpha beta"), bp("alpha gamma")) == pytest.approx(0.5)


def test_plan_pair_examples():
    # similarity 0.5 with correct vs incorrect
    a, b = bp("alpha beta"), bp("alpha gamma")
    pairs = build_plan_pairs("q", [(a, traj()), (b, traj(correct=False))])
    assert len(pairs) == 1 and "beta" in pairs[0].chosen and "gamma" in pairs[0].rejected
    assert pairs[0].prompt == "P"
    # both wrong, gap 0.2
    assert build_plan_pairs("q", [(a, traj(correct=False, f1=0.6)), (b, traj(correct=False, f1=0.4))]) == []
    # similarity 0.9
    c = bp("one two three four five six seven eight nine ten")
    d = bp("one two three four five six seven eight nine eleven")
    assert plan_similarity(c, d) == pytest.approx(0.9)
    assert build_plan_pairs("q", [(c, traj()), (d, traj(correct=False))]) == []


def test_plan_pairs_reject_mixed_questions():
    with pytest.raises(ValidationError):
        build_plan_pairs("q", [(bp("a b"), traj("other"))])


def test_plan_pairs_match_brute_force():
    groups = sampled_plan_fixture()
    assert sum(len(g) for g in groups.values()) == 40
    for qid, group in groups.items():
        got = Counter((p.prompt, p.chosen, p.rejected) for p in build_plan_pairs(qid, group))
        assert got == brute_force_pairs(group)


def test_plan_pairs_ordered_by_gap():
    a, b, c = bp("alpha beta"), bp("gamma delta"), bp("epsilon zeta")
    pairs = build_plan_pairs(
        "q", [(a, traj(correct=False, f1=0.5)), (b, traj()), (c, traj(correct=False, f1=0.0))]
    )
    assert [(("gamma" in p.chosen), ("epsilon" in p.rejected)) for p in pairs][0] == (True, True)
    assert len(pairs) == 3


def test_group_samples_orders_by_index():
    ts = [traj(sample=2), traj(sample=0), traj(sample=1), traj()]
    assert [t.sample_index for _, t in group_samples(ts)["q"]] == [0, 1, 2]


def test_trajectory_score():
    s = TrajectoryScore.of(traj())
    assert s.correct and s.f1 == 1.0 and not s.failure_flag
    with pytest.raises(ValidationError):
        TrajectoryScore(True, 1.5, 1, False)
    with pytest.raises(ValidationError):
        PlanPreferencePair("p", "x", "x")
    with pytest.raises(ValidationError):
        SftExample(ModuleTag.REASONER, "p", " ")


def test_rewrite_filter_keeps_only_causal_rewrites():
    examples = filter_rewrite_examples(rewrite_fixture())
    queries = [json.loads(e.completion)[0]["query"] for e in examples]
    assert sorted(queries) == ["good-1", "good-2", "good-3", "good-4"]
    assert all(e.module_tag is ModuleTag.SUPERVISOR_REWRITE and e.prompt.startswith("state at") for e in examples)
    assert json.loads(examples[0].completion) == [{"id": 1, "action": "rewrite", "query": "good-1"}]


def _extraction_traj(facts, correct=True):
    q = Question("x", "question", ("gold",))
    entry = SolvedEntry(1, "gold", tuple(facts), "who?", Action.RETRIEVE)
    out = ResolutionOutcome(1, OutcomeKind.SOLVED, entry=entry, query="who?", extractor_prompt="EXTRACT PROMPT")
    it = IterationRecord(1, {1}, (), (out,))
    return Trajectory(q, bp("who?"), (it,), "gold", False).with_metrics({"em": 1.0 if correct else 0.0})


FACTS = [Fact("Alpha wrote Beta.", "d1"), Fact("Beta is long.", "d2"), Fact("Gamma is red.", "d3")]


def selector(reply):
    calls = []

    def fn(req):
        calls.append(req)
        assert req.role_tag is Role.FACT_SELECTOR
        return reply

    return Gateway(FunctionProvider(fn)), calls


def test_extractor_subset_emitted():
    gw, calls = selector("1. Alpha wrote Beta. (doc d1)")
    out = build_extractor_examples([_extraction_traj(FACTS)], gw)
    assert len(out) == 1 and out[0].prompt == "EXTRACT PROMPT"
    assert out[0].completion == "1. Alpha wrote Beta. (doc d1)"
    assert "who?" in calls[0].user_prompt and "Gamma is red." in calls[0].user_prompt


def test_extractor_full_set_not_emitted():
    gw, _ = selector("\n".join(f"{i}. {f.text} (doc {f.source_doc_id})" for i, f in enumerate(FACTS, 1)))
    assert build_extractor_examples([_extraction_traj(FACTS)], gw) == []


def test_extractor_single_fact_skipped():
    gw, calls = selector("1. Alpha wrote Beta. (doc d1)")
    assert build_extractor_examples([_extraction_traj(FACTS[:1])], gw) == []
    assert calls == []


def test_extractor_non_subset_dropped(caplog):
    gw, _ = selector("1. Something invented. (doc d9)")
    assert build_extractor_examples([_extraction_traj(FACTS)], gw) == []
    assert "outside the candidates" in caplog.text


def test_extractor_ignores_wrong_answers():
    gw, calls = selector("1. Alpha wrote Beta. (doc d1)")
    assert build_extractor_examples([_extraction_traj(FACTS, correct=False)], gw) == []
    assert calls == []


def test_verbose_examples():
    assert is_verbose("The answer is Paris, France", ["Paris"])
    assert not is_verbose("Paris", ["Paris"])
    assert not is_verbose("London", ["Paris"])


@pytest.mark.parametrize("verbose,exact", [(3, 10), (3, 6), (3, 4), (0, 5), (5, 0)])
def test_reasoner_balance(verbose, exact):
    trajs = reasoner_fixture(verbose=verbose, exact=exact)
    out = build_reasoner_examples(trajs, rng_seed=3)
    retargeted = [e for e in out if e.completion == "Answer: Paris"]
    assert len(retargeted) == verbose
    assert len(out) - verbose == min(2 * verbose, exact)
    assert all("London" not in e.completion for e in out)
    assert out == build_reasoner_examples(trajs, rng_seed=3)


def test_write_outputs_appends(tmp_path):
    pairs = [PlanPreferencePair("p", "a", "b")]
    sft = [SftExample(ModuleTag.REASONER, "p", "Answer: x")]
    m1 = write_outputs(tmp_path, pairs, [], [], sft)
    write_outputs(tmp_path, pairs, [], [], [])
    assert m1["counts"] == {"plan_pairs": 1, "supervisor": 0, "extractor": 0, "reasoner": 1}
    assert list(jsonl.read(tmp_path / "plan_dpo.jsonl")) == [{"prompt": "p", "chosen": "a", "rejected": "b"}] * 2
    assert list(jsonl.read(tmp_path / "reasoner_sft.jsonl")) == [{"prompt": "p", "completion": "Answer: x"}]
    assert len(list(jsonl.read(tmp_path / "manifest.jsonl"))) == 2
