from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stride.errors import PlanInvalid, PlanParseError, UnresolvedDependency
from stride.gateway import FunctionProvider, Gateway, Role, ScriptedProvider, ScriptRule
from stride.planner import Planner, instantiate, serialize_blueprint, validate_blueprint
from stride.prompts import PromptSet
from stride.types import Action, ExecutionState, Question, SolvedEntry, SubQuestion, parse_placeholders

LINCOLN = {
    "general_strategy": ["Identify the book the movie is based on", "Identify the author of that book"],
    "concrete_plan": [
        {"id": 1, "question": "What book was the movie Lincoln based on?", "depends_on": []},
        {"id": 2, "question": "Who wrote #1?", "depends_on": [1]},
    ],
}
Q = Question("q", "Who wrote the book the movie Lincoln is based on?", ("Doris Kearns Goodwin",))


def planner_for(*responses, use_strategy=True):
    calls = []
    it = iter(responses)

    def fn(req):
        calls.append(req)
        return next(it)

    return Planner(Gateway(FunctionProvider(fn)), PromptSet(), use_strategy), calls


def test_valid_two_step_blueprint():
    planner, calls = planner_for(json.dumps(LINCOLN))
    bp = planner.plan_one(Q)
    assert [s.description for s in bp.strategy] == LINCOLN["general_strategy"]
    assert bp.by_id(2).depends_on == frozenset({1})
    assert len(calls) == 1 and calls[0].role_tag is Role.PLANNER
    assert Q.text in calls[0].user_prompt


def test_forward_reference_is_invalid_after_reprompt():
    bad = {"general_strategy": ["x"], "concrete_plan": [{"id": 1, "question": "a?"}, {"id": 2, "question": "b #3?"}, {"id": 3, "question": "c?"}]}
    planner, calls = planner_for(json.dumps(bad), json.dumps(bad))
    with pytest.raises(PlanInvalid) as info:
        planner.plan_one(Q)
    assert any("forward reference" in v for v in info.value.violations)
    assert len(calls) == 2
    assert "forward reference" in calls[1].user_prompt


def test_reprompt_recovers():
    planner, calls = planner_for("Sure! Here is my plan: step one...", "```json\n" + json.dumps(LINCOLN) + "\n```")
    assert len(planner.plan_one(Q).plan) == 2
    assert len(calls) == 2


def test_unparseable_twice_raises():
    planner, _ = planner_for("no json here", "still none")
    with pytest.raises(PlanParseError):
        planner.plan_one(Q)


def test_eight_samples_eight_calls():
    planner, calls = planner_for(*[json.dumps(LINCOLN)] * 8)
    assert len(planner.plan(Q, sample_count=8)) == 8
    assert len(calls) == 8


def test_direct_mode_drops_strategy():
    planner, calls = planner_for(json.dumps(LINCOLN), use_strategy=False)
    bp = planner.plan_one(Q)
    assert bp.strategy == ()
    assert "general_strategy" not in calls[0].user_prompt


def test_validate_repairs_depends_on():
    report = validate_blueprint(
        {"general_strategy": ["s"], "concrete_plan": [{"id": 1, "question": "a?"}, {"id": 2, "question": "Who wrote #1?", "depends_on": []}]}
    )
    assert report.ok
    assert report.blueprint.by_id(2).depends_on == frozenset({1})
    assert report.warnings


@pytest.mark.parametrize(
    "candidate, fragment",
    [
        ({"general_strategy": ["s"], "concrete_plan": [{"id": 1, "question": "a?"}, {"id": 3, "question": "b?"}]}, "id gap"),
        ({"general_strategy": [], "concrete_plan": [{"id": 1, "question": "a?"}]}, "general_strategy is empty"),
        ({"general_strategy": ["s"], "concrete_plan": []}, "concrete_plan is empty"),
        ({"general_strategy": ["s"], "concrete_plan": [{"id": 1, "question": "a?"}, {"id": 1, "question": "b?"}]}, "duplicate"),
        ([1, 2], "JSON object"),
    ],
)
def test_validate_violations(candidate, fragment):
    report = validate_blueprint(candidate)
    assert not report.ok
    assert any(fragment in v for v in report.violations)


def test_serialize_roundtrips_through_validation():
    bp = validate_blueprint(LINCOLN).blueprint
    assert validate_blueprint(json.loads(serialize_blueprint(bp))).blueprint == bp


def entry(i, answer):
    return SolvedEntry(i, answer, (), "q", Action.RETRIEVE)


def test_instantiate():
    sq = SubQuestion(2, "Who wrote #1?", frozenset({1}))
    state = ExecutionState({1: entry(1, "Klara and the Sun")}, frozenset({2}))
    assert instantiate(sq, state) == "Who wrote Klara and the Sun?"
    both = SubQuestion(3, "Is #1 older than #2?", frozenset({1, 2}))
    state = ExecutionState({1: entry(1, "X"), 2: entry(2, "Y")}, frozenset({3}))
    assert instantiate(both, state) == "Is X older than Y?"
    with pytest.raises(UnresolvedDependency):
        instantiate(both, ExecutionState({1: entry(1, "X")}, frozenset({2, 3})))


junk = st.one_of(
    st.text(max_size=40),
    st.builds(json.dumps, st.dictionaries(st.sampled_from(["general_strategy", "concrete_plan", "x"]), st.lists(
        st.one_of(st.text(max_size=10), st.fixed_dictionaries({"id": st.integers(-1, 4), "question": st.sampled_from(["a?", "b #1?", "c #2 #3?", "", "#0"])})),
        max_size=4,
    ))),
)


@settings(max_examples=150, deadline=None)
@given(st.lists(junk, min_size=2, max_size=2))
def test_planner_never_returns_invalid_blueprint(replies):
    planner = Planner(Gateway(ScriptedProvider([ScriptRule(Role.PLANNER, ("previous reply",), replies[1]), ScriptRule(Role.PLANNER, (), replies[0])])), PromptSet())
    try:
        bp = planner.plan_one(Q)
    except (PlanInvalid, PlanParseError):
        return
    assert bp.strategy and bp.plan
    for sq in bp.plan:
        assert sq.depends_on == parse_placeholders(sq.template_text)
        assert all(d < sq.id for d in sq.depends_on)
    assert [sq.id for sq in bp.plan] == list(range(1, len(bp.plan) + 1))
