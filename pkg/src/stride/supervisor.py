"""Control layer: ready-set computation and per-sub-question directives.

The model is asked first; whatever it returns is filtered through
:func:`validate_directives`, and any ready id left without a usable directive
is filled by :func:`deterministic_policy` so the loop always progresses.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .errors import RewriteExhausted, ValidationError
from .gateway import Gateway, Role, UsageMeter
from .parsing import find_json
from .planner import instantiate
from .prompts import PromptSet
from .types import (
    Action,
    Blueprint,
    Directive,
    ExecutionState,
    Question,
    SubQuestion,
    normalize_query,
    parse_placeholders,
    substitute_placeholders,
)

logger = logging.getLogger(__name__)

REASONING_KEYWORDS = ("older", "both", "same", "which of")
_KEYWORD_RE = re.compile(r"\b(" + "|".join(re.escape(k) for k in REASONING_KEYWORDS) + r")\b", re.IGNORECASE)
REWRITE_PREFIX = "facts about: "


def ready_set(plan: Sequence[SubQuestion], state: ExecutionState) -> set[int]:
    solved = state.solved.keys()
    return {sq.id for sq in plan if sq.id in state.pending and sq.depends_on <= solved}


def is_reasoning_step(sq: SubQuestion) -> bool:
    """Built only from earlier answers and phrased as a comparison/intersection."""
    return bool(sq.depends_on) and _KEYWORD_RE.search(sq.template_text) is not None


def mechanical_rewrite(sq: SubQuestion, state: ExecutionState) -> str:
    """A reformulated query not yet in the failed list for ``sq``."""
    text = instantiate(sq, state)
    failed = {normalize_query(q) for q in state.failed_for(sq.id)}
    dep_answers = " ".join(state.solved[d].answer for d in sorted(sq.depends_on))
    appended = f"{text} {dep_answers}" if dep_answers else text
    for candidate in (appended, REWRITE_PREFIX + appended):
        if normalize_query(candidate) not in failed:
            return candidate
    raise RewriteExhausted(f"no fresh reformulation left for sub-question {sq.id}")


def deterministic_policy(plan: Sequence[SubQuestion], state: ExecutionState) -> list[Directive]:
    out = []
    for sq_id in sorted(ready_set(plan, state)):
        sq = plan[sq_id - 1]
        text = instantiate(sq, state)
        if is_reasoning_step(sq):
            out.append(Directive(sq_id, Action.ANSWER, text))
        elif not state.failed_for(sq_id):
            out.append(Directive(sq_id, Action.RETRIEVE, text))
        else:
            try:
                out.append(Directive(sq_id, Action.REWRITE, mechanical_rewrite(sq, state)))
            except RewriteExhausted as exc:
                logger.info("%s; skipping this iteration", exc)
    return out


def sequential_policy(plan: Sequence[SubQuestion], state: ExecutionState) -> list[Directive]:
    """Fixed-order baseline: the lowest pending id, always retrieved."""
    if not state.pending:
        return []
    sq = plan[min(state.pending) - 1]
    return [Directive(sq.id, Action.RETRIEVE, instantiate(sq, state))]


def validate_directives(
    directives: Iterable[Directive | Mapping[str, Any]],
    plan: Sequence[SubQuestion],
    state: ExecutionState,
) -> tuple[list[Directive], list[str]]:
    """Filter directives against the scheduling rules.

    Returns the accepted directives (first one per id wins) and a list of
    human-readable violations for everything dropped or coerced.
    """
    ready = ready_set(plan, state)
    accepted: dict[int, Directive] = {}
    violations: list[str] = []
    answers = state.answers()
    for raw in directives:
        if isinstance(raw, Directive):
            sq_id, action, query = raw.sub_question_id, raw.action.value, raw.query
        else:
            sq_id, action, query = raw.get("id"), raw.get("action"), raw.get("query")
        try:
            sq_id = int(sq_id)  # type: ignore[arg-type]
            action = Action(str(action).strip().lower())
        except (TypeError, ValueError):
            violations.append(f"malformed directive {raw!r}")
            continue
        if sq_id not in ready:
            violations.append(f"directive for non-ready id {sq_id} dropped")
            continue
        if sq_id in accepted:
            violations.append(f"duplicate directive for id {sq_id} dropped")
            continue
        if not isinstance(query, str) or not query.strip():
            violations.append(f"empty query for id {sq_id}")
            continue
        query = substitute_placeholders(query.strip(), answers)
        if parse_placeholders(query):
            violations.append(f"query for id {sq_id} has unresolved placeholders")
            continue
        failed = {normalize_query(q) for q in state.failed_for(sq_id)}
        fresh = normalize_query(query) not in failed
        if action is Action.RETRIEVE and failed:
            if not fresh:
                violations.append(f"retrieve for id {sq_id} repeats a failed query")
                continue
            violations.append(f"retrieve for id {sq_id} coerced to rewrite")
            action = Action.REWRITE
        elif action is Action.REWRITE and not fresh:
            violations.append(f"rewrite for id {sq_id} repeats a failed query")
            continue
        accepted[sq_id] = Directive(sq_id, action, query)
    return list(accepted.values()), violations


def state_payload(question: Question, blueprint: Blueprint, state: ExecutionState) -> dict[str, Any]:
    return {
        "question": question.text,
        "plan": [
            {"id": sq.id, "question": sq.template_text, "depends_on": sorted(sq.depends_on)}
            for sq in blueprint.plan
        ],
        "solved": [
            {"id": k, "question": blueprint.by_id(k).template_text, "answer": state.solved[k].answer}
            for k in sorted(state.solved)
        ],
        "pending": sorted(state.pending),
        "ready": sorted(ready_set(blueprint.plan, state)),
        "failed": {str(k): list(v) for k, v in sorted(state.failed.items()) if v},
    }


@dataclass
class Decision:
    directives: list[Directive]
    source: str
    prompt: str | None = None
    violations: list[str] = field(default_factory=list)


class Supervisor:
    def __init__(self, gateway: Gateway, prompts: PromptSet):
        self.gateway = gateway
        self.prompts = prompts

    def prompt_for(self, question: Question, blueprint: Blueprint, state: ExecutionState) -> tuple[str, str]:
        payload = json.dumps(state_payload(question, blueprint, state), ensure_ascii=False, indent=1)
        return self.prompts.render("supervisor", question=question.text, state_json=payload)

    def _ask(self, system: str, user: str, meter: UsageMeter | None) -> list[Any] | None:
        text = self.gateway.complete(Role.SUPERVISOR, system, user, meter).text
        try:
            return find_json(text, list)
        except ValueError:
            return None

    def decide(
        self,
        question: Question,
        blueprint: Blueprint,
        state: ExecutionState,
        meter: UsageMeter | None = None,
    ) -> Decision:
        plan = blueprint.plan
        ready = ready_set(plan, state)
        if not ready:
            raise ValidationError("decide called with an empty ready set")
        system, user = self.prompt_for(question, blueprint, state)
        raw = self._ask(system, user, meter)
        violations: list[str] = []
        if raw is None:
            violations.append("supervisor output unparseable; re-prompting")
            raw = self._ask(
                system,
                user + "\n\nYour previous reply was not a JSON list. Reply with only the JSON list.",
                meter,
            )
        if raw is None:
            violations.append("supervisor output unparseable twice; using deterministic policy")
            return Decision(deterministic_policy(plan, state), "policy", user, violations)

        items = [r for r in raw if isinstance(r, Mapping)]
        if len(items) != len(raw):
            violations.append("non-object entries in supervisor output ignored")
        accepted, found = validate_directives(items, plan, state)
        violations.extend(found)
        covered = {d.sub_question_id for d in accepted}
        source = "model"
        if covered != ready:
            fill = [d for d in deterministic_policy(plan, state) if d.sub_question_id not in covered]
            if fill:
                violations.append(f"ids {sorted(d.sub_question_id for d in fill)} filled by deterministic policy")
                source = "mixed" if accepted else "policy"
            accepted.extend(fill)
        accepted.sort(key=lambda d: d.sub_question_id)
        return Decision(accepted, source, user, violations)
