"""Strategy layer: prompt for a two-level blueprint, parse and validate it."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import PlanInvalid, PlanParseError, UnresolvedDependency, ValidationError
from .gateway import Gateway, Role, UsageMeter
from .parsing import find_json
from .prompts import PromptSet
from .types import (
    Blueprint,
    ExecutionState,
    Question,
    StrategyStep,
    SubQuestion,
    parse_placeholders,
    substitute_placeholders,
)

logger = logging.getLogger(__name__)


@dataclass
class BlueprintReport:
    blueprint: Blueprint | None
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.blueprint is not None


def _as_int(value: Any) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value.strip().lstrip("#").isdigit():
        return int(value.strip().lstrip("#"))
    return None


def validate_blueprint(candidate: Any, require_strategy: bool = True) -> BlueprintReport:
    """Check a decoded planner payload; repair depends_on from placeholders.

    Never raises: problems come back as ``violations``.
    """
    report = BlueprintReport(None)
    if not isinstance(candidate, Mapping):
        report.violations.append("plan output must be a JSON object")
        return report

    steps: list[StrategyStep] = []
    raw_strategy = candidate.get("general_strategy", candidate.get("strategy", []))
    if require_strategy:
        if not isinstance(raw_strategy, list) or not raw_strategy:
            report.violations.append("general_strategy is empty")
        else:
            for i, item in enumerate(raw_strategy, 1):
                text = item.get("description", "") if isinstance(item, Mapping) else item
                if not isinstance(text, str) or not text.strip():
                    report.violations.append(f"strategy step {i} is empty")
                else:
                    steps.append(StrategyStep(i, text.strip()))

    raw_plan = candidate.get("concrete_plan", candidate.get("plan"))
    if not isinstance(raw_plan, list) or not raw_plan:
        report.violations.append("concrete_plan is empty")
        return report

    items: list[tuple[int, str, set[int] | None]] = []
    for pos, item in enumerate(raw_plan, 1):
        if not isinstance(item, Mapping):
            report.violations.append(f"plan entry {pos} is not an object")
            continue
        sq_id = _as_int(item.get("id"))
        text = item.get("question", item.get("template_text"))
        if sq_id is None:
            report.violations.append(f"plan entry {pos} has no integer id")
            continue
        if not isinstance(text, str) or not text.strip():
            report.violations.append(f"sub-question {sq_id} has empty text")
            continue
        raw_deps = item.get("depends_on")
        deps = None
        if isinstance(raw_deps, list):
            deps = {d for d in (_as_int(x) for x in raw_deps) if d is not None}
        items.append((sq_id, text.strip(), deps))

    ids = sorted(i for i, _, _ in items)
    if len(set(ids)) != len(ids):
        report.violations.append("duplicate sub-question id")
    elif ids and ids != list(range(1, len(ids) + 1)):
        report.violations.append(f"id gap: ids {ids} are not 1..{len(ids)}")

    plan: list[SubQuestion] = []
    for sq_id, text, declared in sorted(items):
        parsed = parse_placeholders(text, report.warnings)
        if declared is not None and declared != parsed:
            report.warnings.append(
                f"sub-question {sq_id}: depends_on {sorted(declared)} repaired to {sorted(parsed)}"
            )
        forward = sorted(d for d in parsed if d >= sq_id)
        if forward:
            report.violations.append(f"sub-question {sq_id} has forward reference to {forward}")
            continue
        try:
            plan.append(SubQuestion(sq_id, text, frozenset(parsed)))
        except ValidationError as exc:
            report.violations.append(f"sub-question {sq_id}: {exc}")

    if report.violations:
        return report
    try:
        report.blueprint = Blueprint(tuple(steps), tuple(plan))
    except ValidationError as exc:
        report.violations.append(str(exc))
    for w in report.warnings:
        logger.warning(w)
    return report


def serialize_blueprint(bp: Blueprint) -> str:
    """Canonical planner-output text for a blueprint."""
    payload: dict[str, Any] = {}
    if bp.strategy:
        payload["general_strategy"] = [s.description for s in bp.strategy]
    payload["concrete_plan"] = [
        {"id": sq.id, "question": sq.template_text, "depends_on": sorted(sq.depends_on)} for sq in bp.plan
    ]
    return json.dumps(payload, ensure_ascii=False)


def instantiate(sub_question: SubQuestion, state: ExecutionState) -> str:
    """Substitute every ``#k`` with the answer recorded for sub-question k."""
    missing = sorted(d for d in sub_question.depends_on if d not in state.solved)
    if missing:
        raise UnresolvedDependency(f"sub-question {sub_question.id} waits on {missing}")
    return substitute_placeholders(sub_question.template_text, state.answers())


class Planner:
    def __init__(self, gateway: Gateway, prompts: PromptSet, use_strategy: bool = True):
        self.gateway = gateway
        self.prompts = prompts
        self.use_strategy = use_strategy

    def prompt_for(self, question: Question) -> tuple[str, str]:
        name = "planner" if self.use_strategy else "planner_direct"
        return self.prompts.render(name, question=question.text)

    def _attempt(self, system: str, user: str, meter: UsageMeter | None) -> tuple[BlueprintReport | None, str]:
        text = self.gateway.complete(Role.PLANNER, system, user, meter).text
        try:
            payload = find_json(text, dict)
        except ValueError:
            return None, "response did not contain a JSON object"
        if not self.use_strategy:
            payload = {k: v for k, v in payload.items() if k not in ("general_strategy", "strategy")}
        return validate_blueprint(payload, require_strategy=self.use_strategy), ""

    def plan_one(self, question: Question, meter: UsageMeter | None = None) -> Blueprint:
        system, user = self.prompt_for(question)
        report, parse_error = self._attempt(system, user, meter)
        if report is not None and report.ok:
            return report.blueprint  # type: ignore[return-value]
        problems = [parse_error] if report is None else report.violations
        reminder = (
            user
            + "\n\nYour previous reply could not be used: "
            + "; ".join(problems)
            + ". Reply again with only the JSON object in the required format."
        )
        report, parse_error = self._attempt(system, reminder, meter)
        if report is None:
            raise PlanParseError(parse_error)
        if not report.ok:
            raise PlanInvalid(report.violations)
        return report.blueprint  # type: ignore[return-value]

    def plan(self, question: Question, sample_count: int = 1, meter: UsageMeter | None = None) -> list[Blueprint]:
        if sample_count < 1:
            raise ValueError("sample_count must be positive")
        if sample_count == 1:
            return [self.plan_one(question, meter)]
        with ThreadPoolExecutor(max_workers=sample_count) as pool:
            return list(pool.map(lambda _: self.plan_one(question, meter), range(sample_count)))
