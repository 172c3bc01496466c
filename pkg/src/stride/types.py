"""Domain types shared by every layer of the engine.

All values are frozen dataclasses. State evolution produces new objects;
nothing here is mutated after construction. ``to_dict``/``from_dict``
give the canonical one-record-per-line serialization used by the log files.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

from .errors import ValidationError

logger = logging.getLogger(__name__)

TRAJECTORY_SCHEMA = "traj_v1"
INFERRED = "inferred"

_PLACEHOLDER_RE = re.compile(r"(?<![\w#])#(\w+)")


def parse_placeholders(template_text: str, warnings: list[str] | None = None) -> set[int]:
    """Return every ``k`` such that ``#k`` appears as a standalone token.

    Malformed placeholders (``#0``, ``#abc``) are ignored; a note is appended
    to ``warnings`` when the caller supplies a list.
    """
    found: set[int] = set()
    for match in _PLACEHOLDER_RE.finditer(template_text):
        raw = match.group(1)
        if raw.isdigit() and int(raw) > 0:
            found.add(int(raw))
            continue
        msg = f"ignoring malformed placeholder #{raw} in {template_text!r}"
        logger.warning(msg)
        if warnings is not None:
            warnings.append(msg)
    return found


def substitute_placeholders(template_text: str, answers: Mapping[int, str]) -> str:
    def _sub(match: re.Match[str]) -> str:
        raw = match.group(1)
        if raw.isdigit() and int(raw) in answers:
            return answers[int(raw)]
        return match.group(0)

    return _PLACEHOLDER_RE.sub(_sub, template_text)


def normalize_query(text: str) -> str:
    """Case-folded, whitespace-collapsed form used to compare queries."""
    return " ".join(text.casefold().split())


class Action(str, enum.Enum):
    RETRIEVE = "retrieve"
    REWRITE = "rewrite"
    ANSWER = "answer"


class OutcomeKind(str, enum.Enum):
    SOLVED = "solved"
    RETRIEVAL_FAILED = "retrieval_failed"


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold_answers: tuple[str, ...] = ()
    hop_count: int | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValidationError(f"question {self.id!r} has empty text")
        if self.hop_count is not None and self.hop_count < 1:
            raise ValidationError("hop_count must be positive")
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "gold_answers": list(self.gold_answers),
            "hop_count": self.hop_count,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Question:
        return cls(
            id=str(d["id"]),
            text=d["text"],
            gold_answers=tuple(d.get("gold_answers") or ()),
            hop_count=d.get("hop_count"),
        )


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValidationError(f"document {self.id!r} has empty text")

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "title": self.title, "text": self.text}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Document:
        return cls(id=str(d["id"]), title=d.get("title", ""), text=d["text"])


@dataclass(frozen=True)
class StrategyStep:
    index: int
    description: str

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValidationError("strategy step index is 1-based")
        if not self.description.strip():
            raise ValidationError("strategy step description is empty")

    def to_dict(self) -> dict[str, Any]:
        return {"index": self.index, "description": self.description}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> StrategyStep:
        return cls(index=int(d["index"]), description=d["description"])


@dataclass(frozen=True)
class SubQuestion:
    id: int
    template_text: str
    depends_on: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "depends_on", frozenset(self.depends_on))
        if self.id < 1:
            raise ValidationError("sub-question ids are 1-based")
        if not self.template_text.strip():
            raise ValidationError(f"sub-question {self.id} has empty text")
        parsed = parse_placeholders(self.template_text)
        if parsed != self.depends_on:
            raise ValidationError(
                f"sub-question {self.id}: depends_on {sorted(self.depends_on)} "
                f"disagrees with placeholders {sorted(parsed)}"
            )
        if any(dep >= self.id for dep in self.depends_on):
            raise ValidationError(f"sub-question {self.id} references a later step")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "template_text": self.template_text,
            "depends_on": sorted(self.depends_on),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> SubQuestion:
        return cls(
            id=int(d["id"]),
            template_text=d["template_text"],
            depends_on=frozenset(int(x) for x in d.get("depends_on", ())),
        )


@dataclass(frozen=True)
class Blueprint:
    """Two-level plan: type-level strategy steps plus executable sub-questions."""

    strategy: tuple[StrategyStep, ...]
    plan: tuple[SubQuestion, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategy", tuple(self.strategy))
        object.__setattr__(self, "plan", tuple(self.plan))
        if not self.plan:
            raise ValidationError("blueprint plan is empty")
        ids = [sq.id for sq in self.plan]
        if ids != list(range(1, len(ids) + 1)):
            raise ValidationError(f"sub-question ids must be 1..n in order, got {ids}")

    def by_id(self, sq_id: int) -> SubQuestion:
        return self.plan[sq_id - 1]

    @property
    def ids(self) -> frozenset[int]:
        return frozenset(sq.id for sq in self.plan)

    def depth(self) -> int:
        """Length of the longest dependency chain."""
        level: dict[int, int] = {}
        for sq in self.plan:
            level[sq.id] = 1 + max((level[d] for d in sq.depends_on), default=0)
        return max(level.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": [s.to_dict() for s in self.strategy],
            "plan": [sq.to_dict() for sq in self.plan],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Blueprint:
        return cls(
            strategy=tuple(StrategyStep.from_dict(s) for s in d.get("strategy", ())),
            plan=tuple(SubQuestion.from_dict(sq) for sq in d["plan"]),
        )

    def concrete_text(self) -> str:
        return " ".join(sq.template_text for sq in self.plan)


@dataclass(frozen=True)
class Fact:
    text: str
    source_doc_id: str = INFERRED

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValidationError("fact text is empty")

    @property
    def key(self) -> str:
        return " ".join(self.text.split())

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "source_doc_id": self.source_doc_id}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Fact:
        return cls(text=d["text"], source_doc_id=d.get("source_doc_id", INFERRED))


def dedupe_facts(facts: Iterable[Fact]) -> list[Fact]:
    seen: set[str] = set()
    out = []
    for f in facts:
        if f.key not in seen:
            seen.add(f.key)
            out.append(f)
    return out


@dataclass(frozen=True)
class SolvedEntry:
    sub_question_id: int
    answer: str
    facts: tuple[Fact, ...]
    resolved_query: str
    action_used: Action

    def __post_init__(self) -> None:
        object.__setattr__(self, "facts", tuple(self.facts))
        object.__setattr__(self, "action_used", Action(self.action_used))
        if not self.answer.strip():
            raise ValidationError(f"solved entry {self.sub_question_id} has empty answer")

    def to_dict(self) -> dict[str, Any]:
        return {
            "sub_question_id": self.sub_question_id,
            "answer": self.answer,
            "facts": [f.to_dict() for f in self.facts],
            "resolved_query": self.resolved_query,
            "action_used": self.action_used.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> SolvedEntry:
        return cls(
            sub_question_id=int(d["sub_question_id"]),
            answer=d["answer"],
            facts=tuple(Fact.from_dict(f) for f in d.get("facts", ())),
            resolved_query=d.get("resolved_query", ""),
            action_used=Action(d["action_used"]),
        )


@dataclass(frozen=True)
class ExecutionState:
    """Solved entries, pending ids and per-id failed query history."""

    solved: Mapping[int, SolvedEntry]
    pending: frozenset[int]
    failed: Mapping[int, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "pending", frozenset(self.pending))
        object.__setattr__(self, "solved", dict(self.solved))
        object.__setattr__(self, "failed", {k: tuple(v) for k, v in self.failed.items()})
        self.check()

    @classmethod
    def initial(cls, plan_ids: Iterable[int]) -> ExecutionState:
        return cls(solved={}, pending=frozenset(plan_ids), failed={})

    def check(self, plan_ids: frozenset[int] | None = None) -> None:
        solved_ids = set(self.solved)
        if solved_ids & self.pending:
            raise ValidationError(f"ids both solved and pending: {solved_ids & self.pending}")
        if plan_ids is not None and solved_ids | self.pending != plan_ids:
            raise ValidationError("solved and pending do not partition the plan")
        if not set(self.failed) <= solved_ids | self.pending:
            raise ValidationError("failed map references unknown ids")
        for sq_id, queries in self.failed.items():
            if len(set(queries)) != len(queries):
                raise ValidationError(f"duplicate failed query for {sq_id}")

    def failed_for(self, sq_id: int) -> tuple[str, ...]:
        return self.failed.get(sq_id, ())

    def answers(self) -> dict[int, str]:
        return {k: v.answer for k, v in self.solved.items()}

    def accumulated_facts(self) -> list[Fact]:
        """Facts of every solved entry in id order, de-duplicated by text."""
        ordered = (f for k in sorted(self.solved) for f in self.solved[k].facts)
        return dedupe_facts(ordered)

    def to_dict(self) -> dict[str, Any]:
        return {
            "solved": {str(k): self.solved[k].to_dict() for k in sorted(self.solved)},
            "pending": sorted(self.pending),
            "failed": {str(k): list(self.failed[k]) for k in sorted(self.failed)},
        }


@dataclass(frozen=True)
class Directive:
    sub_question_id: int
    action: Action
    query: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "action", Action(self.action))
        if not self.query.strip():
            raise ValidationError(f"directive for {self.sub_question_id} has empty query")

    def to_dict(self) -> dict[str, Any]:
        return {
            "sub_question_id": self.sub_question_id,
            "action": self.action.value,
            "query": self.query,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Directive:
        return cls(int(d["sub_question_id"]), Action(d["action"]), d["query"])


@dataclass(frozen=True)
class ResolutionOutcome:
    sub_question_id: int
    kind: OutcomeKind
    entry: SolvedEntry | None = None
    failed_query: str | None = None
    action: Action = Action.RETRIEVE
    query: str = ""
    doc_ids: tuple[str, ...] = ()
    extractor_prompt: str | None = None
    reasoner_prompt: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", OutcomeKind(self.kind))
        object.__setattr__(self, "action", Action(self.action))
        object.__setattr__(self, "doc_ids", tuple(self.doc_ids))
        if self.kind is OutcomeKind.SOLVED and (self.entry is None or self.failed_query is not None):
            raise ValidationError("solved outcome needs an entry and no failed query")
        if self.kind is OutcomeKind.RETRIEVAL_FAILED and (
            self.entry is not None or not self.failed_query
        ):
            raise ValidationError("failed outcome needs a failed query and no entry")

    def to_dict(self) -> dict[str, Any]:
        return {
            "sub_question_id": self.sub_question_id,
            "kind": self.kind.value,
            "entry": self.entry.to_dict() if self.entry else None,
            "failed_query": self.failed_query,
            "action": self.action.value,
            "query": self.query,
            "doc_ids": list(self.doc_ids),
            "extractor_prompt": self.extractor_prompt,
            "reasoner_prompt": self.reasoner_prompt,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ResolutionOutcome:
        return cls(
            sub_question_id=int(d["sub_question_id"]),
            kind=OutcomeKind(d["kind"]),
            entry=SolvedEntry.from_dict(d["entry"]) if d.get("entry") else None,
            failed_query=d.get("failed_query"),
            action=Action(d.get("action", "retrieve")),
            query=d.get("query", ""),
            doc_ids=tuple(d.get("doc_ids", ())),
            extractor_prompt=d.get("extractor_prompt"),
            reasoner_prompt=d.get("reasoner_prompt"),
        )


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    ready_ids: frozenset[int]
    directives: tuple[Directive, ...]
    outcomes: tuple[ResolutionOutcome, ...]
    decision_source: str = "model"
    supervisor_prompt: str | None = None
    violations: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "ready_ids", frozenset(self.ready_ids))
        object.__setattr__(self, "directives", tuple(self.directives))
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "violations", tuple(self.violations))
        if self.iteration < 1:
            raise ValidationError("iterations count from 1")
        stray = [d.sub_question_id for d in self.directives if d.sub_question_id not in self.ready_ids]
        if stray:
            raise ValidationError(f"directives target non-ready ids {stray}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "ready_ids": sorted(self.ready_ids),
            "directives": [d.to_dict() for d in self.directives],
            "outcomes": [o.to_dict() for o in self.outcomes],
            "decision_source": self.decision_source,
            "supervisor_prompt": self.supervisor_prompt,
            "violations": list(self.violations),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> IterationRecord:
        return cls(
            iteration=int(d["iteration"]),
            ready_ids=frozenset(d["ready_ids"]),
            directives=tuple(Directive.from_dict(x) for x in d["directives"]),
            outcomes=tuple(ResolutionOutcome.from_dict(x) for x in d["outcomes"]),
            decision_source=d.get("decision_source", "model"),
            supervisor_prompt=d.get("supervisor_prompt"),
            violations=tuple(d.get("violations", ())),
        )


@dataclass(frozen=True)
class Trajectory:
    question: Question
    blueprint: Blueprint | None
    iterations: tuple[IterationRecord, ...]
    final_answer: str
    used_fallback: bool
    metrics: Mapping[str, float] | None = None
    aborted: bool = False
    mode: str = "stride"
    planner_prompt: str | None = None
    final_prompt: str | None = None
    usage: Mapping[str, int] = field(default_factory=dict)
    sample_index: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "iterations", tuple(self.iterations))
        if not self.aborted and not self.final_answer.strip():
            raise ValidationError("non-aborted trajectory needs a final answer")

    def with_metrics(self, metrics: Mapping[str, float]) -> Trajectory:
        return replace(self, metrics=dict(metrics))

    def final_state(self) -> ExecutionState | None:
        """Replay the recorded outcomes into the terminal execution state."""
        if self.blueprint is None:
            return None
        state = ExecutionState.initial(self.blueprint.ids)
        from .pipeline import apply_outcomes

        for rec in self.iterations:
            state = apply_outcomes(state, rec.outcomes)
        return state

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": TRAJECTORY_SCHEMA,
            "question": self.question.to_dict(),
            "blueprint": self.blueprint.to_dict() if self.blueprint else None,
            "iterations": [r.to_dict() for r in self.iterations],
            "final_answer": self.final_answer,
            "used_fallback": self.used_fallback,
            "metrics": dict(self.metrics) if self.metrics is not None else None,
            "aborted": self.aborted,
            "mode": self.mode,
            "planner_prompt": self.planner_prompt,
            "final_prompt": self.final_prompt,
            "usage": dict(self.usage),
            "sample_index": self.sample_index,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Trajectory:
        if d.get("schema", TRAJECTORY_SCHEMA) != TRAJECTORY_SCHEMA:
            raise ValidationError(f"unsupported trajectory schema {d.get('schema')!r}")
        return cls(
            question=Question.from_dict(d["question"]),
            blueprint=Blueprint.from_dict(d["blueprint"]) if d.get("blueprint") else None,
            iterations=tuple(IterationRecord.from_dict(r) for r in d["iterations"]),
            final_answer=d["final_answer"],
            used_fallback=bool(d["used_fallback"]),
            metrics=d.get("metrics"),
            aborted=bool(d.get("aborted", False)),
            mode=d.get("mode", "stride"),
            planner_prompt=d.get("planner_prompt"),
            final_prompt=d.get("final_prompt"),
            usage=d.get("usage") or {},
            sample_index=d.get("sample_index"),
        )
