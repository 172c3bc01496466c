"""The iterative coordinator: plan, then schedule/resolve rounds until done."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Any, Iterable, Mapping, Sequence

from . import metrics
from .errors import (
    DuplicateOutcome,
    PlanInvalid,
    PlanParseError,
    ProviderUnavailable,
    ReasonParseError,
    ValidationError,
)
from .executor import Executor
from .gateway import Gateway, UsageMeter
from .planner import Planner
from .prompts import PromptSet
from .retrieval import Index
from .supervisor import Decision, Supervisor, ready_set, sequential_policy
from .types import (
    Action,
    Blueprint,
    Directive,
    ExecutionState,
    Fact,
    IterationRecord,
    OutcomeKind,
    Question,
    ResolutionOutcome,
    SolvedEntry,
    Trajectory,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERATIONS = 5


@dataclass(frozen=True)
class RunConfig:
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    top_k: int = 5
    no_meta_planner: bool = False
    no_supervisor: bool = False
    no_extractor: bool = False
    no_fallback: bool = False
    parallel_directives: int = 4

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.top_k < 1:
            raise ValidationError("top_k must be >= 1")

    @property
    def mode(self) -> str:
        flags = [f.name for f in fields(self) if f.name.startswith("no_") and getattr(self, f.name)]
        return "stride" if not flags else "stride:" + ",".join(flags)

    @classmethod
    def from_mapping(cls, d: Mapping[str, Any]) -> RunConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def apply_outcomes(state: ExecutionState, outcomes: Iterable[ResolutionOutcome]) -> ExecutionState:
    """Fold one iteration's outcomes into a new state."""
    outcomes = list(outcomes)
    ids = [o.sub_question_id for o in outcomes]
    if len(set(ids)) != len(ids):
        raise DuplicateOutcome(f"several outcomes for one id in {ids}")
    solved = dict(state.solved)
    pending = set(state.pending)
    failed = {k: list(v) for k, v in state.failed.items()}
    for out in outcomes:
        sq_id = out.sub_question_id
        if sq_id not in pending:
            raise ValidationError(f"outcome for id {sq_id}, which is not pending")
        if out.kind is OutcomeKind.SOLVED:
            assert out.entry is not None
            solved[sq_id] = out.entry
            pending.discard(sq_id)
        else:
            history = failed.setdefault(sq_id, [])
            if out.failed_query not in history:
                history.append(out.failed_query)  # type: ignore[arg-type]
    return ExecutionState(solved=solved, pending=frozenset(pending), failed=failed)


class Engine:
    """Runs questions end to end against one index and one gateway."""

    def __init__(
        self,
        gateway: Gateway,
        index: Index,
        config: RunConfig | None = None,
        prompts: PromptSet | None = None,
    ):
        self.gateway = gateway
        self.index = index
        self.config = config or RunConfig()
        self.prompts = prompts or PromptSet()
        self.planner = Planner(gateway, self.prompts, use_strategy=not self.config.no_meta_planner)
        self.supervisor = Supervisor(gateway, self.prompts)
        self.executor = Executor(
            gateway, self.prompts, index, k=self.config.top_k, use_extractor=not self.config.no_extractor
        )

    # -- one question -----------------------------------------------------

    def _decide(self, question: Question, blueprint: Blueprint, state: ExecutionState, meter: UsageMeter) -> Decision:
        if self.config.no_supervisor:
            return Decision(sequential_policy(blueprint.plan, state), "sequential")
        return self.supervisor.decide(question, blueprint, state, meter)

    def _resolve_all(
        self, directives: Sequence[Directive], state: ExecutionState, meter: UsageMeter
    ) -> tuple[list[ResolutionOutcome], str | None]:
        """Resolve concurrently against the same snapshot; keep directive order."""

        def one(d: Directive) -> ResolutionOutcome | Exception:
            try:
                return self.executor.resolve(d, state, meter)
            except (ReasonParseError, ProviderUnavailable) as exc:
                return exc

        if len(directives) > 1 and self.config.parallel_directives > 1:
            with ThreadPoolExecutor(max_workers=min(len(directives), self.config.parallel_directives)) as pool:
                results = list(pool.map(one, directives))
        else:
            results = [one(d) for d in directives]
        outcomes = [r for r in results if isinstance(r, ResolutionOutcome)]
        errors = [r for r in results if isinstance(r, Exception)]
        return outcomes, (str(errors[0]) if errors else None)

    def run(
        self,
        question: Question,
        blueprint: Blueprint | None = None,
        sample_index: int | None = None,
    ) -> Trajectory:
        meter = UsageMeter()
        aborted = False
        if blueprint is None:
            try:
                blueprint = self.planner.plan_one(question, meter)
            except (PlanParseError, PlanInvalid, ProviderUnavailable) as exc:
                logger.warning("planning aborted for %s: %s", question.id, exc)
                aborted = True
        return self._execute(question, blueprint, aborted, meter, sample_index)

    def _execute(
        self,
        question: Question,
        blueprint: Blueprint | None,
        aborted: bool,
        meter: UsageMeter,
        sample_index: int | None,
    ) -> Trajectory:
        cfg = self.config
        planner_prompt = self.planner.prompt_for(question)[1]
        state = ExecutionState.initial(blueprint.ids) if blueprint else None
        iterations: list[IterationRecord] = []
        reasoner_prompts: dict[int, str | None] = {}
        t = 0
        while blueprint is not None and state is not None and state.pending and t < cfg.max_iterations:
            ready = ready_set(blueprint.plan, state)
            if not ready:
                break
            t += 1
            try:
                decision = self._decide(question, blueprint, state, meter)
            except ProviderUnavailable as exc:
                logger.warning("supervisor unavailable for %s: %s", question.id, exc)
                aborted = True
                break
            outcomes, error = self._resolve_all(decision.directives, state, meter)
            state = apply_outcomes(state, outcomes)
            for out in outcomes:
                if out.kind is OutcomeKind.SOLVED:
                    reasoner_prompts[out.sub_question_id] = out.reasoner_prompt
            iterations.append(
                IterationRecord(
                    iteration=t,
                    ready_ids=frozenset(ready),
                    directives=tuple(decision.directives),
                    outcomes=tuple(outcomes),
                    decision_source=decision.source,
                    supervisor_prompt=decision.prompt,
                    violations=tuple(decision.violations),
                )
            )
            if error is not None:
                logger.warning("execution aborted for %s: %s", question.id, error)
                aborted = True
                break

        final_prompt = None
        final_answer = ""
        finished = state is not None and not state.pending
        if finished:
            last_id = max(state.solved)  # type: ignore[union-attr]
            final_answer = state.solved[last_id].answer  # type: ignore[union-attr]
            final_prompt = reasoner_prompts.get(last_id)
        used_fallback = not finished or not final_answer.strip()
        if used_fallback:
            if cfg.no_fallback:
                rag = self.run_single_step_rag(question, meter=meter)
                final_answer, final_prompt = rag.final_answer, rag.final_prompt
                aborted = aborted or rag.aborted
            else:
                res = self.executor.fallback_answer(question, blueprint, state, meter)
                final_answer, final_prompt = res.answer, res.prompt
                aborted = aborted or res.aborted

        traj = Trajectory(
            question=question,
            blueprint=blueprint,
            iterations=tuple(iterations),
            final_answer=final_answer,
            used_fallback=used_fallback,
            aborted=aborted,
            mode=cfg.mode,
            planner_prompt=planner_prompt,
            final_prompt=final_prompt,
            usage=meter.as_dict(),
            sample_index=sample_index,
        )
        return self._scored(traj)

    def run_single_step_rag(self, question: Question, meter: UsageMeter | None = None) -> Trajectory:
        """Baseline: one retrieval with the question text, extract, reason."""
        own_meter = meter is None
        meter = meter or UsageMeter()
        docs = self.index.retrieve(question.text, self.config.top_k)
        e_prompt = None
        facts, e_prompt = self.executor.extract(question.text, docs, meter) if docs else ([], None)
        context = facts or [Fact(d.text, d.id) for d in docs]
        directive = Directive(1, Action.RETRIEVE, question.text)
        aborted = False
        outcomes: tuple[ResolutionOutcome, ...] = ()
        final_answer, final_prompt = "", None
        try:
            final_answer, final_prompt = self.executor.reason(question.text, context, meter)
            entry = SolvedEntry(1, final_answer, tuple(context), question.text, Action.RETRIEVE)
            outcomes = (
                ResolutionOutcome(
                    1,
                    OutcomeKind.SOLVED,
                    entry=entry,
                    query=question.text,
                    doc_ids=tuple(d.id for d in docs),
                    extractor_prompt=e_prompt,
                    reasoner_prompt=final_prompt,
                ),
            )
        except (ReasonParseError, ProviderUnavailable) as exc:
            logger.warning("single-step RAG aborted for %s: %s", question.id, exc)
            aborted = True
        record = IterationRecord(1, frozenset({1}), (directive,), outcomes, decision_source="single_step")
        traj = Trajectory(
            question=question,
            blueprint=None,
            iterations=(record,),
            final_answer=final_answer,
            used_fallback=False,
            aborted=aborted,
            mode="single_step_rag",
            final_prompt=final_prompt,
            usage=meter.as_dict() if own_meter else {},
        )
        return self._scored(traj)

    @staticmethod
    def _scored(traj: Trajectory) -> Trajectory:
        if traj.question.gold_answers:
            return traj.with_metrics(metrics.score(traj.final_answer, traj.question.gold_answers))
        return traj

    # -- many questions ---------------------------------------------------

    def run_batch(self, questions: Sequence[Question], parallel: int | None = None, mode: str = "stride") -> list[Trajectory]:
        fn = self.run if mode == "stride" else self.run_single_step_rag
        parallel = parallel or os.cpu_count() or 1
        if parallel <= 1 or len(questions) <= 1:
            return [fn(q) for q in questions]
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(fn, questions))

    def run_sampled(self, question: Question, sample_count: int = 8) -> list[Trajectory]:
        """Sample several blueprints for one question and execute each."""

        def one(i: int) -> Trajectory:
            meter = UsageMeter()
            try:
                bp: Blueprint | None = self.planner.plan_one(question, meter)
            except (PlanParseError, PlanInvalid, ProviderUnavailable) as exc:
                logger.warning("plan sample %d for %s failed: %s", i, question.id, exc)
                bp = None
            return self._execute(question, bp, bp is None, meter, i)

        with ThreadPoolExecutor(max_workers=sample_count) as pool:
            return list(pool.map(one, range(sample_count)))
