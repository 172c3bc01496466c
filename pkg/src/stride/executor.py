"""Execution layer: retrieve -> extract -> reason, direct reasoning, fallback."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .errors import ExtractParseError, ProviderUnavailable, ReasonParseError
from .gateway import Gateway, Role, UsageMeter
from .parsing import answer_line
from .prompts import PromptSet, format_documents, format_facts
from .retrieval import Index
from .types import (
    INFERRED,
    Action,
    Blueprint,
    Directive,
    Document,
    ExecutionState,
    Fact,
    OutcomeKind,
    Question,
    ResolutionOutcome,
    SolvedEntry,
    substitute_placeholders,
)

logger = logging.getLogger(__name__)

FALLBACK_QUERY_CHARS = 256

_FACT_LINE_RE = re.compile(
    r"^\s*(?P<marker>\d+\s*[.)]|[-*•])?\s*(?P<text>.+?)\s*"
    r"(?:\(\s*(?:doc|source)\s*:?\s*(?P<doc>[^()]+?)\s*\))?\s*\.?\s*$",
    re.IGNORECASE,
)


def parse_fact_lines(text: str, doc_ids: set[str] | None = None) -> list[Fact]:
    """Parse ``<n>. <fact> (doc <id>)`` lines; ``NONE`` means no facts.

    Raises :class:`ExtractParseError` when nothing in a non-NONE reply parses.
    """
    stripped = text.strip()
    if not stripped or stripped.strip(".").upper() == "NONE":
        return []
    facts = []
    for line in stripped.splitlines():
        if not line.strip() or line.strip().upper() == "NONE":
            continue
        m = _FACT_LINE_RE.match(line)
        if m is None or (m.group("marker") is None and m.group("doc") is None):
            continue
        doc = m.group("doc")
        source = doc.strip() if doc else INFERRED
        if doc_ids is not None and source != INFERRED and source not in doc_ids:
            logger.warning("fact cites unknown doc %r; marking inferred", source)
            source = INFERRED
        body = m.group("text").strip()
        if body:
            facts.append(Fact(body, source))
    if not facts:
        raise ExtractParseError(f"no fact lines in extractor output: {stripped[:80]!r}")
    return facts


@dataclass
class FallbackResult:
    answer: str
    aborted: bool
    query: str
    prompt: str | None


class Executor:
    def __init__(
        self,
        gateway: Gateway,
        prompts: PromptSet,
        index: Index,
        k: int = 5,
        use_extractor: bool = True,
    ):
        self.gateway = gateway
        self.prompts = prompts
        self.index = index
        self.k = k
        self.use_extractor = use_extractor

    # -- model calls ------------------------------------------------------

    def extract(self, query: str, docs: list[Document], meter: UsageMeter | None = None) -> tuple[list[Fact], str]:
        system, user = self.prompts.render("extractor", query=query, documents=format_documents(docs))
        text = self.gateway.complete(Role.EXTRACTOR, system, user, meter).text
        try:
            return parse_fact_lines(text, {d.id for d in docs}), user
        except ExtractParseError as exc:
            logger.warning("%s; treating as empty extraction", exc)
            return [], user

    def reason(self, query: str, context_facts: list[Fact], meter: UsageMeter | None = None) -> tuple[str, str]:
        system, user = self.prompts.render("reasoner", query=query, facts=format_facts(context_facts))
        answer = answer_line(self.gateway.complete(Role.REASONER, system, user, meter).text)
        if answer is None:
            retry = user + '\n\nYour reply had no final "Answer:" line. End with "Answer: <short answer>".'
            answer = answer_line(self.gateway.complete(Role.REASONER, system, retry, meter).text)
        if answer is None:
            raise ReasonParseError(f"reasoner gave no Answer line for {query!r}")
        return answer, user

    # -- directive resolution ----------------------------------------------

    def resolve(self, directive: Directive, state: ExecutionState, meter: UsageMeter | None = None) -> ResolutionOutcome:
        """Resolve one directive against a read-only state snapshot."""
        sq_id, query = directive.sub_question_id, directive.query
        if directive.action is Action.ANSWER:
            context = state.accumulated_facts()
            answer, r_prompt = self.reason(query, context, meter)
            entry = SolvedEntry(sq_id, answer, tuple(context), query, Action.ANSWER)
            return ResolutionOutcome(
                sq_id, OutcomeKind.SOLVED, entry=entry, action=directive.action, query=query, reasoner_prompt=r_prompt
            )

        hits = self.index.top_k(query, self.k)
        docs = [self.index.document(h.doc_id) for h in hits]
        doc_ids = tuple(d.id for d in docs)
        e_prompt = None
        if self.use_extractor:
            facts, e_prompt = self.extract(query, docs, meter) if docs else ([], None)
        else:
            facts = [Fact(d.text, d.id) for d in docs]
        if not facts:
            return ResolutionOutcome(
                sq_id,
                OutcomeKind.RETRIEVAL_FAILED,
                failed_query=query,
                action=directive.action,
                query=query,
                doc_ids=doc_ids,
                extractor_prompt=e_prompt,
            )
        answer, r_prompt = self.reason(query, facts, meter)
        entry = SolvedEntry(sq_id, answer, tuple(facts), query, directive.action)
        return ResolutionOutcome(
            sq_id,
            OutcomeKind.SOLVED,
            entry=entry,
            action=directive.action,
            query=query,
            doc_ids=doc_ids,
            extractor_prompt=e_prompt,
            reasoner_prompt=r_prompt,
        )

    # -- fallback ---------------------------------------------------------

    @staticmethod
    def fallback_query(question: Question, state: ExecutionState | None) -> str:
        if state is None or not state.solved:
            return question.text
        last = state.solved[max(state.solved)]
        joined = " ".join(f.text for f in last.facts)[:FALLBACK_QUERY_CHARS].strip()
        return joined or question.text

    def fallback_answer(
        self,
        question: Question,
        blueprint: Blueprint | None,
        state: ExecutionState | None,
        meter: UsageMeter | None = None,
    ) -> FallbackResult:
        """Best-effort answer for an unfinished run; never raises."""
        query = self.fallback_query(question, state)
        prompt = None
        try:
            docs = self.index.retrieve(query, self.k)
            answers = state.answers() if state is not None else {}
            if blueprint is None:
                plan_text = "(no plan)"
            else:
                lines = []
                for sq in blueprint.plan:
                    line = f"{sq.id}. {substitute_placeholders(sq.template_text, answers)}"
                    if sq.id in answers:
                        line += f" -> {answers[sq.id]}"
                    lines.append(line)
                plan_text = "\n".join(lines)
            facts = state.accumulated_facts() if state is not None else []
            system, prompt = self.prompts.render(
                "fallback",
                question=question.text,
                plan=plan_text,
                facts=format_facts(facts),
                documents=format_documents(docs),
            )
            answer = answer_line(self.gateway.complete(Role.FALLBACK, system, prompt, meter).text)
        except ProviderUnavailable as exc:
            logger.warning("fallback reasoner failed: %s", exc)
            answer = None
        if answer is None:
            return FallbackResult("", True, query, prompt)
        return FallbackResult(answer, False, query, prompt)
