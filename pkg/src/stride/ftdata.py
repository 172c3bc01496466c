"""Training-data construction from executed trajectories.

Four builders turn self-executed runs into trainer inputs: planner preference
pairs, causal supervisor rewrites, minimal-fact extraction targets and concise
reasoner answers. Nothing here trains a model.
"""

from __future__ import annotations

import enum
import json
import logging
import random
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import jsonl, metrics
from .errors import ExtractParseError, ProviderUnavailable, ValidationError
from .executor import parse_fact_lines
from .gateway import Gateway, Role
from .pipeline import apply_outcomes
from .planner import serialize_blueprint
from .prompts import PromptSet, format_facts
from .types import Action, Blueprint, ExecutionState, OutcomeKind, Trajectory

logger = logging.getLogger(__name__)

OUTCOME_GAP = 0.3
MAX_PLAN_SIMILARITY = 0.8
VERBOSE_LENGTH_RATIO = 1.5
VERBOSE_MIN_F1 = 0.3
OUTPUT_FILES = {
    "plan_pairs": "plan_dpo.jsonl",
    "supervisor": "supervisor_sft.jsonl",
    "extractor": "extractor_sft.jsonl",
    "reasoner": "reasoner_sft.jsonl",
}


class ModuleTag(str, enum.Enum):
    SUPERVISOR_REWRITE = "supervisor_rewrite"
    EXTRACTOR = "extractor"
    REASONER = "reasoner"


@dataclass(frozen=True)
class TrajectoryScore:
    correct: bool
    f1: float
    iterations: int
    failure_flag: bool

    def __post_init__(self) -> None:
        if not 0.0 <= self.f1 <= 1.0:
            raise ValidationError(f"f1 out of range: {self.f1}")

    @classmethod
    def of(cls, traj: Trajectory) -> TrajectoryScore:
        m = traj.metrics or {}
        rewrote = any(d.action is Action.REWRITE for it in traj.iterations for d in it.directives)
        return cls(
            correct=m.get("em", 0.0) == 1.0,
            f1=float(m.get("f1", 0.0)),
            iterations=len(traj.iterations),
            failure_flag=rewrote or traj.aborted or traj.used_fallback,
        )

    def key(self) -> tuple[int, float, int, int]:
        """Lexicographic merit: correctness, F1, fewer iterations, no failures."""
        return (int(self.correct), self.f1, -self.iterations, int(not self.failure_flag))


@dataclass(frozen=True)
class PlanPreferencePair:
    prompt: str
    chosen: str
    rejected: str

    def __post_init__(self) -> None:
        if self.chosen == self.rejected:
            raise ValidationError("chosen and rejected plans are identical")

    def to_dict(self) -> dict[str, str]:
        return {"prompt": self.prompt, "chosen": self.chosen, "rejected": self.rejected}


@dataclass(frozen=True)
class SftExample:
    module_tag: ModuleTag
    prompt: str
    completion: str

    def __post_init__(self) -> None:
        if not self.prompt.strip() or not self.completion.strip():
            raise ValidationError("SFT prompt and completion must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return {"prompt": self.prompt, "completion": self.completion}


# -- planner pairs ----------------------------------------------------------


def plan_similarity(a: Blueprint, b: Blueprint) -> float:
    return metrics.f1(a.concrete_text(), [b.concrete_text()]).f1


def better_outcome(a: TrajectoryScore, b: TrajectoryScore) -> bool:
    """Whether ``a`` is significantly better than ``b``."""
    return (a.correct and not b.correct) or (a.f1 - b.f1 > OUTCOME_GAP)


def _gap(a: TrajectoryScore, b: TrajectoryScore) -> tuple[float, ...]:
    return tuple(x - y for x, y in zip(a.key(), b.key()))


def build_plan_pairs(
    question_id: str, samples: Sequence[tuple[Blueprint | None, Trajectory]]
) -> list[PlanPreferencePair]:
    """Preference pairs among sampled plans for one question.

    Output is ordered by decreasing composite gap so callers wanting one pair
    per question can take the head.
    """
    scored = []
    for bp, traj in samples:
        if traj.question.id != question_id:
            raise ValidationError(f"trajectory for {traj.question.id} passed with {question_id}")
        if bp is not None:
            scored.append((bp, traj, TrajectoryScore.of(traj)))
    found = []
    for (i, (bi, ti, si)), (j, (bj, tj, sj)) in combinations(enumerate(scored), 2):
        if better_outcome(si, sj):
            win, lose, ws, ls = (bi, ti), (bj, tj), si, sj
        elif better_outcome(sj, si):
            win, lose, ws, ls = (bj, tj), (bi, ti), sj, si
        else:
            continue
        if plan_similarity(bi, bj) >= MAX_PLAN_SIMILARITY:
            continue
        prompt = win[1].planner_prompt or win[1].question.text
        pair = PlanPreferencePair(prompt, serialize_blueprint(win[0]), serialize_blueprint(lose[0]))
        found.append((_gap(ws, ls), i, j, pair))
    found.sort(key=lambda t: (tuple(-g for g in t[0]), t[1], t[2]))
    return [pair for *_, pair in found]


def group_samples(trajectories: Iterable[Trajectory]) -> dict[str, list[tuple[Blueprint | None, Trajectory]]]:
    groups: dict[str, list[tuple[Blueprint | None, Trajectory]]] = {}
    for t in trajectories:
        if t.sample_index is not None:
            groups.setdefault(t.question.id, []).append((t.blueprint, t))
    return {k: sorted(v, key=lambda s: s[1].sample_index) for k, v in groups.items()}


# -- supervisor rewrites ----------------------------------------------------


def filter_rewrite_examples(trajectories: Iterable[Trajectory]) -> list[SftExample]:
    """Keep rewrites that were preceded by a failure and solved their sub-question."""
    out = []
    for traj in trajectories:
        if traj.blueprint is None or (traj.metrics or {}).get("em") != 1.0:
            continue
        state = ExecutionState.initial(traj.blueprint.ids)
        for it in traj.iterations:
            by_id = {o.sub_question_id: o for o in it.outcomes}
            for d in it.directives:
                if d.action is not Action.REWRITE or not it.supervisor_prompt:
                    continue
                if not state.failed_for(d.sub_question_id):
                    continue  # a first attempt labelled as a rewrite
                res = by_id.get(d.sub_question_id)
                if res is None or res.query != d.query:
                    continue  # never executed
                if res.kind is not OutcomeKind.SOLVED:
                    continue
                completion = json.dumps(
                    [{"id": d.sub_question_id, "action": d.action.value, "query": d.query}], ensure_ascii=False
                )
                out.append(SftExample(ModuleTag.SUPERVISOR_REWRITE, it.supervisor_prompt, completion))
            state = apply_outcomes(state, it.outcomes)
    return out


# -- extractor --------------------------------------------------------------


def _fact_key(text: str) -> str:
    return " ".join(text.split()).rstrip(".").casefold()


def build_extractor_examples(
    trajectories: Iterable[Trajectory], selector: Gateway, prompts: PromptSet | None = None
) -> list[SftExample]:
    """Ask the fact selector for a minimal subset of each multi-fact extraction."""
    prompts = prompts or PromptSet()
    out = []
    for traj in trajectories:
        if (traj.metrics or {}).get("em") != 1.0:
            continue
        for it in traj.iterations:
            for res in it.outcomes:
                if res.kind is not OutcomeKind.SOLVED or res.entry is None or not res.extractor_prompt:
                    continue
                facts = list(res.entry.facts)
                if len(facts) <= 1:
                    continue
                system, user = prompts.render("fact_selector", query=res.query, facts=format_facts(facts, numbered=True))
                try:
                    reply = selector.complete(Role.FACT_SELECTOR, system, user).text
                    chosen = parse_fact_lines(reply)
                except (ExtractParseError, ProviderUnavailable) as exc:
                    logger.warning("fact selection failed for %s/%d: %s", traj.question.id, res.sub_question_id, exc)
                    continue
                candidates = {_fact_key(f.text): f for f in facts}
                if any(_fact_key(f.text) not in candidates for f in chosen):
                    logger.warning("selector returned facts outside the candidates for %s; dropped", traj.question.id)
                    continue
                subset = list({_fact_key(f.text): candidates[_fact_key(f.text)] for f in chosen}.values())
                if 0 < len(subset) < len(facts):
                    out.append(SftExample(ModuleTag.EXTRACTOR, res.extractor_prompt, format_facts(subset, numbered=True)))
    return out


# -- reasoner ---------------------------------------------------------------


def is_verbose(pred: str, golds: Sequence[str]) -> bool:
    if not golds or metrics.exact_match(pred, golds):
        return False
    if metrics.f1(pred, golds).f1 <= VERBOSE_MIN_F1:
        return False
    gold = metrics.best_gold(pred, golds)
    return len(metrics.normalize(pred).split()) > VERBOSE_LENGTH_RATIO * len(metrics.normalize(gold).split())


def build_reasoner_examples(trajectories: Iterable[Trajectory], rng_seed: int = 0) -> list[SftExample]:
    """Verbose-but-right answers retargeted to the gold, plus a seeded balance set."""
    verbose: list[SftExample] = []
    pool: list[SftExample] = []
    for traj in trajectories:
        golds = traj.question.gold_answers
        prompt = traj.final_prompt or traj.question.text
        if not golds or not traj.final_answer.strip():
            continue
        if metrics.exact_match(traj.final_answer, golds):
            pool.append(SftExample(ModuleTag.REASONER, prompt, f"Answer: {traj.final_answer.strip()}"))
        elif is_verbose(traj.final_answer, golds):
            gold = metrics.best_gold(traj.final_answer, golds)
            verbose.append(SftExample(ModuleTag.REASONER, prompt, f"Answer: {gold}"))
    want = 2 * len(verbose)
    if len(pool) < want:
        logger.warning("exact-match pool has %d examples, fewer than the %d requested; taking all", len(pool), want)
    balance = random.Random(rng_seed).sample(pool, min(want, len(pool)))
    return verbose + balance


# -- output -----------------------------------------------------------------


def write_outputs(
    out_dir: str | Path,
    plan_pairs: Sequence[PlanPreferencePair],
    supervisor: Sequence[SftExample],
    extractor: Sequence[SftExample],
    reasoner: Sequence[SftExample],
) -> dict[str, Any]:
    """Append the four datasets and one manifest record; return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sets = {"plan_pairs": plan_pairs, "supervisor": supervisor, "extractor": extractor, "reasoner": reasoner}
    for name, records in sets.items():
        jsonl.write(out / OUTPUT_FILES[name], (r.to_dict() for r in records), append=True)
    manifest = {"counts": {name: len(records) for name, records in sets.items()}, "files": OUTPUT_FILES}
    jsonl.write(out / "manifest.jsonl", [manifest], append=True)
    return manifest
