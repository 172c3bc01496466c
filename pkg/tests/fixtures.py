"""Hand-built trajectories with known properties for the training-data builders."""

from __future__ import annotations

import random
from collections import Counter
from itertools import combinations

from stride import metrics
from stride.planner import serialize_blueprint
from stride.types import (
    Action,
    Blueprint,
    Directive,
    IterationRecord,
    OutcomeKind,
    Question,
    ResolutionOutcome,
    SolvedEntry,
    StrategyStep,
    SubQuestion,
    Trajectory,
)

VOCAB = [
    "who", "wrote", "novel", "film", "director", "born", "city", "country", "year", "capital",
    "river", "author", "award", "spouse", "founded", "company", "album", "singer", "team", "league",
    "mountain", "island", "painter", "museum", "language", "composer", "opera", "battle", "treaty", "king",
]
# multiples of 1/8 so no gap lands exactly on the 0.3 threshold
F1_LEVELS = [i / 8 for i in range(8)]


def _blueprint(words_a, words_b):
    return Blueprint(
        (StrategyStep(1, "find the entity"), StrategyStep(2, "follow the relation")),
        (SubQuestion(1, " ".join(words_a)), SubQuestion(2, " ".join(words_b))),
    )


def _trajectory(question, bp, correct, f1, iterations, failure, sample_index):
    answer = question.gold_answers[0] if correct else "wrong answer"
    return Trajectory(
        question=question,
        blueprint=bp,
        iterations=(),
        final_answer=answer,
        used_fallback=failure,
        planner_prompt=f"plan for {question.id}",
        sample_index=sample_index,
    ).with_metrics({"em": 1.0 if correct else 0.0, "f1": 1.0 if correct else f1, "iters": iterations})


def sampled_plan_fixture(seed=0, questions=5, samples=8):
    """``questions`` x ``samples`` (blueprint, trajectory) groups with a spread of similarities."""
    rng = random.Random(seed)
    groups = {}
    for q in range(questions):
        question = Question(f"fx-{q}", f"fixture question {q}", (f"gold{q}",))
        base_a, base_b = rng.sample(VOCAB, 6), rng.sample(VOCAB, 6)
        group = []
        for s in range(samples):
            if q == 0 and s == 7:
                group.append((None, Trajectory(question, None, (), "", True, {"em": 0.0, "f1": 0.0}, aborted=True, sample_index=s)))
                continue
            a, b = list(base_a), list(base_b)
            for _ in range(rng.choice([0, 0, 1, 2, 3, 6, 10])):
                words = a if rng.random() < 0.5 else b
                words[rng.randrange(len(words))] = rng.choice(VOCAB)
            correct = rng.random() < 0.4
            f1 = rng.choice(F1_LEVELS)
            traj = _trajectory(question, _blueprint(a, b), correct, f1, rng.randint(1, 5), rng.random() < 0.3, s)
            group.append((traj.blueprint, traj))
        groups[question.id] = group
    return groups


def token_f1(a: str, b: str) -> float:
    ta, tb = a.lower().split(), b.lower().split()
    common = sum((Counter(ta) & Counter(tb)).values())
    if common == 0:
        return 0.0
    p, r = common / len(ta), common / len(tb)
    return 2 * p * r / (p + r)


def brute_force_pairs(group):
    """Every unordered sample pair checked directly against the three selection rules."""
    out = Counter()
    for (bi, ti), (bj, tj) in combinations(group, 2):
        if bi is None or bj is None:
            continue
        ci, cj = ti.metrics["em"] == 1.0, tj.metrics["em"] == 1.0
        fi, fj = ti.metrics["f1"], tj.metrics["f1"]
        if (ci and not cj) or fi - fj > 0.3:
            win, lose = (bi, ti), (bj, tj)
        elif (cj and not ci) or fj - fi > 0.3:
            win, lose = (bj, tj), (bi, ti)
        else:
            continue
        text_i = " ".join(s.template_text for s in bi.plan)
        text_j = " ".join(s.template_text for s in bj.plan)
        if token_f1(text_i, text_j) >= 0.8:
            continue
        out[(win[1].planner_prompt, serialize_blueprint(win[0]), serialize_blueprint(lose[0]))] += 1
    return out


# -- rewrite fixtures -------------------------------------------------------


def _solved(sq_id, query, answer="a"):
    return ResolutionOutcome(
        sq_id, OutcomeKind.SOLVED, entry=SolvedEntry(sq_id, answer, (), query, Action.RETRIEVE), query=query
    )


def _failed(sq_id, query, action=Action.RETRIEVE):
    return ResolutionOutcome(sq_id, OutcomeKind.RETRIEVAL_FAILED, failed_query=query, action=action, query=query)


def _rw(sq_id, query):
    return Directive(sq_id, Action.REWRITE, query)


def _rt(sq_id, query):
    return Directive(sq_id, Action.RETRIEVE, query)


def _it(n, ready, directives, outcomes):
    return IterationRecord(n, frozenset(ready), tuple(directives), tuple(outcomes), supervisor_prompt=f"state at {n}")


def rewrite_fixture():
    """Trajectories whose rewrite queries say whether they should survive: ``good-*`` or ``bad-*``."""
    q = Question("rw", "two hop?", ("gold",))
    bp = Blueprint((StrategyStep(1, "s"),), (SubQuestion(1, "first"), SubQuestion(2, "second #1", frozenset({1}))))

    def traj(iters, correct=True):
        return Trajectory(q, bp, tuple(iters), "gold" if correct else "nope", False).with_metrics(
            {"em": 1.0 if correct else 0.0, "f1": 1.0 if correct else 0.0}
        )

    trajs = [
        # genuine recovery after one failure
        traj([_it(1, {1}, [_rt(1, "first")], [_failed(1, "first")]),
              _it(2, {1}, [_rw(1, "good-1")], [_solved(1, "good-1")]),
              _it(3, {2}, [_rt(2, "second a")], [_solved(2, "second a", "gold")])]),
        # rewrite label on a first attempt
        traj([_it(1, {1}, [_rw(1, "bad-first-attempt")], [_solved(1, "bad-first-attempt")]),
              _it(2, {2}, [_rt(2, "second a")], [_solved(2, "second a", "gold")])]),
        # rewrite that failed again, then a second rewrite that worked
        traj([_it(1, {1}, [_rt(1, "first")], [_failed(1, "first")]),
              _it(2, {1}, [_rw(1, "bad-failed-again")], [_failed(1, "bad-failed-again", Action.REWRITE)]),
              _it(3, {1}, [_rw(1, "good-2")], [_solved(1, "good-2")]),
              _it(4, {2}, [_rt(2, "second a")], [_solved(2, "second a", "gold")])]),
        # directive whose resolution ran with a different query (never executed as issued)
        traj([_it(1, {1}, [_rt(1, "first")], [_failed(1, "first")]),
              _it(2, {1}, [_rw(1, "bad-never-run")], [_solved(1, "something else")]),
              _it(3, {2}, [_rt(2, "second a")], [_solved(2, "second a", "gold")])]),
        # directive with no resolution at all
        traj([_it(1, {1}, [_rt(1, "first")], [_failed(1, "first")]),
              _it(2, {1}, [_rw(1, "bad-dropped")], []),
              _it(3, {1}, [_rw(1, "good-3")], [_solved(1, "good-3")]),
              _it(4, {2}, [_rt(2, "second a")], [_solved(2, "second a", "gold")])]),
        # causal rewrite, but the final answer is wrong
        traj([_it(1, {1}, [_rt(1, "first")], [_failed(1, "first")]),
              _it(2, {1}, [_rw(1, "bad-wrong-final")], [_solved(1, "bad-wrong-final")]),
              _it(3, {2}, [_rt(2, "second a")], [_solved(2, "second a", "nope")])], correct=False),
        # rewrite on the second hop after its own failure, while the first hop is long solved
        traj([_it(1, {1}, [_rt(1, "first")], [_solved(1, "first")]),
              _it(2, {2}, [_rt(2, "second a")], [_failed(2, "second a")]),
              _it(3, {2}, [_rw(2, "good-4")], [_solved(2, "good-4", "gold")])]),
        # rewrite on the second hop when only the first hop ever failed
        traj([_it(1, {1}, [_rt(1, "first")], [_failed(1, "first")]),
              _it(2, {1}, [_rt(1, "first again")], [_solved(1, "first again")]),
              _it(3, {2}, [_rw(2, "bad-other-id")], [_solved(2, "bad-other-id", "gold")])]),
    ]
    return trajs


# -- reasoner fixtures ------------------------------------------------------


def reasoner_fixture(verbose=3, exact=10, wrong=4):
    trajs = []
    for i in range(verbose):
        q = Question(f"v{i}", f"where {i}?", ("Paris",))
        trajs.append(Trajectory(q, None, (), "The answer is Paris, France", False, final_prompt=f"facts {i}"))
    for i in range(exact):
        q = Question(f"e{i}", f"what {i}?", (f"thing {i}",))
        trajs.append(Trajectory(q, None, (), f"thing {i}", False, final_prompt=f"facts e{i}"))
    for i in range(wrong):
        q = Question(f"w{i}", f"which {i}?", ("Paris",))
        trajs.append(Trajectory(q, None, (), "London", False))
    return [t.with_metrics(metrics.score(t.final_answer, t.question.gold_answers)) for t in trajs]
