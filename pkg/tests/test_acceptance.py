"""Acceptance suite: one PASS/FAIL line per criterion, printed and repeated in the run summary."""

from __future__ import annotations

import json
import random
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, HARNESS_SEED
from fixtures import brute_force_pairs, reasoner_fixture, rewrite_fixture, sampled_plan_fixture
from oracles import brute_force_topk, random_corpus
from stride import jsonl, metrics
from stride.errors import DuplicateOutcome, ValidationError
from stride.ftdata import build_plan_pairs, build_reasoner_examples, filter_rewrite_examples
from stride.gateway import FunctionProvider, Gateway, RecordingProvider, load_script, save_script
from stride.harness import (
    HarnessCounts,
    adversarial_provider,
    cooperative_provider,
    first_phrasing_failures,
    generate,
    unresolvable_question,
)
from stride.pipeline import Engine, RunConfig, apply_outcomes
from stride.retrieval import EmbeddingVector, Index, kernels
from stride.types import Action, ExecutionState, OutcomeKind, ResolutionOutcome, SolvedEntry, normalize_query

BACKENDS = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])
SUITE = HarnessCounts(entities=120, sequential_q=20, parallel_q=20, forkjoin_q=20)


def report(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def coop_run(harness, harness_index):
    engine = Engine(Gateway(cooperative_provider(harness)), harness_index)
    return engine.run_batch([q.question for q in harness.questions], 8)


def test_criterion_1_oracle_end_to_end():
    start = time.perf_counter()
    h = generate(HARNESS_SEED, SUITE)
    trajs = Engine(Gateway(cooperative_provider(h)), h.index()).run_batch([q.question for q in h.questions], 8)
    elapsed = time.perf_counter() - start
    agg = metrics.aggregate([t.metrics for t in trajs])
    patterns = Counter(q.pattern for q in h.questions)
    hops = {len(q.gold_blueprint.plan) for q in h.questions if q.pattern == "sequential"}
    ok = (
        len(trajs) >= 60
        and patterns == Counter(sequential=20, parallel_compare=20, fork_join=20)
        and hops <= {2, 3}
        and agg["em"] == 1.0
        and agg["f1"] == 1.0
        and elapsed < 60
    )
    report(1, ok, f"n={len(trajs)} EM={agg['em']:.4f} F1={agg['f1']:.4f} hops={sorted(hops)} time={elapsed:.1f}s")


def test_criterion_2_iterations_equal_dag_depth(harness, coop_run):
    by_id = {q.question.id: q for q in harness.questions}
    mismatched = [t.question.id for t in coop_run if len(t.iterations) != by_id[t.question.id].gold_blueprint.depth()]
    wide = [t for t in coop_run if by_id[t.question.id].pattern != "sequential"]
    not_two = [t.question.id for t in wide if len(t.iterations) != 2]
    report(
        2,
        not mismatched and not not_two and len(wide) == 40,
        f"depth mismatches={len(mismatched)} parallel/fork-join not in 2 iterations={len(not_two)} of {len(wide)}",
    )


def test_criterion_3_rewrite_recovery(harness, harness_index):
    picks = first_phrasing_failures(harness)
    bad = []
    rewrites = 0
    for sq in harness.questions:
        phrasing, sid = picks[sq.question.id]
        engine = Engine(Gateway(adversarial_provider(harness, {phrasing: False})), harness_index)
        t = engine.run(sq.question)
        final = t.final_state()
        failed_all = {normalize_query(q) for v in final.failed.values() for q in v}
        entries = sum(len(v) for v in final.failed.values())
        rw = [d.query for it in t.iterations for d in it.directives if d.action is Action.REWRITE]
        rewrites += len(rw)
        if (
            t.metrics["em"] != 1.0
            or len(final.failed_for(sid)) != 1
            or entries != 1
            or any(normalize_query(q) in failed_all for q in rw)
            or not rw
        ):
            bad.append(sq.question.id)
    n = len(harness.questions)
    report(3, not bad, f"recovered {n - len(bad)}/{n} with one failed entry each; {rewrites} rewrites, none repeat a failure")


def test_criterion_4_termination_and_fallback(harness, harness_index):
    sq, failures = unresolvable_question(harness)
    stuck = Engine(Gateway(adversarial_provider(harness, failures)), harness_index).run(sq.question)
    two_hop = next(q for q in harness.questions if len(q.gold_blueprint.plan) == 2 and q.pattern == "sequential")
    capped = Engine(Gateway(cooperative_provider(harness)), harness_index, RunConfig(max_iterations=1)).run(two_hop.question)
    ok = len(stuck.iterations) == 5 and stuck.used_fallback and capped.used_fallback and len(capped.iterations) == 1
    report(
        4,
        ok,
        f"permanent failure stopped after {len(stuck.iterations)} iterations fallback={stuck.used_fallback}; "
        f"cap 1 on 2-hop fallback={capped.used_fallback}",
    )


def test_criterion_5_retrieval_exactness():
    rng = np.random.default_rng(20240605)
    checked = mismatches = prefix_bad = 0
    for c in range(200):
        n = 1000 if c == 0 else int(rng.integers(1, 1001))
        raw, ids = random_corpus(rng, n, 64)
        rows = np.vstack([EmbeddingVector(r, 64).normalized().values for r in raw])
        indexes = [Index(ids, rows, backend=b) for b in BACKENDS]
        for probe in range(3):
            q = raw[int(rng.integers(0, n))] if probe == 0 else rng.standard_normal(64)
            qn = q / np.linalg.norm(q)
            want = brute_force_topk(raw, ids, q, 9)
            for index in indexes:
                prev = None
                for k in (2, 3, 5, 8, 9):
                    got = [h.doc_id for h in index.top_k_vector(qn, k)]
                    if k != 9:
                        checked += 1
                        if got != [w[0] for w in want[:k]]:
                            mismatches += 1
                    if prev is not None and got[: len(prev)] != prev:
                        prefix_bad += 1
                    prev = got
    report(5, mismatches == 0 and prefix_bad == 0, f"{checked} top-k queries over 200 corpora ({'+'.join(BACKENDS)}): {mismatches} mismatches, {prefix_bad} prefix violations")


def test_criterion_6_metric_goldens():
    problems = []
    ob = metrics.f1("Obama", ["Barack Obama"])
    if abs(ob.f1 - 2 / 3) > 1e-9 or abs(ob.precision - 1) > 1e-9 or abs(ob.recall - 0.5) > 1e-9:
        problems.append("Obama")
    if metrics.normalize("The Lord of the Rings!") != "lord of rings":
        problems.append("normalize")
    if metrics.exact_match("the Barack Obama", ["Barack Obama"]) != 1 or metrics.exact_match("Obama", ["Barack Obama"]) != 0:
        problems.append("em")
    golden = json.loads((Path(__file__).parent / "golden" / "metrics_golden.json").read_text(encoding="utf-8"))
    for i, case in enumerate(golden):
        r = metrics.f1(case["pred"], case["golds"])
        if (
            metrics.normalize(case["pred"]) != case["normalized_pred"]
            or metrics.exact_match(case["pred"], case["golds"]) != case["em"]
            or max(abs(r.f1 - case["f1"]), abs(r.precision - case["precision"]), abs(r.recall - case["recall"])) > 1e-9
        ):
            problems.append(f"golden-{i}")
    report(6, not problems and len(golden) == 30, f"Obama F1={ob.f1:.12f}; {len(golden)} golden cases; problems={problems}")


def test_criterion_7_ft_filter_fidelity():
    groups = sampled_plan_fixture()
    n_traj = sum(len(g) for g in groups.values())
    pair_mismatch = [
        qid
        for qid, g in groups.items()
        if Counter((p.prompt, p.chosen, p.rejected) for p in build_plan_pairs(qid, g)) != brute_force_pairs(g)
    ]
    n_pairs = sum(sum(brute_force_pairs(g).values()) for g in groups.values())

    planted = rewrite_fixture()
    kept = [json.loads(e.completion)[0]["query"] for e in filter_rewrite_examples(planted)]
    n_bad = sum(1 for t in planted for it in t.iterations for d in it.directives if d.query.startswith("bad-"))
    n_good = sum(1 for t in planted for it in t.iterations for d in it.directives if d.query.startswith("good-"))
    leaked = [q for q in kept if not q.startswith("good-")]

    balance_ok = True
    for verbose, exact in ((3, 10), (3, 6), (4, 3), (0, 5)):
        out = build_reasoner_examples(reasoner_fixture(verbose=verbose, exact=exact), rng_seed=7)
        balance_ok &= len(out) - verbose == min(2 * verbose, exact)

    ok = n_traj == 40 and not pair_mismatch and not leaked and len(kept) == n_good and balance_ok
    report(
        7,
        ok,
        f"{n_traj} trajectories, {n_pairs} pairs equal to brute force (mismatched questions={pair_mismatch}); "
        f"rewrites kept {len(kept)}/{n_good} causal, leaked {len(leaked)}/{n_bad} planted; balance exact={balance_ok}",
    )


def _entry(i):
    return SolvedEntry(i, f"ans{i}", (), f"q{i}", Action.RETRIEVE)


def test_criterion_8_state_machine_invariants():
    rng = random.Random(8)
    applications = violations = rejected = 0
    queries = ["alpha", "beta", "gamma", "delta"]
    state: ExecutionState | None = None
    ids: set[int] = set()
    while applications < 10_000:
        if state is None or not state.pending or rng.random() < 0.05:
            ids = set(range(1, rng.randint(1, 6) + 1))
            state = ExecutionState.initial(ids)
        pending = sorted(state.pending)
        chosen = rng.sample(pending, rng.randint(1, len(pending)))
        outcomes = [
            ResolutionOutcome(i, OutcomeKind.SOLVED, entry=_entry(i))
            if rng.random() < 0.3
            else ResolutionOutcome(i, OutcomeKind.RETRIEVAL_FAILED, failed_query=rng.choice(queries))
            for i in chosen
        ]
        roll = rng.random()
        if roll < 0.05:
            outcomes.append(outcomes[0])
        elif roll < 0.1 and state.solved:
            outcomes.append(ResolutionOutcome(min(state.solved), OutcomeKind.SOLVED, entry=_entry(min(state.solved))))
        before = (dict(state.solved), set(state.pending), {k: tuple(v) for k, v in state.failed.items()})
        applications += 1
        try:
            new = apply_outcomes(state, outcomes)
        except (DuplicateOutcome, ValidationError):
            rejected += 1
            if before != (dict(state.solved), set(state.pending), {k: tuple(v) for k, v in state.failed.items()}):
                violations += 1
            continue
        solved, pending = set(new.solved), set(new.pending)
        if solved & pending or solved | pending != ids:
            violations += 1
        for k, hist in new.failed.items():
            if len(set(hist)) != len(hist) or k not in ids:
                violations += 1
            old = before[2].get(k, ())
            expected = list(old)
            for o in outcomes:
                if o.sub_question_id == k and o.kind is OutcomeKind.RETRIEVAL_FAILED and o.failed_query not in expected:
                    expected.append(o.failed_query)
            if list(hist) != expected:
                violations += 1
        if any(new.solved[i] != e for i, e in before[0].items()):
            violations += 1
        state = new
    report(8, violations == 0, f"{applications} applications ({rejected} rejected as malformed), {violations} invariant violations")


def _scripted_suite_log(tmp: Path) -> bytes:
    h = generate(HARNESS_SEED, SUITE)
    index = h.index()
    recorder = RecordingProvider(cooperative_provider(h))
    qs = [q.question for q in h.questions]
    Engine(Gateway(recorder), index).run_batch(qs, 1)
    save_script(tmp / "script.jsonl", recorder.to_rules())
    trajs = Engine(Gateway(load_script(tmp / "script.jsonl")), index).run_batch(qs, 8)
    jsonl.write(tmp / "log.jsonl", (t.to_dict() for t in trajs))
    return (tmp / "log.jsonl").read_bytes()


def test_criterion_9_determinism(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = _scripted_suite_log(tmp_path / "a")
    b = _scripted_suite_log(tmp_path / "b")
    report(9, a == b and len(a) > 0, f"two scripted suite runs: {len(a)} and {len(b)} bytes, identical={a == b}")


class _RoleTally:
    def __init__(self, inner):
        self.inner = inner
        self.roles: set[str] = set()

    def __call__(self, request):
        self.roles.add(request.role_tag.value)
        return self.inner.complete(request).text


def _signature(harness, index, config):
    sq, failures = unresolvable_question(harness)
    tally = _RoleTally(adversarial_provider(harness, {}))
    engine = Engine(Gateway(FunctionProvider(tally)), index, config)
    trajs = engine.run_batch([q.question for q in harness.questions], 8)
    stuck_tally = _RoleTally(adversarial_provider(harness, failures))
    Engine(Gateway(FunctionProvider(stuck_tally)), index, config).run(sq.question)
    sig = (
        frozenset(tally.roles | stuck_tally.roles),
        all(not t.blueprint.strategy for t in trajs),
        frozenset(it.decision_source for t in trajs for it in t.iterations),
        any(o.extractor_prompt for t in trajs for it in t.iterations for o in it.outcomes),
        tuple(len(t.iterations) for t in trajs),
    )
    return sig, trajs


def test_criterion_10_ablation_modes(harness, harness_index):
    modes = {
        "stride": RunConfig(),
        "no_meta_planner": RunConfig(no_meta_planner=True),
        "no_supervisor": RunConfig(no_supervisor=True),
        "no_extractor": RunConfig(no_extractor=True),
        "no_fallback": RunConfig(no_fallback=True),
    }
    sigs, runs = {}, {}
    for name, cfg in modes.items():
        sigs[name], runs[name] = _signature(harness, harness_index, cfg)
    distinct = len(set(sigs.values())) == len(sigs)
    wide = [i for i, q in enumerate(harness.questions) if q.pattern != "sequential"]
    seq_iters_ok = all(
        len(runs["no_supervisor"][i].iterations) == len(harness.questions[i].gold_blueprint.plan)
        > len(runs["stride"][i].iterations)
        == harness.questions[i].gold_blueprint.depth()
        for i in wide
    )
    report(
        10,
        distinct and seq_iters_ok,
        f"{len(set(sigs.values()))} distinct trajectory structures over {len(sigs)} modes; "
        f"no-supervisor iterations = sub-question count > depth on {len(wide)} parallel questions: {seq_iters_ok}",
    )
