"""Deterministic oracle harness.

Builds a small knowledge graph, a corpus with one templated sentence per
relation plus distractors, multi-hop questions with gold blueprints, and a
cooperative model provider that answers every role by KG lookup. Everything
is a pure function of the seed, so the whole loop can be asserted without a
real model.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

from . import jsonl
from .errors import InsufficientKG, RewriteExhausted, ValidationError
from .gateway import ChatRequest, FunctionProvider, Role
from .parsing import find_json
from .planner import serialize_blueprint
from .retrieval import HashEmbedder, Index, ingest
from .supervisor import deterministic_policy, mechanical_rewrite
from .types import (
    Action,
    Blueprint,
    Document,
    ExecutionState,
    Question,
    SolvedEntry,
    StrategyStep,
    SubQuestion,
    substitute_placeholders,
)

HARNESS_DIM = 1024
PATTERNS = ("sequential", "parallel_compare", "fork_join")


@dataclass(frozen=True)
class RelationSpec:
    subject_type: str
    object_type: str
    sentence: str  # doc text, slots {s} {o}
    question: str  # sub-question, slot {s}
    phrase: str  # noun phrase used to compose multi-hop questions, slot {x}
    step: str  # type-level strategy step


RELATIONS: dict[str, RelationSpec] = {
    "based_on": RelationSpec(
        "film", "book", "{s} is a film based on the book {o}.", "What book is {s} based on?",
        "the book that {x} is based on", "Identify the book that the film is based on",
    ),
    "written_by": RelationSpec(
        "book", "person", "{s} is a book written by {o}.", "Who wrote {s}?",
        "the author of {x}", "Identify the person who wrote the book",
    ),
    "directed_by": RelationSpec(
        "film", "person", "{s} is a film directed by {o}.", "Who directed {s}?",
        "the director of {x}", "Identify the person who directed the film",
    ),
    "born_in": RelationSpec(
        "person", "city", "{s} was born in the city of {o}.", "In which city was {s} born?",
        "the birthplace of {x}", "Find the city where the person was born",
    ),
    "located_in": RelationSpec(
        "city", "country", "{s} is a city located in {o}.", "In which country is {s} located?",
        "the country where {x} is located", "Find the country that contains the city",
    ),
    "birth_year": RelationSpec(
        "person", "year", "{s} was born in the year {o}.", "In what year was {s} born?",
        "the birth year of {x}", "Find the year the person was born",
    ),
}

SEQUENTIAL_CHAINS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("film", ("based_on", "written_by")),
    ("film", ("directed_by", "born_in")),
    ("book", ("written_by", "born_in")),
    ("person", ("born_in", "located_in")),
    ("film", ("directed_by", "birth_year")),
    ("film", ("based_on", "written_by", "born_in")),
    ("film", ("directed_by", "born_in", "located_in")),
    ("book", ("written_by", "born_in", "located_in")),
)

COMPARE_TEMPLATE = "Who is older, {a} (born #{i}) or {b} (born #{j})?"
SAME_TEMPLATE = "Are #{i} and #{j} the same person?"
_COMPARE_RE = re.compile(r"Who is older, (?P<a>.+?) \(born (?P<ya>[^)]+)\) or (?P<b>.+?) \(born (?P<yb>[^)]+)\)\?")
_SAME_RE = re.compile(r"Are (?P<a>.+?) and (?P<b>.+?) the same person\?")


def _template_regex(template: str) -> re.Pattern[str]:
    return re.compile(re.escape(template).replace(re.escape("{s}"), "(?P<s>.+?)"))


_LOOKUP_RES = {pred: _template_regex(spec.question) for pred, spec in RELATIONS.items()}

_SYLLABLES = (
    "ka lo mi ren ta vo sel dar qui nor bel fen gar hul ix jor kel lun mar "
    "nev or pel rus sa tor ul ven wil xan yor zed bra cor dri esk fal gli "
    "hov ilt kra lem mok nus ost pra rel siv tam urn vex"
).split()
_RESERVED = {"a", "an", "the", "same", "both", "older", "which", "of", "or", "and", "who", "is", "was", "in"}

_TYPE_SHARE = (("person", 0.35), ("film", 0.2), ("book", 0.2), ("city", 0.15), ("country", 0.1))


@dataclass(frozen=True)
class Entity:
    id: str
    name: str
    type: str


@dataclass(frozen=True)
class Relation:
    subject: str
    predicate: str
    object: str


@dataclass(frozen=True)
class SynthKG:
    entities: tuple[Entity, ...]
    relations: tuple[Relation, ...]
    seed: int

    def __post_init__(self) -> None:
        names = [e.name for e in self.entities]
        if len(set(names)) != len(names):
            raise ValidationError("entity names must be unique")
        ids = {e.id for e in self.entities}
        for rel in self.relations:
            if rel.subject not in ids or rel.object not in ids:
                raise ValidationError(f"relation endpoint missing: {rel}")

    def entity(self, entity_id: str) -> Entity:
        return self._by_id[entity_id]

    @property
    def _by_id(self) -> dict[str, Entity]:
        cache = self.__dict__.get("_id_cache")
        if cache is None:
            cache = {e.id: e for e in self.entities}
            object.__setattr__(self, "_id_cache", cache)
        return cache

    def by_name(self, name: str) -> Entity | None:
        cache = self.__dict__.get("_name_cache")
        if cache is None:
            cache = {e.name: e for e in self.entities}
            object.__setattr__(self, "_name_cache", cache)
        return cache.get(name)

    def lookup(self, subject_id: str, predicate: str) -> Relation | None:
        cache = self.__dict__.get("_rel_cache")
        if cache is None:
            cache = {(r.subject, r.predicate): r for r in self.relations}
            object.__setattr__(self, "_rel_cache", cache)
        return cache.get((subject_id, predicate))

    def sentence(self, rel: Relation) -> str:
        spec = RELATIONS[rel.predicate]
        return spec.sentence.format(s=self.entity(rel.subject).name, o=self.entity(rel.object).name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "entities": [{"id": e.id, "name": e.name, "type": e.type} for e in self.entities],
            "relations": [{"subject": r.subject, "predicate": r.predicate, "object": r.object} for r in self.relations],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> SynthKG:
        return cls(
            entities=tuple(Entity(**e) for e in d["entities"]),
            relations=tuple(Relation(**r) for r in d["relations"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class SynthQuestion:
    question: Question
    gold_blueprint: Blueprint
    pattern: str
    expected_iterations: int
    gold_sub_answers: tuple[str, ...] = ()
    support: tuple[str, ...] = ()  # doc texts that together entail the answer

    def __post_init__(self) -> None:
        if self.pattern not in PATTERNS:
            raise ValidationError(f"unknown pattern {self.pattern!r}")
        if self.expected_iterations != self.gold_blueprint.depth():
            raise ValidationError("expected_iterations must equal the gold DAG depth")

    def gold_query(self, sq_id: int) -> str:
        answers = dict(enumerate(self.gold_sub_answers, 1))
        return substitute_placeholders(self.gold_blueprint.by_id(sq_id).template_text, answers)

    def to_dict(self) -> dict[str, Any]:
        return self.question.to_dict() | {
            "pattern": self.pattern,
            "expected_iterations": self.expected_iterations,
            "gold_blueprint": self.gold_blueprint.to_dict(),
            "gold_sub_answers": list(self.gold_sub_answers),
            "support": list(self.support),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> SynthQuestion:
        return cls(
            question=Question.from_dict(d),
            gold_blueprint=Blueprint.from_dict(d["gold_blueprint"]),
            pattern=d["pattern"],
            expected_iterations=int(d["expected_iterations"]),
            gold_sub_answers=tuple(d.get("gold_sub_answers", ())),
            support=tuple(d.get("support", ())),
        )


class SynthHarness(NamedTuple):
    kg: SynthKG
    corpus: list[Document]
    questions: list[SynthQuestion]
    dim: int = HARNESS_DIM
    top_k: int = 5

    def index(self, backend: str | None = None) -> Index:
        return ingest(self.corpus, HashEmbedder(self.dim), backend=backend)

    def by_text(self) -> dict[str, SynthQuestion]:
        return {sq.question.text: sq for sq in self.questions}

    def doc_relations(self) -> dict[str, Relation]:
        """Doc id -> KG relation for every non-distractor document."""
        by_sentence = {self.kg.sentence(r): r for r in self.kg.relations}
        return {d.id: by_sentence[d.text] for d in self.corpus if d.text in by_sentence}

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jsonl.write(out / "corpus.jsonl", (d.to_dict() for d in self.corpus))
        jsonl.write(out / "questions.jsonl", (q.to_dict() for q in self.questions))
        meta = self.kg.to_dict() | {"dim": self.dim, "top_k": self.top_k}
        (out / "kg.json").write_text(json.dumps(meta, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, in_dir: str | Path) -> SynthHarness:
        src = Path(in_dir)
        meta = json.loads((src / "kg.json").read_text(encoding="utf-8"))
        return cls(
            kg=SynthKG.from_dict(meta),
            corpus=[Document.from_dict(d) for d in jsonl.read(src / "corpus.jsonl")],
            questions=[SynthQuestion.from_dict(d) for d in jsonl.read(src / "questions.jsonl")],
            dim=int(meta.get("dim", HARNESS_DIM)),
            top_k=int(meta.get("top_k", 5)),
        )


@dataclass(frozen=True)
class HarnessCounts:
    entities: int = 120
    sequential_q: int = 20
    parallel_q: int = 20
    forkjoin_q: int = 20

    def __post_init__(self) -> None:
        if min(self.entities, self.sequential_q, self.parallel_q, self.forkjoin_q) < 1:
            raise ValidationError("harness counts must be positive")


# --------------------------------------------------------------------------
# generation


class _Names:
    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set()

    def word(self) -> str:
        while True:
            w = "".join(self.rng.choice(_SYLLABLES) for _ in range(self.rng.choice((2, 3)))).capitalize()
            if w.lower() not in _RESERVED:
                return w

    def fresh(self, kind: str) -> str:
        while True:
            if kind in ("person", "film", "book"):
                name = f"{self.word()} {self.word()}"
            else:
                name = self.word()
            if name not in self.used:
                self.used.add(name)
                return name


def _build_kg(seed: int, n_entities: int, rng: random.Random, names: _Names) -> SynthKG:
    counts = {t: max(3, round(n_entities * share)) for t, share in _TYPE_SHARE}
    entities: list[Entity] = []
    by_type: dict[str, list[Entity]] = {}
    for etype, n in counts.items():
        for _ in range(n):
            ent = Entity(f"e{len(entities):05d}", names.fresh(etype), etype)
            entities.append(ent)
            by_type.setdefault(etype, []).append(ent)
    years: dict[int, Entity] = {}

    def year_entity(y: int) -> Entity:
        if y not in years:
            ent = Entity(f"e{len(entities):05d}", str(y), "year")
            names.used.add(ent.name)
            entities.append(ent)
            years[y] = ent
        return years[y]

    rels: list[Relation] = []
    for film in by_type["film"]:
        rels.append(Relation(film.id, "directed_by", rng.choice(by_type["person"]).id))
        rels.append(Relation(film.id, "based_on", rng.choice(by_type["book"]).id))
    for book in by_type["book"]:
        rels.append(Relation(book.id, "written_by", rng.choice(by_type["person"]).id))
    for person in by_type["person"]:
        rels.append(Relation(person.id, "born_in", rng.choice(by_type["city"]).id))
        rels.append(Relation(person.id, "birth_year", year_entity(rng.randrange(1900, 1990)).id))
    for city in by_type["city"]:
        rels.append(Relation(city.id, "located_in", rng.choice(by_type["country"]).id))
    return SynthKG(tuple(entities), tuple(rels), seed)


def _distractor_docs(n: int, rng: random.Random, names: _Names) -> list[tuple[str, str]]:
    out = []
    preds = sorted(RELATIONS)
    for _ in range(n):
        spec = RELATIONS[rng.choice(preds)]
        s = names.fresh(spec.subject_type)
        o = str(rng.randrange(1900, 1990)) if spec.object_type == "year" else names.fresh(spec.object_type)
        out.append((s, spec.sentence.format(s=s, o=o)))
    return out


def _sequential(kg: SynthKG, start: Entity, chain: Sequence[str]) -> SynthQuestion:
    phrase = start.name
    plan = []
    answers = []
    support = []
    cur = start
    for i, pred in enumerate(chain, 1):
        spec = RELATIONS[pred]
        phrase = spec.phrase.format(x=phrase)
        subject_slot = cur.name if i == 1 else f"#{i - 1}"
        plan.append(SubQuestion(i, spec.question.format(s=subject_slot), frozenset() if i == 1 else frozenset({i - 1})))
        rel = kg.lookup(cur.id, pred)
        assert rel is not None
        support.append(kg.sentence(rel))
        cur = kg.entity(rel.object)
        answers.append(cur.name)
    text = f"What is {phrase}?"
    bp = Blueprint(tuple(StrategyStep(i, RELATIONS[p].step) for i, p in enumerate(chain, 1)), tuple(plan))
    q = Question(id="", text=text, gold_answers=(answers[-1],), hop_count=len(chain))
    return SynthQuestion(q, bp, "sequential", len(chain), tuple(answers), tuple(support))


def _compare(kg: SynthKG, a: Entity, b: Entity) -> SynthQuestion | None:
    ra, rb = kg.lookup(a.id, "birth_year"), kg.lookup(b.id, "birth_year")
    assert ra is not None and rb is not None
    ya, yb = int(kg.entity(ra.object).name), int(kg.entity(rb.object).name)
    if ya == yb:
        return None
    q_spec = RELATIONS["birth_year"]
    plan = (
        SubQuestion(1, q_spec.question.format(s=a.name)),
        SubQuestion(2, q_spec.question.format(s=b.name)),
        SubQuestion(3, COMPARE_TEMPLATE.format(a=a.name, b=b.name, i=1, j=2), frozenset({1, 2})),
    )
    strategy = (
        StrategyStep(1, "Find the birth year of the first person"),
        StrategyStep(2, "Find the birth year of the second person"),
        StrategyStep(3, "Compare the two birth years to decide which person is older"),
    )
    older = a.name if ya < yb else b.name
    q = Question(id="", text=f"Who is older, {a.name} or {b.name}?", gold_answers=(older,), hop_count=3)
    return SynthQuestion(
        q, Blueprint(strategy, plan), "parallel_compare", 2, (str(ya), str(yb), older), (kg.sentence(ra), kg.sentence(rb))
    )


def _fork_join(kg: SynthKG, film: Entity, book: Entity) -> SynthQuestion:
    rd, rw = kg.lookup(film.id, "directed_by"), kg.lookup(book.id, "written_by")
    assert rd is not None and rw is not None
    director, author = kg.entity(rd.object).name, kg.entity(rw.object).name
    plan = (
        SubQuestion(1, RELATIONS["directed_by"].question.format(s=film.name)),
        SubQuestion(2, RELATIONS["written_by"].question.format(s=book.name)),
        SubQuestion(3, SAME_TEMPLATE.format(i=1, j=2), frozenset({1, 2})),
    )
    strategy = (
        StrategyStep(1, RELATIONS["directed_by"].step),
        StrategyStep(2, RELATIONS["written_by"].step),
        StrategyStep(3, "Check whether the two persons are the same person"),
    )
    verdict = "yes" if director == author else "no"
    text = f"Is the director of {film.name} the same person as the author of {book.name}?"
    q = Question(id="", text=text, gold_answers=(verdict,), hop_count=3)
    return SynthQuestion(
        q, Blueprint(strategy, plan), "fork_join", 2, (director, author, verdict), (kg.sentence(rd), kg.sentence(rw))
    )


def _gold_state(sq: SynthQuestion, upto: int) -> ExecutionState:
    solved = {
        i: SolvedEntry(i, sq.gold_sub_answers[i - 1], (), sq.gold_query(i), Action.RETRIEVE) for i in range(1, upto)
    }
    ids = sq.gold_blueprint.ids
    return ExecutionState(solved=solved, pending=ids - solved.keys(), failed={})


def retrieval_probes(sq: SynthQuestion) -> list[tuple[int, str]]:
    """(sub-question id, query) pairs the harness guarantees are retrievable:
    each lookup step's gold query plus its first two mechanical rewrites."""
    probes = []
    for sub in sq.gold_blueprint.plan:
        if sub.template_text.startswith(("Who is older", "Are #")):
            continue
        base = sq.gold_query(sub.id)
        state = _gold_state(sq, sub.id)
        probes.append((sub.id, base))
        failed_once = ExecutionState(state.solved, state.pending, {sub.id: (base,)})
        first = mechanical_rewrite(sub, failed_once)
        probes.append((sub.id, first))
        try:
            second = mechanical_rewrite(sub, ExecutionState(state.solved, state.pending, {sub.id: (base, first)}))
            probes.append((sub.id, second))
        except RewriteExhausted:
            pass
    return probes


def _sufficient(sq: SynthQuestion, index: Index, k: int) -> bool:
    support_by_step = {}
    for sub in sq.gold_blueprint.plan:
        if sub.id <= len(sq.support):
            support_by_step[sub.id] = sq.support[sub.id - 1]
    for sub_id, query in retrieval_probes(sq):
        needed = support_by_step.get(sub_id)
        texts = {d.text for d in index.retrieve(query, k)}
        if needed is not None and needed not in texts:
            return False
    return True


def generate(
    seed: int,
    counts: HarnessCounts | Mapping[str, int] | None = None,
    top_k: int = 5,
    dim: int = HARNESS_DIM,
    max_tries: int = 200,
) -> SynthHarness:
    """Build a seeded KG, corpus and question suite.

    Every question's retrieval steps are checked against the hash-embedded
    index: the supporting document must rank within ``top_k`` for the gold
    query and its mechanical rewrites. Candidates that fail are discarded.
    """
    if counts is None:
        counts = HarnessCounts()
    elif not isinstance(counts, HarnessCounts):
        counts = HarnessCounts(**counts)
    rng = random.Random(seed)
    names = _Names(rng)
    kg = _build_kg(seed, counts.entities, rng, names)

    sentences = [(kg.entity(r.subject).name, kg.sentence(r)) for r in kg.relations]
    sentences += _distractor_docs(3 * len(sentences), rng, names)
    rng.shuffle(sentences)
    corpus = [Document(f"d{i:05d}", title, text) for i, (title, text) in enumerate(sentences)]
    index = ingest(corpus, HashEmbedder(dim))

    by_type: dict[str, list[Entity]] = {}
    for e in kg.entities:
        by_type.setdefault(e.type, []).append(e)
    seen: set[str] = set()
    out: list[SynthQuestion] = []

    def accept(cand: SynthQuestion | None) -> bool:
        if cand is None or cand.question.text in seen or not _sufficient(cand, index, top_k):
            return False
        seen.add(cand.question.text)
        out.append(cand)
        return True

    def fill(n: int, make) -> None:
        got = tries = 0
        while got < n:
            if tries >= max_tries * n:
                raise InsufficientKG(f"could only build {got}/{n} questions; enlarge the KG")
            tries += 1
            got += accept(make(got))

    def make_seq(i: int) -> SynthQuestion:
        start_type, chain = SEQUENTIAL_CHAINS[(i + rng.randrange(len(SEQUENTIAL_CHAINS))) % len(SEQUENTIAL_CHAINS)]
        return _sequential(kg, rng.choice(by_type[start_type]), chain)

    def make_cmp(i: int) -> SynthQuestion | None:
        a, b = rng.sample(by_type["person"], 2)
        return _compare(kg, a, b)

    authored: dict[str, list[Entity]] = {}
    for r in kg.relations:
        if r.predicate == "written_by":
            authored.setdefault(r.object, []).append(kg.entity(r.subject))

    def make_fj(i: int) -> SynthQuestion:
        film = rng.choice(by_type["film"])
        rel = kg.lookup(film.id, "directed_by")
        assert rel is not None
        same = authored.get(rel.object, [])
        book = rng.choice(same) if same and i % 2 == 0 else rng.choice(by_type["book"])
        return _fork_join(kg, film, book)

    fill(counts.sequential_q, make_seq)
    fill(counts.parallel_q, make_cmp)
    fill(counts.forkjoin_q, make_fj)

    questions = []
    for i, sq in enumerate(out):
        prefix = {"sequential": "seq", "parallel_compare": "cmp", "fork_join": "fj"}[sq.pattern]
        q = Question(f"{prefix}-{i:03d}", sq.question.text, sq.question.gold_answers, sq.question.hop_count)
        questions.append(SynthQuestion(q, sq.gold_blueprint, sq.pattern, sq.expected_iterations, sq.gold_sub_answers, sq.support))
    return SynthHarness(kg, corpus, questions, dim, top_k)


# --------------------------------------------------------------------------
# oracle providers

_LINE_RE = re.compile(r"^(Query|Question):\s*(.*)$", re.MULTILINE)
_DOC_RE = re.compile(r"^\[doc (?P<id>[^\]]+)\] (?P<title>.*?): (?P<text>.*)$", re.MULTILINE)
_FACT_RE = re.compile(r"^(?:- |\d+\. )(?P<text>.*?) \(doc (?P<doc>[^)]+)\)$", re.MULTILINE)
_STATE_RE = re.compile(r"<state>\s*(.*?)\s*</state>", re.DOTALL)
_SELECT_RE = re.compile(r"Given query: (?P<q>.*?), and candidate facts:\n(?P<facts>.*?)\nselect only", re.DOTALL)


def _field(prompt: str, name: str) -> str:
    for m in _LINE_RE.finditer(prompt):
        if m.group(1) == name:
            return m.group(2).strip()
    return ""


class Oracle:
    """Answers every role of the engine from the harness KG."""

    def __init__(self, harness: SynthHarness, failing_phrasings: Mapping[str, bool] | None = None):
        self.h = harness
        self.kg = harness.kg
        self.questions = harness.by_text()
        self.doc_rel = harness.doc_relations()
        self.doc_text = {d.id: d.text for d in harness.corpus}
        self.fail_once = {q for q, permanent in (failing_phrasings or {}).items() if not permanent}
        self.fail_always: set[tuple[str, str]] = set()
        for q, permanent in (failing_phrasings or {}).items():
            if permanent:
                self.fail_always |= set(self.needed(q) or ())

    # -- query understanding ----------------------------------------------

    def needed(self, query: str) -> list[tuple[str, str]] | None:
        """KG (subject id, predicate) keys a query asks about; None if unknown."""
        m = _COMPARE_RE.search(query)
        if m:
            keys = []
            for name in (m.group("a"), m.group("b")):
                ent = self.kg.by_name(name)
                if ent is not None:
                    keys.append((ent.id, "birth_year"))
            return keys or None
        for pred, pattern in _LOOKUP_RES.items():
            for m in pattern.finditer(query):
                ent = self.kg.by_name(m.group("s"))
                if ent is not None and ent.type == RELATIONS[pred].subject_type:
                    return [(ent.id, pred)]
        return None

    def _supporting(self, query: str, doc_ids: Iterable[str]) -> list[tuple[str, str]]:
        """(sentence, doc id) pairs among ``doc_ids`` that bear on ``query``."""
        doc_ids = list(doc_ids)
        whole = self.questions.get(query)
        if whole is not None:
            return [(self.doc_text[d], d) for d in doc_ids if self.doc_text[d] in whole.support]
        keys = self.needed(query)
        if keys is not None:
            if set(keys) & self.fail_always:
                return []
            hits = [(self.doc_text[d], d) for d in doc_ids if (rel := self.doc_rel.get(d)) and (rel.subject, rel.predicate) in keys]
            if not hits:
                return []
            subjects = {s for s, _ in keys}
            extras = [
                (self.doc_text[d], d)
                for d in doc_ids
                if (rel := self.doc_rel.get(d)) and rel.subject in subjects and (rel.subject, rel.predicate) not in keys
            ]
            return hits + extras
        m = _SAME_RE.search(query)
        if m:
            names = (m.group("a"), m.group("b"))
            return [(self.doc_text[d], d) for d in doc_ids if d in self.doc_rel and any(n in self.doc_text[d] for n in names)]
        return []

    def answer_for(self, query: str, context: set[str]) -> str:
        whole = self.questions.get(query)
        if whole is not None:
            ok = bool(whole.support) and all(s in context for s in whole.support)
            return whole.question.gold_answers[0] if ok else "unknown"
        m = _COMPARE_RE.search(query)
        if m:
            try:
                ya, yb = int(m.group("ya")), int(m.group("yb"))
            except ValueError:
                return "unknown"
            return m.group("a") if ya < yb else m.group("b")
        m = _SAME_RE.search(query)
        if m:
            return "yes" if m.group("a").strip() == m.group("b").strip() else "no"
        keys = self.needed(query)
        if not keys:
            return "unknown"
        rel = self.kg.lookup(*keys[0])
        if rel is None or self.kg.sentence(rel) not in context:
            return "unknown"
        return self.kg.entity(rel.object).name

    # -- roles ------------------------------------------------------------

    def plan(self, prompt: str) -> str:
        sq = self.questions.get(_field(prompt, "Question"))
        if sq is None:
            return "I cannot plan this question."
        return serialize_blueprint(sq.gold_blueprint)

    def supervise(self, prompt: str) -> str:
        m = _STATE_RE.search(prompt)
        if m is None:
            return "no state given"
        payload = json.loads(m.group(1))
        plan = tuple(
            SubQuestion(int(p["id"]), p["question"], frozenset(int(x) for x in p["depends_on"])) for p in payload["plan"]
        )
        solved = {
            int(s["id"]): SolvedEntry(int(s["id"]), s["answer"], (), "", Action.RETRIEVE) for s in payload["solved"]
        }
        failed = {int(k): tuple(v) for k, v in payload.get("failed", {}).items()}
        state = ExecutionState(solved=solved, pending=frozenset(payload["pending"]), failed=failed)
        directives = deterministic_policy(plan, state)
        return json.dumps(
            [{"id": d.sub_question_id, "action": d.action.value, "query": d.query} for d in directives],
            ensure_ascii=False,
        )

    def extract(self, prompt: str) -> str:
        query = _field(prompt, "Query")
        if query in self.fail_once:
            return "NONE"
        doc_ids = [m.group("id") for m in _DOC_RE.finditer(prompt)]
        facts = self._supporting(query, doc_ids)
        if not facts:
            return "NONE"
        return "\n".join(f"{i}. {text} (doc {doc})" for i, (text, doc) in enumerate(facts, 1))

    def reason(self, prompt: str) -> str:
        query = _field(prompt, "Query")
        context = {m.group("text") for m in _FACT_RE.finditer(prompt)}
        return f"Looking up the evidence for: {query}\nAnswer: {self.answer_for(query, context)}"

    def fallback(self, prompt: str) -> str:
        sq = self.questions.get(_field(prompt, "Question"))
        seen = {m.group("text") for m in _FACT_RE.finditer(prompt)} | {m.group("text") for m in _DOC_RE.finditer(prompt)}
        if sq is not None and sq.support and all(s in seen for s in sq.support):
            return f"Answer: {sq.question.gold_answers[0]}"
        return "Answer: unknown"

    def select(self, prompt: str) -> str:
        m = _SELECT_RE.search(prompt)
        if m is None:
            return "NONE"
        lines = [ln for ln in m.group("facts").splitlines() if ln.strip()]
        keys = self.needed(m.group("q")) or []
        wanted = {self.kg.sentence(r) for key in keys if (r := self.kg.lookup(*key))}
        keep = [ln for ln in lines if (fm := _FACT_RE.match(ln)) and fm.group("text") in wanted]
        return "\n".join(keep or lines)

    def __call__(self, request: ChatRequest) -> str:
        handler = {
            Role.PLANNER: self.plan,
            Role.SUPERVISOR: self.supervise,
            Role.EXTRACTOR: self.extract,
            Role.REASONER: self.reason,
            Role.FALLBACK: self.fallback,
            Role.FACT_SELECTOR: self.select,
        }[request.role_tag]
        return handler(request.user_prompt)


def cooperative_provider(harness: SynthHarness) -> FunctionProvider:
    return FunctionProvider(Oracle(harness))


def adversarial_provider(harness: SynthHarness, failing_phrasings: Mapping[str, bool]) -> FunctionProvider:
    """Like the cooperative provider but extraction fails for listed phrasings.

    ``failing_phrasings`` maps a query string to ``permanent``: False fails that
    exact phrasing only (a reformulation succeeds); True fails every query that
    targets the same KG relation.
    """
    return FunctionProvider(Oracle(harness, failing_phrasings))


def first_phrasing_failures(harness: SynthHarness, rng_seed: int = 0) -> dict[str, tuple[str, int]]:
    """Pick one lookup sub-question per harness question to fail on first try.

    Returns question id -> (gold query phrasing, sub-question id). Phrasings
    repeat across questions, so pair each pick with its own provider.
    """
    rng = random.Random(rng_seed)
    picks = {}
    for sq in harness.questions:
        queries = [sq.gold_query(s.id) for s in sq.gold_blueprint.plan]
        lookups = sorted({sid for sid, _ in retrieval_probes(sq) if queries.count(sq.gold_query(sid)) == 1})
        sid = rng.choice(lookups)
        picks[sq.question.id] = (sq.gold_query(sid), sid)
    return picks


def unresolvable_question(harness: SynthHarness, pattern: str = "sequential") -> tuple[SynthQuestion, dict[str, bool]]:
    """A harness question plus a failure map that makes its first step permanently fail."""
    sq = next(q for q in harness.questions if q.pattern == pattern)
    return sq, {sq.gold_query(1): True}
