"""Command-line entry point: ingest / run / eval / ftdata / synth."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import ftdata, jsonl, metrics
from .errors import (
    ConfigError,
    DuplicateDocId,
    EmptyCorpus,
    IndexFormatError,
    InsufficientKG,
    ProviderUnavailable,
    ScriptParseError,
    StrideError,
    ValidationError,
)
from .gateway import Gateway, Provider, RecordingProvider, RemoteChatProvider, load_script, save_script
from .pipeline import Engine, RunConfig
from .prompts import PromptSet
from .retrieval import HashEmbedder, Index, RemoteEmbedder, ingest
from .types import Document, Question, Trajectory

logger = logging.getLogger("stride")

# Built-in defaults; a config file overrides these and flags override both.
DEFAULTS: dict[str, Any] = {
    "max_iters": 5,
    "top_k": 5,
    "mode": "stride",
    "no_meta_planner": False,
    "no_supervisor": False,
    "no_extractor": False,
    "no_fallback": False,
    "parallel": None,  # None -> CPU count
    "plan_samples": 1,
    "provider": "remote",
    "script": None,
    "oracle": None,
    "prompts_dir": None,
    "temperature": 1.0,
    "max_tokens": 512,
    "max_in_flight": 4,
    "embedder": "hash",
    "dim": 256,
    "include_title": True,
    "corpus": None,
    "index": None,
    "seed": 0,
}
PATH_KEYS = ("script", "oracle", "prompts_dir", "corpus", "index")
MODES = ("stride", "single-step-rag")
PROVIDERS = ("remote", "scripted", "oracle")


def load_config(path: str | Path | None) -> dict[str, Any]:
    """Read a JSON config; relative paths resolve against the file's directory."""
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in raw.items()}
    unknown = sorted(set(cfg) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    base = Path(path).resolve().parent
    for key in PATH_KEYS:
        if isinstance(cfg.get(key), str) and not os.path.isabs(cfg[key]):
            cfg[key] = str(base / cfg[key])
    return cfg


def resolve_settings(cli: Mapping[str, Any], config: Mapping[str, Any]) -> dict[str, Any]:
    """Merge with precedence command line > config file > built-in default.

    ``cli`` values of None mean "not given on the command line".
    """
    merged = dict(DEFAULTS)
    merged.update({k: v for k, v in config.items() if k in DEFAULTS})
    merged.update({k: v for k, v in cli.items() if k in DEFAULTS and v is not None})
    if merged["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {merged['mode']!r}")
    if merged["provider"] not in PROVIDERS:
        raise ConfigError(f"provider must be one of {PROVIDERS}, got {merged['provider']!r}")
    for key in ("max_iters", "top_k", "plan_samples", "max_tokens", "max_in_flight", "dim"):
        if not isinstance(merged[key], int) or merged[key] < 1:
            raise ConfigError(f"{key} must be a positive integer")
    if merged["parallel"] is None:
        merged["parallel"] = os.cpu_count() or 1
    return merged


def run_config(settings: Mapping[str, Any]) -> RunConfig:
    return RunConfig(
        max_iterations=settings["max_iters"],
        top_k=settings["top_k"],
        no_meta_planner=bool(settings["no_meta_planner"]),
        no_supervisor=bool(settings["no_supervisor"]),
        no_extractor=bool(settings["no_extractor"]),
        no_fallback=bool(settings["no_fallback"]),
        parallel_directives=settings["max_in_flight"],
    )


def build_provider(settings: Mapping[str, Any]) -> Provider:
    kind = settings["provider"]
    if kind == "scripted":
        if not settings["script"]:
            raise ConfigError("provider 'scripted' needs --script")
        return load_script(settings["script"])
    if kind == "oracle":
        from .harness import SynthHarness, cooperative_provider

        if not settings["oracle"]:
            raise ConfigError("provider 'oracle' needs --oracle <synth dir>")
        return cooperative_provider(SynthHarness.load(settings["oracle"]))
    return RemoteChatProvider.from_env()


def build_gateway(settings: Mapping[str, Any], provider: Provider | None = None) -> Gateway:
    return Gateway(
        provider or build_provider(settings),
        temperature=float(settings["temperature"]),
        max_tokens=settings["max_tokens"],
        max_in_flight=settings["max_in_flight"],
    )


def read_corpus(path: str | Path) -> list[Document]:
    return [Document.from_dict(d) for d in jsonl.read(path)]


def read_questions(path: str | Path) -> list[Question]:
    return [Question.from_dict(d) for d in jsonl.read(path)]


def build_embedder(settings: Mapping[str, Any]):
    if settings["embedder"] == "hash":
        return HashEmbedder(settings["dim"])
    if settings["embedder"] == "remote":
        return RemoteEmbedder(RemoteChatProvider.from_env())
    raise ConfigError(f"unknown embedder {settings['embedder']!r}")


def build_index(settings: Mapping[str, Any]) -> Index:
    if not settings["corpus"]:
        raise ConfigError("a corpus is required (--corpus)")
    docs = read_corpus(settings["corpus"])
    embedder = build_embedder(settings)
    if settings["index"]:
        return Index.load(settings["index"], embedder, docs)
    return ingest(docs, embedder, include_title=bool(settings["include_title"]))


def execute(engine: Engine, questions: Sequence[Question], settings: Mapping[str, Any]) -> list[Trajectory]:
    if settings["mode"] == "single-step-rag":
        return engine.run_batch(questions, settings["parallel"], mode="single_step_rag")
    if settings["plan_samples"] > 1:
        out: list[Trajectory] = []
        for q in questions:
            out.extend(engine.run_sampled(q, settings["plan_samples"]))
        return out
    return engine.run_batch(questions, settings["parallel"])


def write_trajectories(path: str | Path, trajectories: Sequence[Trajectory]) -> None:
    jsonl.write(path, (t.to_dict() for t in trajectories), append=True)


def metrics_report(trajectories: Sequence[Trajectory]) -> dict[str, Any]:
    per_question = [
        {"id": t.question.id, "answer": t.final_answer, **(t.metrics or {})} for t in trajectories if t.question.gold_answers
    ]
    scores = [{k: row[k] for k in ("em", "f1", "precision", "recall")} for row in per_question]
    return {"aggregate": metrics.aggregate(scores), "per_question": per_question}


# -- subcommands ------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace, settings: dict[str, Any]) -> int:
    if not args.out:
        raise ConfigError("ingest needs --out")
    if not settings["corpus"]:
        raise ConfigError("ingest needs --corpus")
    index = ingest(read_corpus(settings["corpus"]), build_embedder(settings), include_title=bool(settings["include_title"]))
    index.save(args.out)
    print(f"indexed {len(index)} documents (dim {index.dim}) -> {args.out}")
    return 0


def _questions(args: argparse.Namespace) -> list[Question]:
    if args.question:
        return [Question("q0", args.question, ())]
    if args.questions:
        return read_questions(args.questions)
    raise ConfigError("give --question TEXT or --questions FILE")


def cmd_run(args: argparse.Namespace, settings: dict[str, Any]) -> int:
    questions = _questions(args)
    engine = Engine(build_gateway(settings), build_index(settings), run_config(settings), PromptSet(settings["prompts_dir"]))
    trajectories = execute(engine, questions, settings)
    if args.out:
        write_trajectories(args.out, trajectories)
    if args.answers:
        jsonl.write(args.answers, ({"id": t.question.id, "answer": t.final_answer} for t in trajectories), append=True)
    for t in trajectories:
        print(f"{t.question.id}\t{t.final_answer}")
    return 0


def cmd_eval(args: argparse.Namespace, settings: dict[str, Any]) -> int:
    if args.trajectories:
        trajectories = [Trajectory.from_dict(d) for d in jsonl.read(args.trajectories)]
    else:
        engine = Engine(build_gateway(settings), build_index(settings), run_config(settings), PromptSet(settings["prompts_dir"]))
        trajectories = execute(engine, _questions(args), settings)
        if args.out:
            write_trajectories(args.out, trajectories)
    report = metrics_report(trajectories)
    if args.report:
        Path(args.report).write_text(json.dumps(report, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
    agg = report["aggregate"]
    print(
        f"n={agg['count']} EM={agg['em']:.4f} F1={agg['f1']:.4f} "
        f"P={agg['precision']:.4f} R={agg['recall']:.4f}"
    )
    return 0


def cmd_ftdata(args: argparse.Namespace, settings: dict[str, Any]) -> int:
    trajectories = [Trajectory.from_dict(d) for path in args.trajectories for d in jsonl.read(path)]
    pairs = []
    for qid, samples in sorted(ftdata.group_samples(trajectories).items()):
        pairs.extend(ftdata.build_plan_pairs(qid, samples))
    rewrites = ftdata.filter_rewrite_examples(trajectories)
    extractor = []
    if not args.skip_extractor:
        extractor = ftdata.build_extractor_examples(trajectories, build_gateway(settings), PromptSet(settings["prompts_dir"]))
    reasoner = ftdata.build_reasoner_examples(trajectories, settings["seed"])
    manifest = ftdata.write_outputs(args.out, pairs, rewrites, extractor, reasoner)
    print(" ".join(f"{k}={v}" for k, v in manifest["counts"].items()))
    return 0


def cmd_synth(args: argparse.Namespace, settings: dict[str, Any]) -> int:
    from .harness import HarnessCounts, cooperative_provider, generate

    counts = HarnessCounts(args.entities, args.sequential, args.parallel_q, args.forkjoin)
    harness = generate(settings["seed"], counts, top_k=settings["top_k"])
    out = Path(args.out)
    harness.save(out)

    # Record the oracle on a default-mode run so the suite replays without it.
    recorder = RecordingProvider(cooperative_provider(harness))
    engine = Engine(Gateway(recorder), harness.index(), RunConfig(top_k=settings["top_k"]))
    for sq in harness.questions:
        engine.run(sq.question)
    n_rules = save_script(out / "script.jsonl", recorder.to_rules())
    config = {"provider": "scripted", "script": "script.jsonl", "corpus": "corpus.jsonl", "dim": harness.dim,
              "top_k": settings["top_k"]}
    (out / "config.json").write_text(json.dumps(config, indent=1) + "\n", encoding="utf-8")
    print(f"{len(harness.corpus)} documents, {len(harness.questions)} questions, {n_rules} script rules -> {out}")
    return 0


# -- parser -----------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--corpus", help="corpus file, one document per line")
    p.add_argument("--index", help="index file written by `ingest`")
    p.add_argument("--dim", type=int, help="hash embedding dimension")
    p.add_argument("--embedder", choices=("hash", "remote"))
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_engine(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iters", type=int, help="iteration cap (default 5)")
    p.add_argument("--top-k", type=int, help="documents per retrieval (default 5)")
    p.add_argument("--mode", choices=MODES)
    for flag in ("no-meta-planner", "no-supervisor", "no-extractor", "no-fallback"):
        p.add_argument(f"--{flag}", action="store_true", default=None)
    p.add_argument("--parallel", type=int, help="questions in flight (default CPU count)")
    p.add_argument("--plan-samples", type=int, help="sampled plans per question")
    p.add_argument("--provider", choices=PROVIDERS)
    p.add_argument("--script", help="scripted provider rules file")
    p.add_argument("--oracle", help="synth output directory for the oracle provider")
    p.add_argument("--prompts-dir", help="directory overriding prompt templates")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--max-in-flight", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stride", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="embed a corpus into an index file")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="answer one question or a question file")
    _add_common(p)
    _add_engine(p)
    p.add_argument("--question")
    p.add_argument("--questions")
    p.add_argument("--out", help="trajectory log (appended)")
    p.add_argument("--answers", help="answers file (appended)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score a trajectory log or a live run")
    _add_common(p)
    _add_engine(p)
    p.add_argument("--trajectories")
    p.add_argument("--question")
    p.add_argument("--questions")
    p.add_argument("--out", help="trajectory log for a live run (appended)")
    p.add_argument("--report", help="write the JSON metrics report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ftdata", help="build training files from trajectory logs")
    _add_common(p)
    _add_engine(p)
    p.add_argument("--trajectories", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--skip-extractor", action="store_true", help="do not call the fact selector")
    p.set_defaults(func=cmd_ftdata)

    p = sub.add_parser("synth", help="generate a harness corpus, questions and provider script")
    _add_common(p)
    p.add_argument("--top-k", type=int)
    p.add_argument("--entities", type=int, default=120)
    p.add_argument("--sequential", type=int, default=20)
    p.add_argument("--parallel-q", type=int, default=20, help="parallel-compare questions")
    p.add_argument("--forkjoin", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


_FAILURE_CLASSES: tuple[tuple[tuple[type[BaseException], ...], str], ...] = (
    ((ConfigError,), "config error"),
    ((ProviderUnavailable, ScriptParseError), "provider error"),
    ((OSError, IndexFormatError, DuplicateDocId, EmptyCorpus), "I/O error"),
    ((InsufficientKG,), "synth error"),
    ((ValidationError, ValueError), "input error"),
    ((StrideError,), "error"),
)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cli = {k: v for k, v in vars(args).items() if k not in ("config", "func", "command", "verbose")}
        settings = resolve_settings(cli, load_config(args.config))
        return args.func(args, settings)
    except Exception as exc:
        for classes, label in _FAILURE_CLASSES:
            if isinstance(exc, classes):
                message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
                print(f"stride: {label}: {message}", file=sys.stderr)
                return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
