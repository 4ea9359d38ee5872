"""Command-line surface for batch pipeline operation and report emission.

Runs are configured by a TOML file (see README) with per-flag overrides;
flags win. Exit codes: 0 success, 1 run-level failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from genselect import pipeline
from genselect.backend import (
    BackendError,
    BackendRegistry,
    CompletionCache,
    CompletionClient,
)
from genselect.data import DataError, Dataset, Split, load_dataset
from genselect.metric import coverage
from genselect.pipeline import (
    PipelineError,
    RunManifest,
    SelectorKind,
    StageError,
    load_choices,
    load_cots,
    load_manifest,
    load_selections,
    write_choices,
    write_cots,
    write_errors,
    write_manifest,
    write_selections,
)
from genselect.prompts import PromptError, TemplateSet
from genselect.retriever import RetrievalError, score_candidates

logger = logging.getLogger(__name__)

_RUN_ERRORS = (BackendError, DataError, PipelineError, PromptError, RetrievalError, OSError, ValueError, KeyError)


class UsageError(Exception):
    """Flag combination argparse cannot express (exit code 2)."""


@dataclass
class RunConfig:
    """Everything a run needs; serializable so manifest + config reconstruct it."""

    questions: list[str] = field(default_factory=list)
    annotations: list[str] = field(default_factory=list)
    contexts: str = ""
    embeddings: str = ""
    answers_per_question: int = 10
    backends: dict = field(default_factory=dict)
    out: str = "runs"
    cache_dir: str = "cache"
    parallel: int = 8
    shots_test: int = pipeline.TEST_SHOTS
    shots_train: int = pipeline.TRAIN_SHOTS
    select_shots: int = pipeline.SELECT_SHOTS
    image_weight: float = 0.5
    template_dir: str = ""
    seed: int | None = None  # reserved; the pipeline is deterministic given cache

    @staticmethod
    def from_file(path: str | Path) -> "RunConfig":
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        cfg = RunConfig()
        dataset = doc.get("dataset", {})
        cfg.questions = [str(p) for p in _as_list(dataset.get("questions", []))]
        cfg.annotations = [str(p) for p in _as_list(dataset.get("annotations", []))]
        cfg.contexts = str(dataset.get("contexts", ""))
        cfg.embeddings = str(dataset.get("embeddings", ""))
        cfg.answers_per_question = int(dataset.get("answers_per_question", 10))
        cfg.backends = dict(doc.get("backends", {}))
        run = doc.get("run", {})
        cfg.out = str(run.get("out", cfg.out))
        cfg.cache_dir = str(run.get("cache_dir", cfg.cache_dir))
        cfg.parallel = int(run.get("parallel", cfg.parallel))
        cfg.shots_test = int(run.get("shots_test", cfg.shots_test))
        cfg.shots_train = int(run.get("shots_train", cfg.shots_train))
        cfg.select_shots = int(run.get("select_shots", cfg.select_shots))
        cfg.image_weight = float(run.get("image_weight", cfg.image_weight))
        cfg.template_dir = str(run.get("template_dir", ""))
        return cfg

    def dataset_paths(self) -> dict:
        return {
            "questions": list(self.questions),
            "annotations": list(self.annotations),
            "contexts": self.contexts,
            "embeddings": self.embeddings,
        }


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "parallel", None):
        cfg.parallel = args.parallel
    if getattr(args, "template_dir", None):
        cfg.template_dir = args.template_dir
    if getattr(args, "cache_dir", None):
        cfg.cache_dir = args.cache_dir
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _load_cfg_dataset(cfg: RunConfig) -> Dataset:
    if not cfg.questions or not cfg.annotations or not cfg.contexts or not cfg.embeddings:
        raise PipelineError("config is missing dataset paths (dataset.questions/annotations/contexts/embeddings)")
    return load_dataset(
        cfg.questions,
        cfg.annotations,
        cfg.contexts,
        cfg.embeddings,
        answers_per_question=cfg.answers_per_question,
    )


def _templates(cfg: RunConfig) -> TemplateSet:
    if cfg.template_dir:
        return TemplateSet.from_dir(cfg.template_dir)
    return TemplateSet.packaged()


def _registry(cfg: RunConfig) -> BackendRegistry:
    registry = BackendRegistry()
    for name, decl in cfg.backends.items():
        kind = decl.get("type", "http")
        if kind == "replay":
            registry.register_replay(name, decl["fixture"], model_id=decl.get("model_id"))
        elif kind == "http":
            registry.register_http(
                name,
                url=decl.get("url"),
                key_env=decl.get("key_env"),
                model_id=decl.get("model_id"),
            )
        else:
            raise PipelineError(f"backend {name!r}: unknown type {kind!r}")
    return registry


def _client(cfg: RunConfig, registry: BackendRegistry, name: str) -> CompletionClient:
    backend = registry.get(name)
    cache_path = Path(cfg.cache_dir) / f"{backend.name}.jsonl"
    return CompletionClient(backend=backend, cache=CompletionCache(cache_path))


def _run_dir(cfg: RunConfig, run_id: str) -> Path:
    path = Path(cfg.out) / run_id
    path.mkdir(parents=True, exist_ok=True)
    return path


def _update_manifest(
    run_dir: Path,
    run_id: str,
    cfg: RunConfig,
    backend_name: str | None,
    templates: TemplateSet,
    stage: str,
    shot_count: int | None,
    params: pipeline.StageParams | None,
    stats: dict,
) -> None:
    manifest_path = run_dir / "manifest.json"
    manifest = load_manifest(manifest_path) if manifest_path.exists() else RunManifest(run_id=run_id)
    manifest.run_id = run_id
    manifest.dataset = cfg.dataset_paths()
    if backend_name and backend_name not in manifest.backends:
        manifest.backends.append(backend_name)
    manifest.template_version = templates.version
    if shot_count is not None:
        manifest.shot_counts[stage] = shot_count
    if params is not None:
        manifest.stage_params[stage] = params.to_json_obj()
    manifest.stats[stage] = stats
    write_manifest(manifest_path, manifest)


def _merge_errors(run_dir: Path, run_id: str, stage: str, errors: list[StageError]) -> None:
    path = run_dir / "errors.jsonl"
    existing: list[StageError] = []
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            lines = [line for line in fh if line.strip()]
        for line in lines[1:]:
            obj = json.loads(line)
            if obj["stage"] != stage:
                existing.append(StageError(obj["question_id"], obj["stage"], obj["message"]))
    write_errors(path, run_id, existing + errors)


def _default_run_id(args) -> str:
    if getattr(args, "run_id", None):
        return args.run_id
    return "run"


# --------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args) -> int:
    dataset = load_dataset(
        args.questions,
        args.annotations,
        args.contexts,
        args.embeddings,
        answers_per_question=args.answers_per_question,
    )
    print(f"train instances: {dataset.count(Split.TRAIN)}")
    print(f"test instances: {dataset.count(Split.TEST)}")
    print(f"contexts: {len(dataset.contexts)}")
    print(f"image embeddings: {len(dataset.image_embeddings)}")
    print(f"question embeddings: {len(dataset.question_embeddings)}")
    print(f"warnings: {len(dataset.warnings)}")
    for warning in dataset.warnings:
        print(f"  {warning}")
    return 0


def cmd_shots(args) -> int:
    cfg = _load_config(args)
    dataset = _load_cfg_dataset(cfg)
    target = dataset.instances.get(args.question_id)
    if target is None:
        raise PipelineError(f"unknown question_id {args.question_id}")
    ranked = score_candidates(target, dataset, image_weight=cfg.image_weight)
    for scored in ranked[: args.shots]:
        shot = dataset.instances[scored.train_question_id]
        print(f"{scored.train_question_id}\t{scored.score:.4f}\t{shot.question}")
    return 0


def _dry_run_report(stage: str, requests, cache: CompletionCache) -> int:
    keys = [r.cache_key() for r in requests]
    uncached = sum(1 for k in keys if k not in cache)
    print(f"{stage}: {len(keys)} prompts, {uncached} estimated wire calls ({len(keys) - uncached} cached)")
    return 0


def cmd_gen_choices(args) -> int:
    cfg = _load_config(args)
    dataset = _load_cfg_dataset(cfg)
    templates = _templates(cfg)
    split = Split(args.split)
    n_shots = args.shots if args.shots else (cfg.shots_test if split == Split.TEST else cfg.shots_train)
    registry = _registry(cfg)
    client = _client(cfg, registry, args.backend)
    if args.dry_run:
        requests = pipeline.plan_requests(
            dataset, split, client.backend.model_id, "gen-choices",
            n_shots=n_shots, templates=templates, image_weight=cfg.image_weight,
        )
        return _dry_run_report("gen-choices", requests, client.cache)
    run_id = _default_run_id(args)
    run_dir = _run_dir(cfg, run_id)
    errors: list[StageError] = []
    before = client.requests_made
    choices = pipeline.generate_choices(
        dataset,
        split,
        client,
        n_shots=n_shots,
        templates=templates,
        image_weight=cfg.image_weight,
        parallel=cfg.parallel,
        error_sink=errors,
    )
    suffix = "" if split == Split.TEST else f".{split.value}"
    write_choices(run_dir / f"choices{suffix}.jsonl", run_id, choices)
    _merge_errors(run_dir, run_id, "gen-choices", errors)
    _update_manifest(
        run_dir, run_id, cfg, args.backend, templates, f"gen-choices{suffix}",
        n_shots, pipeline.GENERATION_PARAMS,
        {"questions": len(choices), "failures": len(errors), "requests": client.requests_made - before},
    )
    print(f"gen-choices: {len(choices)} questions, {len(errors)} failures -> {run_dir}")
    return 0


def cmd_gen_cot(args) -> int:
    cfg = _load_config(args)
    dataset = _load_cfg_dataset(cfg)
    templates = _templates(cfg)
    split = Split(args.split)
    registry = _registry(cfg)
    client = _client(cfg, registry, args.backend)
    if args.dry_run:
        requests = pipeline.plan_requests(
            dataset, split, client.backend.model_id, "gen-cot", templates=templates,
        )
        return _dry_run_report("gen-cot", requests, client.cache)
    run_id = _default_run_id(args)
    run_dir = _run_dir(cfg, run_id)
    errors: list[StageError] = []
    before = client.requests_made
    rationales = pipeline.generate_cots(
        dataset, split, client, templates=templates, parallel=cfg.parallel, error_sink=errors,
    )
    suffix = "" if split == Split.TEST else f".{split.value}"
    write_cots(run_dir / f"cots{suffix}.jsonl", run_id, rationales)
    _merge_errors(run_dir, run_id, "gen-cot", errors)
    _update_manifest(
        run_dir, run_id, cfg, args.backend, templates, f"gen-cot{suffix}",
        None, pipeline.COT_PARAMS,
        {"questions": len(rationales), "failures": len(errors), "requests": client.requests_made - before},
    )
    print(f"gen-cot: {len(rationales)} questions, {len(errors)} failures -> {run_dir}")
    return 0


def cmd_select(args) -> int:
    cfg = _load_config(args)
    dataset = _load_cfg_dataset(cfg)
    templates = _templates(cfg)
    run_dir = Path(args.run)
    run_id = load_manifest(run_dir / "manifest.json").run_id if (run_dir / "manifest.json").exists() else _default_run_id(args)
    choices = load_choices(run_dir / "choices.jsonl")
    selector = SelectorKind(args.selector)
    rationales = None
    shot_choices = None
    shot_rationales = None
    client = None
    if selector != SelectorKind.TOP1_BASELINE:
        if not args.backend:
            raise UsageError(f"--backend is required for selector {selector.value!r}")
        rationales = load_cots(run_dir / "cots.jsonl")
        if args.train_run:
            train_dir = Path(args.train_run)
            shot_choices = load_choices(train_dir / "choices.train.jsonl")
            shot_rationales = load_cots(train_dir / "cots.train.jsonl")
        registry = _registry(cfg)
        client = _client(cfg, registry, args.backend)
    errors: list[StageError] = []
    before = client.requests_made if client else 0
    selections = pipeline.select_answers(
        dataset,
        choices,
        rationales,
        client,
        selector,
        shot_choices=shot_choices,
        shot_rationales=shot_rationales,
        n_shots=cfg.select_shots,
        templates=templates,
        image_weight=cfg.image_weight,
        parallel=cfg.parallel,
        error_sink=errors,
    )
    write_selections(run_dir / "selections.jsonl", run_id, selections)
    _merge_errors(run_dir, run_id, "select", errors)
    _update_manifest(
        run_dir, run_id, cfg, getattr(args, "backend", None), templates, "select",
        cfg.select_shots, pipeline.SELECTION_PARAMS,
        {
            "questions": len(selections),
            "failures": len(errors),
            "requests": (client.requests_made - before) if client else 0,
        },
    )
    print(f"select[{selector.value}]: {len(selections)} questions, {len(errors)} failures -> {run_dir}")
    return 0


def cmd_ensemble(args) -> int:
    cfg = _load_config(args)
    runs = []
    names = []
    for run_path in args.runs:
        run_dir = Path(run_path)
        runs.append(load_choices(run_dir / "choices.jsonl"))
        manifest_path = run_dir / "manifest.json"
        if manifest_path.exists():
            manifest = load_manifest(manifest_path)
            names.append(manifest.backends[0] if manifest.backends else run_dir.name)
        else:
            names.append(run_dir.name)
    combined = pipeline.ensemble_choices(runs, names)
    run_id = _default_run_id(args)
    out_dir = _run_dir(cfg, run_id)
    write_choices(out_dir / "choices.jsonl", run_id, combined)
    manifest = RunManifest(run_id=run_id, backends=names, stats={"ensemble": {"questions": len(combined), "runs": len(runs)}})
    write_manifest(out_dir / "manifest.json", manifest)
    print(f"ensemble: {len(runs)} runs, {len(combined)} questions -> {out_dir}")
    return 0


def cmd_coverage(args) -> int:
    cfg = _load_config(args)
    dataset = _load_cfg_dataset(cfg)
    choices_path = Path(args.choices) if args.choices else Path(args.run) / "choices.jsonl"
    choices = load_choices(choices_path)
    report = coverage({qid: cl.choices for qid, cl in choices.items()}, dataset)
    print(report.to_table())
    print(report.to_json())
    if args.run:
        out_path = Path(args.run) / "coverage.json"
        out_path.write_text(report.to_json() + "\n", encoding="utf-8")
    elif args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    dataset = _load_cfg_dataset(cfg)
    run_dir = Path(args.run) if args.run else None
    selections_path = Path(args.selections) if args.selections else run_dir / "selections.jsonl"
    selections = load_selections(selections_path)
    accuracy = pipeline.evaluate_run(selections, dataset)
    print(f"accuracy: {accuracy * 100:.1f}%")
    if run_dir is not None:
        run_id = load_manifest(run_dir / "manifest.json").run_id if (run_dir / "manifest.json").exists() else "run"
        report = {"run_id": run_id, "metric": "vqa_accuracy", "accuracy": accuracy, "n": len(selections)}
        (run_dir / "report.json").write_text(
            json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return 0


def cmd_cache(args) -> int:
    cfg = _load_config(args)
    cache_dir = Path(cfg.cache_dir)
    if args.action == "stats":
        if not cache_dir.is_dir():
            print(f"cache dir {cache_dir} does not exist")
            return 1
        for path in sorted(cache_dir.glob("*.jsonl")):
            cache = CompletionCache(path)
            print(f"{path.stem}: {len(cache)} records, {path.stat().st_size} bytes")
        return 0
    if args.action == "verify":
        bad = []
        for path in sorted(cache_dir.glob("*.jsonl")):
            cache = CompletionCache(path)
            mismatches = cache.verify()
            bad.extend((path.stem, key) for key in mismatches)
            print(f"{path.stem}: {len(cache)} records, {len(mismatches)} digest mismatches")
        return 1 if bad else 0
    if args.action == "warm":
        if not args.backend:
            raise UsageError("cache warm requires --backend")
        dataset = _load_cfg_dataset(cfg)
        templates = _templates(cfg)
        registry = _registry(cfg)
        client = _client(cfg, registry, args.backend)
        split = Split(args.split)
        n_shots = cfg.shots_test if split == Split.TEST else cfg.shots_train
        before = client.requests_made
        pipeline.generate_choices(
            dataset, split, client, n_shots=n_shots, templates=templates,
            image_weight=cfg.image_weight, parallel=cfg.parallel,
        )
        pipeline.generate_cots(
            dataset, split, client, templates=templates, parallel=cfg.parallel,
        )
        print(f"warm: {client.requests_made - before} requests, cache now {len(client.cache)} records")
        return 0
    raise PipelineError(f"unknown cache action {args.action!r}")


# --------------------------------------------------------------------------
# Parser


def _add_config_flags(sub):
    sub.add_argument("--config", help="TOML run config")
    sub.add_argument("--out", help="runs output directory (overrides config)")
    sub.add_argument("--parallel", type=int, help="max in-flight backend calls")
    sub.add_argument("--template-dir", dest="template_dir", help="override packaged prompt templates")
    sub.add_argument("--cache-dir", dest="cache_dir", help="completion cache directory")
    sub.add_argument("--seed", type=int, help="reserved; runs are deterministic given cache")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genselect",
        description="Generate-then-select VQA pipeline over frozen completion backends.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", help="validate a dataset and report counts")
    ingest.add_argument("--questions", nargs="+", required=True)
    ingest.add_argument("--annotations", nargs="+", required=True)
    ingest.add_argument("--contexts", required=True)
    ingest.add_argument("--embeddings", required=True)
    ingest.add_argument("--answers-per-question", type=int, default=10)
    ingest.set_defaults(func=cmd_ingest)

    shots = commands.add_parser("shots", help="debug: print the ranked shot list for a question")
    shots.add_argument("--question-id", type=int, required=True)
    shots.add_argument("--shots", type=int, default=16)
    _add_config_flags(shots)
    shots.set_defaults(func=cmd_shots)

    gen_choices = commands.add_parser("gen-choices", help="generate pooled answer choices for a split")
    gen_choices.add_argument("--backend", required=True)
    gen_choices.add_argument("--split", choices=[s.value for s in Split], default=Split.TEST.value)
    gen_choices.add_argument("--shots", type=int, help="few-shot count (default 16 test / 4 train)")
    gen_choices.add_argument("--run-id", dest="run_id")
    gen_choices.add_argument("--dry-run", dest="dry_run", action="store_true")
    _add_config_flags(gen_choices)
    gen_choices.set_defaults(func=cmd_gen_choices)

    gen_cot = commands.add_parser("gen-cot", help="generate one rationale per question")
    gen_cot.add_argument("--backend", required=True)
    gen_cot.add_argument("--split", choices=[s.value for s in Split], default=Split.TEST.value)
    gen_cot.add_argument("--run-id", dest="run_id")
    gen_cot.add_argument("--dry-run", dest="dry_run", action="store_true")
    _add_config_flags(gen_cot)
    gen_cot.set_defaults(func=cmd_gen_cot)

    select = commands.add_parser("select", help="select answers from generated choices")
    select.add_argument("--run", required=True, help="run directory with choices.jsonl (+ cots.jsonl)")
    select.add_argument("--train-run", dest="train_run", help="run directory with train-split choices/cots for shots")
    select.add_argument("--backend")
    select.add_argument(
        "--selector",
        choices=[k.value for k in SelectorKind],
        default=SelectorKind.PROMPT_SELECT.value,
    )
    _add_config_flags(select)
    select.set_defaults(func=cmd_select)

    ensemble = commands.add_parser("ensemble", help="combine choice lists from several runs")
    ensemble.add_argument("--runs", nargs="+", required=True)
    ensemble.add_argument("--run-id", dest="run_id", required=True)
    _add_config_flags(ensemble)
    ensemble.set_defaults(func=cmd_ensemble)

    cov = commands.add_parser("coverage", help="top-k knowledge-coverage report for a choices file")
    cov.add_argument("--run", help="run directory (reads choices.jsonl, writes coverage.json)")
    cov.add_argument("--choices", help="explicit choices.jsonl path")
    _add_config_flags(cov)
    cov.set_defaults(func=cmd_coverage)

    evaluate = commands.add_parser("evaluate", help="mean VQA accuracy of a selections file")
    evaluate.add_argument("--run", help="run directory (reads selections.jsonl, writes report.json)")
    evaluate.add_argument("--selections", help="explicit selections.jsonl path")
    _add_config_flags(evaluate)
    evaluate.set_defaults(func=cmd_evaluate)

    cache = commands.add_parser("cache", help="completion-cache stats / verify / warm")
    cache.add_argument("action", choices=["stats", "verify", "warm"])
    cache.add_argument("--backend", help="backend to warm")
    cache.add_argument("--split", choices=[s.value for s in Split], default=Split.TEST.value)
    _add_config_flags(cache)
    cache.set_defaults(func=cmd_cache)

    return parser


def run_command(argv: Sequence[str] | None = None) -> int:
    """Parse argv and run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except _RUN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
