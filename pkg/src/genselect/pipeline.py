"""Orchestration of the generate-then-select flow and run persistence.

Stages: choice generation (two prompts per question, pooled), rationale
generation, answer selection, multi-backend ensembling, and evaluation.
Questions are independent work items; failures are recorded per question
and the run aborts once more than 10% of them fail. Result maps are
assembled by ascending question_id regardless of completion order, so a
warmed cache or replay backend reproduces runs byte for byte.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

from genselect.backend import BackendError, CompletionClient, CompletionRequest
from genselect.data import Dataset, QAInstance, Split
from genselect.metric import normalize, vqa_accuracy
from genselect.prompts import (
    ChoiceList,
    PromptError,
    PromptText,
    Rationale,
    SolvedShot,
    TemplateSet,
    build_cot_prompt,
    build_prompt_q,
    build_prompt_qc,
    build_select_prompt,
    merge_choice_lists,
    modal_gold_answer,
    parse_choices,
    pool_choices,
)
from genselect.retriever import RetrievalError, retrieve_examples, score_candidates

logger = logging.getLogger(__name__)


class PipelineError(Exception):
    """A stage precondition failed or the run could not proceed."""


class RunAbortError(PipelineError):
    """Too many per-question failures; the run is systemically broken."""


class SelectorNotSupportedError(PipelineError):
    """Declared selector slot without a shipped implementation."""


@dataclass(frozen=True)
class StageParams:
    """Request parameters one stage attaches to every completion call."""

    temperature: float
    max_tokens: int
    stop: tuple[str, ...] | None = None

    def to_json_obj(self) -> dict:
        return {
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "stop": list(self.stop) if self.stop else None,
        }


GENERATION_PARAMS = StageParams(temperature=0.001, max_tokens=15, stop=("\n",))
COT_PARAMS = StageParams(temperature=0.7, max_tokens=80)
SELECTION_PARAMS = StageParams(temperature=0.001, max_tokens=5, stop=("\n",))

TEST_SHOTS = 16
TRAIN_SHOTS = 4
SELECT_SHOTS = 8

FAILURE_LIMIT = 0.1


class SelectorKind(str, Enum):
    PROMPT_SELECT = "prompt_select"
    TOP1_BASELINE = "top1_baseline"
    # Training-based selector slots; declared but not shipped.
    KAT = "kat"
    UNIFIEDQA = "unifiedqa"
    CLIPCAP = "clipcap"


_UNSUPPORTED_SELECTORS = {SelectorKind.KAT, SelectorKind.UNIFIEDQA, SelectorKind.CLIPCAP}


@dataclass(frozen=True)
class SelectionResult:
    """A selector's pick for one question; always an element of its choices."""

    question_id: int
    selected_answer: str
    selector: SelectorKind
    raw_selector_output: str
    matched_choice_rank: int | None

    def to_json_obj(self) -> dict:
        return {
            "question_id": self.question_id,
            "selected_answer": self.selected_answer,
            "selector": self.selector.value,
            "raw_selector_output": self.raw_selector_output,
            "matched_choice_rank": self.matched_choice_rank,
        }

    @staticmethod
    def from_json_obj(obj: Mapping) -> "SelectionResult":
        return SelectionResult(
            question_id=int(obj["question_id"]),
            selected_answer=obj["selected_answer"],
            selector=SelectorKind(obj["selector"]),
            raw_selector_output=obj["raw_selector_output"],
            matched_choice_rank=obj["matched_choice_rank"],
        )


@dataclass(frozen=True)
class StageError:
    """One recorded per-question failure."""

    question_id: int
    stage: str
    message: str

    def to_json_obj(self) -> dict:
        return {"question_id": self.question_id, "stage": self.stage, "message": self.message}


def _default_shots(split: Split) -> int:
    # 16-shot prompting on test questions; 4-shot over the train split
    # keeps generation affordable there.
    return TEST_SHOTS if split == Split.TEST else TRAIN_SHOTS


def _request(client: CompletionClient, prompt: PromptText, params: StageParams) -> CompletionRequest:
    return CompletionRequest(
        model_id=client.backend.model_id,
        prompt=prompt.text,
        temperature=params.temperature,
        max_tokens=params.max_tokens,
        stop=params.stop,
    )


def _run_stage(
    stage: str,
    items: Sequence[QAInstance],
    work: Callable[[QAInstance], object],
    parallel: int,
    error_sink: list[StageError] | None,
) -> dict[int, object]:
    """Run per-question work, collecting failures; abort past the limit."""
    sink = error_sink if error_sink is not None else []
    results: dict[int, object] = {}
    failures = 0
    total = len(items)

    def handle(inst: QAInstance, outcome, error: Exception | None):
        nonlocal failures
        if error is None:
            results[inst.question_id] = outcome
            return
        failures += 1
        sink.append(StageError(inst.question_id, stage, str(error)))
        logger.warning("%s: question %d failed: %s", stage, inst.question_id, error)
        if failures > FAILURE_LIMIT * total:
            raise RunAbortError(
                f"{stage}: {failures}/{total} questions failed (limit {FAILURE_LIMIT:.0%})"
            )

    caught = (BackendError, PromptError, RetrievalError, PipelineError, KeyError)
    if parallel <= 1:
        for inst in items:
            try:
                outcome = work(inst)
            except caught as exc:
                handle(inst, None, exc)
            else:
                handle(inst, outcome, None)
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            futures = [(inst, pool.submit(work, inst)) for inst in items]
            for inst, future in futures:
                try:
                    outcome = future.result()
                except caught as exc:
                    handle(inst, None, exc)
                else:
                    handle(inst, outcome, None)
    return {qid: results[qid] for qid in sorted(results)}


def generate_choices(
    dataset: Dataset,
    split: Split,
    client: CompletionClient,
    n_shots: int | None = None,
    params: StageParams = GENERATION_PARAMS,
    templates: TemplateSet | None = None,
    image_weight: float = 0.5,
    parallel: int = 1,
    error_sink: list[StageError] | None = None,
) -> dict[int, ChoiceList]:
    """Generate the pooled answer-choice list for every question in a split."""
    templates = templates or TemplateSet.packaged()
    shots_n = n_shots if n_shots is not None else _default_shots(split)
    items = dataset.split_instances(split)
    if not items:
        raise PipelineError(f"no {split.value} instances to generate choices for")

    def work(inst: QAInstance) -> ChoiceList:
        context = dataset.contexts[inst.image_id]
        shots = retrieve_examples(
            inst, dataset, shots_n, image_weight=image_weight, require_context=True
        )
        qc_prompt = build_prompt_qc(inst, context, shots, dataset.contexts, templates)
        q_prompt = build_prompt_q(inst, shots, templates)
        qc_record = client.complete(_request(client, qc_prompt, params), templates.version)
        q_record = client.complete(_request(client, q_prompt, params), templates.version)
        return pool_choices(
            inst.question_id,
            parse_choices(qc_record.completion),
            parse_choices(q_record.completion),
        )

    return _run_stage("gen-choices", items, work, parallel, error_sink)  # type: ignore[return-value]


def first_line(completion: str) -> str:
    """Single-line reduction used for rationales: first nonblank line."""
    stripped = completion.strip()
    if not stripped:
        return ""
    return stripped.splitlines()[0].strip()


def generate_cots(
    dataset: Dataset,
    split: Split,
    client: CompletionClient,
    params: StageParams = COT_PARAMS,
    templates: TemplateSet | None = None,
    parallel: int = 1,
    error_sink: list[StageError] | None = None,
) -> dict[int, Rationale]:
    """Generate one rationale per question using the fixed preamble prompt."""
    templates = templates or TemplateSet.packaged()
    items = dataset.split_instances(split)
    if not items:
        raise PipelineError(f"no {split.value} instances to generate rationales for")
    sink = error_sink if error_sink is not None else []

    def work(inst: QAInstance) -> Rationale:
        context = dataset.contexts[inst.image_id]
        prompt = build_cot_prompt(inst, context, templates)
        record = client.complete(_request(client, prompt, params), templates.version)
        text = first_line(record.completion)
        if not text:
            sink.append(StageError(inst.question_id, "gen-cot", "empty rationale completion"))
        return Rationale(question_id=inst.question_id, text=text)

    return _run_stage("gen-cot", items, work, parallel, error_sink)  # type: ignore[return-value]


def _match_output(raw_output: str, choices: ChoiceList) -> tuple[str, int | None]:
    """Map selector output onto the choice list.

    Exact normalized match first, then substring containment either way;
    anything else falls back to the rank-1 choice with rank None.
    """
    out = normalize(raw_output)
    if out:
        for i, choice in enumerate(choices.choices):
            if choice == out:
                return choice, i + 1
        for i, choice in enumerate(choices.choices):
            if choice in out:
                return choice, i + 1
        for i, choice in enumerate(choices.choices):
            if out in choice:
                return choice, i + 1
    return choices.choices[0], None


def select_answers(
    dataset: Dataset,
    choices: Mapping[int, ChoiceList],
    rationales: Mapping[int, Rationale] | None,
    client: CompletionClient | None,
    selector: SelectorKind | str = SelectorKind.PROMPT_SELECT,
    shot_choices: Mapping[int, ChoiceList] | None = None,
    shot_rationales: Mapping[int, Rationale] | None = None,
    n_shots: int = SELECT_SHOTS,
    params: StageParams = SELECTION_PARAMS,
    templates: TemplateSet | None = None,
    image_weight: float = 0.5,
    parallel: int = 1,
    error_sink: list[StageError] | None = None,
) -> dict[int, SelectionResult]:
    """Pick one answer per question from its choice list.

    prompt_select re-prompts the generation model with solved in-domain
    shots; shot material (choices + rationales for train questions) comes
    from shot_choices/shot_rationales, defaulting to the main maps.
    top1_baseline takes the rank-1 choice without any backend call.
    """
    selector = SelectorKind(selector)
    if selector in _UNSUPPORTED_SELECTORS:
        raise SelectorNotSupportedError(
            f"selector {selector.value!r} requires trained weights and is not shipped"
        )
    empty = sorted(qid for qid, cl in choices.items() if not len(cl))
    if empty:
        raise PipelineError(f"empty choice list for questions: {empty[:10]}")
    qids = sorted(choices)
    items = []
    for qid in qids:
        if qid not in dataset.instances:
            raise PipelineError(f"selection references unknown question_id {qid}")
        items.append(dataset.instances[qid])

    if selector == SelectorKind.TOP1_BASELINE:
        return {
            qid: SelectionResult(
                question_id=qid,
                selected_answer=choices[qid].choices[0],
                selector=selector,
                raw_selector_output="",
                matched_choice_rank=1,
            )
            for qid in qids
        }

    if rationales is None:
        raise PipelineError("prompt_select requires rationales")
    if client is None:
        raise PipelineError("prompt_select requires a completion client")
    templates = templates or TemplateSet.packaged()
    shot_choices = shot_choices if shot_choices is not None else choices
    shot_rationales = shot_rationales if shot_rationales is not None else rationales

    eligible = {
        inst.question_id
        for inst in dataset.split_instances(Split.TRAIN)
        if inst.question_id in shot_choices
        and len(shot_choices[inst.question_id])
        and inst.question_id in shot_rationales
        and inst.image_id in dataset.contexts
    }

    def work(inst: QAInstance) -> SelectionResult:
        qid = inst.question_id
        if qid not in rationales:
            raise PipelineError(f"question {qid}: no rationale available")
        context = dataset.contexts[inst.image_id]
        ranked = score_candidates(
            inst, dataset, image_weight=image_weight, require_context=True, candidate_ids=eligible
        )
        if len(ranked) < n_shots:
            logger.warning(
                "question %d: only %d solved shots available (wanted %d)", qid, len(ranked), n_shots
            )
        shots = []
        for scored in ranked[:n_shots]:
            shot_inst = dataset.instances[scored.train_question_id]
            shots.append(
                SolvedShot(
                    instance=shot_inst,
                    context=dataset.contexts[shot_inst.image_id],
                    rationale=shot_rationales[shot_inst.question_id].text,
                    choices=shot_choices[shot_inst.question_id].choices,
                    answer=modal_gold_answer(shot_inst),
                )
            )
        prompt = build_select_prompt(inst, context, rationales[qid], choices[qid], shots, templates)
        record = client.complete(_request(client, prompt, params), templates.version)
        selected, rank = _match_output(record.completion, choices[qid])
        return SelectionResult(
            question_id=qid,
            selected_answer=selected,
            selector=selector,
            raw_selector_output=record.completion,
            matched_choice_rank=rank,
        )

    return _run_stage("select", items, work, parallel, error_sink)  # type: ignore[return-value]


def plan_requests(
    dataset: Dataset,
    split: Split,
    model_id: str,
    stage: str,
    n_shots: int | None = None,
    templates: TemplateSet | None = None,
    image_weight: float = 0.5,
) -> list[CompletionRequest]:
    """The completion requests a generation stage would issue (dry-run support).

    Questions whose prompts cannot be built are skipped, mirroring the
    per-question failure handling of the real stages.
    """
    templates = templates or TemplateSet.packaged()
    requests: list[CompletionRequest] = []
    if stage == "gen-choices":
        shots_n = n_shots if n_shots is not None else _default_shots(split)
        for inst in dataset.split_instances(split):
            try:
                context = dataset.contexts[inst.image_id]
                shots = retrieve_examples(
                    inst, dataset, shots_n, image_weight=image_weight, require_context=True
                )
                prompts = [
                    build_prompt_qc(inst, context, shots, dataset.contexts, templates),
                    build_prompt_q(inst, shots, templates),
                ]
            except (PromptError, RetrievalError, KeyError):
                continue
            requests.extend(
                CompletionRequest(
                    model_id=model_id,
                    prompt=p.text,
                    temperature=GENERATION_PARAMS.temperature,
                    max_tokens=GENERATION_PARAMS.max_tokens,
                    stop=GENERATION_PARAMS.stop,
                )
                for p in prompts
            )
    elif stage == "gen-cot":
        for inst in dataset.split_instances(split):
            try:
                prompt = build_cot_prompt(inst, dataset.contexts[inst.image_id], templates)
            except (PromptError, KeyError):
                continue
            requests.append(
                CompletionRequest(
                    model_id=model_id,
                    prompt=prompt.text,
                    temperature=COT_PARAMS.temperature,
                    max_tokens=COT_PARAMS.max_tokens,
                    stop=COT_PARAMS.stop,
                )
            )
    else:
        raise PipelineError(f"unknown planning stage {stage!r}")
    return requests


def ensemble_choices(
    runs: Sequence[Mapping[int, ChoiceList]],
    names: Sequence[str] | None = None,
) -> dict[int, ChoiceList]:
    """Combine the choice lists of several runs over the same question set.

    Lists are concatenated in the given run order and deduplicated keeping
    first occurrence; provenance records the source run name and the
    choice's rank within that run.
    """
    if len(runs) < 2:
        raise PipelineError("ensembling needs at least two runs")
    if names is None:
        names = [f"run{i + 1}" for i in range(len(runs))]
    if len(names) != len(runs):
        raise PipelineError("names must align with runs")
    base = set(runs[0])
    for i, run in enumerate(runs[1:], start=2):
        diff = base.symmetric_difference(run)
        if diff:
            raise PipelineError(
                f"run 1 and run {i} cover different questions (symmetric difference: {sorted(diff)[:10]})"
            )
    return {
        qid: merge_choice_lists(
            qid, [(names[i], list(runs[i][qid].choices)) for i in range(len(runs))]
        )
        for qid in sorted(base)
    }


def evaluate_run(selections: Mapping[int, SelectionResult], dataset: Dataset) -> float:
    """Mean VQA accuracy of the selected answers."""
    if not selections:
        raise PipelineError("no selections to evaluate")
    unknown = sorted(q for q in selections if q not in dataset.instances)
    if unknown:
        raise PipelineError(f"selections reference unknown question_ids: {unknown[:10]}")
    qids = sorted(selections)
    return math.fsum(
        vqa_accuracy(selections[qid].selected_answer, dataset.gold_answers(qid)) for qid in qids
    ) / len(qids)


# ---------------------------------------------------------------------------
# Run persistence: runs/<run_id>/{manifest.json, choices.jsonl, cots.jsonl,
# selections.jsonl, report.json, errors.jsonl}. Every artifact embeds its
# run_id (JSONL files carry it in a header line).


@dataclass
class RunManifest:
    """Reconstructable description of a run: config in, statistics out."""

    run_id: str
    dataset: dict = field(default_factory=dict)
    backends: list[str] = field(default_factory=list)
    template_version: str = ""
    shot_counts: dict = field(default_factory=dict)
    stage_params: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "run_id": self.run_id,
            "dataset": self.dataset,
            "backends": self.backends,
            "template_version": self.template_version,
            "shot_counts": self.shot_counts,
            "stage_params": self.stage_params,
            "stats": self.stats,
        }

    @staticmethod
    def from_json_obj(obj: Mapping) -> "RunManifest":
        return RunManifest(
            run_id=obj["run_id"],
            dataset=dict(obj.get("dataset", {})),
            backends=list(obj.get("backends", [])),
            template_version=obj.get("template_version", ""),
            shot_counts=dict(obj.get("shot_counts", {})),
            stage_params=dict(obj.get("stage_params", {})),
            stats=dict(obj.get("stats", {})),
        )


def _dump_json(obj: dict, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def write_manifest(path: str | Path, manifest: RunManifest) -> None:
    _dump_json(manifest.to_json_obj(), Path(path))


def load_manifest(path: str | Path) -> RunManifest:
    return RunManifest.from_json_obj(json.loads(Path(path).read_text(encoding="utf-8")))


def _write_jsonl(path: Path, run_id: str, kind: str, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"run_id": run_id, "artifact": kind}, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n")


def _read_jsonl(path: Path, kind: str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise PipelineError(f"{path}: empty artifact file")
    header = json.loads(lines[0])
    if header.get("artifact") != kind:
        raise PipelineError(f"{path}: expected {kind!r} artifact, found {header.get('artifact')!r}")
    for line in lines[1:]:
        rows.append(json.loads(line))
    return rows


def write_choices(path: str | Path, run_id: str, choices: Mapping[int, ChoiceList]) -> None:
    rows = [choices[qid].to_json_obj() for qid in sorted(choices)]
    _write_jsonl(Path(path), run_id, "choices", rows)


def load_choices(path: str | Path) -> dict[int, ChoiceList]:
    rows = _read_jsonl(Path(path), "choices")
    out = {}
    for row in rows:
        cl = ChoiceList.from_json_obj(row)
        out[cl.question_id] = cl
    return out


def write_cots(path: str | Path, run_id: str, rationales: Mapping[int, Rationale]) -> None:
    rows = [
        {"question_id": qid, "rationale": rationales[qid].text} for qid in sorted(rationales)
    ]
    _write_jsonl(Path(path), run_id, "cots", rows)


def load_cots(path: str | Path) -> dict[int, Rationale]:
    rows = _read_jsonl(Path(path), "cots")
    return {
        int(row["question_id"]): Rationale(int(row["question_id"]), row["rationale"])
        for row in rows
    }


def write_selections(path: str | Path, run_id: str, selections: Mapping[int, SelectionResult]) -> None:
    rows = [selections[qid].to_json_obj() for qid in sorted(selections)]
    _write_jsonl(Path(path), run_id, "selections", rows)


def load_selections(path: str | Path) -> dict[int, SelectionResult]:
    rows = _read_jsonl(Path(path), "selections")
    out = {}
    for row in rows:
        sel = SelectionResult.from_json_obj(row)
        out[sel.question_id] = sel
    return out


def write_errors(path: str | Path, run_id: str, errors: Sequence[StageError]) -> None:
    _write_jsonl(Path(path), run_id, "errors", [e.to_json_obj() for e in errors])
