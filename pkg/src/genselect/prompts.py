"""The four prompt builders and the parsing of model outputs into choices.

Builders are pure and byte-deterministic: the same target, shots, and
template version always produce the same prompt text (newlines are always
"\\n"). Free-text parts live in versioned template resources so runs can
pin and record the exact wording they used.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from genselect.data import ImageContext, QAInstance
from genselect.metric import normalize


class PromptError(Exception):
    """A prompt could not be built from the given material."""


@dataclass(frozen=True)
class TemplateSet:
    """Versioned free-text prompt parts (instructions + fixed CoT preamble)."""

    version: str
    instruction_q: str
    instruction_qc: str
    cot_preamble: str

    @staticmethod
    def packaged() -> "TemplateSet":
        return _packaged_templates()

    @staticmethod
    def from_dir(path: str | Path) -> "TemplateSet":
        root = Path(path)

        def read(name: str) -> str:
            return (root / name).read_text(encoding="utf-8")

        return TemplateSet(
            version=read("version.txt").strip(),
            instruction_q=read("instruction_q.txt").strip(),
            instruction_qc=read("instruction_qc.txt").strip(),
            cot_preamble=read("cot_preamble.txt"),
        )


@lru_cache(maxsize=1)
def _packaged_templates() -> TemplateSet:
    pkg = resources.files("genselect.templates")

    def read(name: str) -> str:
        return (pkg / name).read_text(encoding="utf-8")

    return TemplateSet(
        version=read("version.txt").strip(),
        instruction_q=read("instruction_q.txt").strip(),
        instruction_qc=read("instruction_qc.txt").strip(),
        cot_preamble=read("cot_preamble.txt"),
    )


def cot_preamble_digest(templates: TemplateSet | None = None) -> str:
    """SHA-256 of the fixed CoT preamble resource, for freeze checks."""
    templates = templates or TemplateSet.packaged()
    return hashlib.sha256(templates.cot_preamble.encode("utf-8")).hexdigest()


class PromptKind(str, Enum):
    Q = "Q"
    QC = "QC"
    COT = "COT"
    SELECT = "SELECT"


@dataclass(frozen=True)
class PromptText:
    kind: PromptKind
    text: str
    shot_ids: tuple[int, ...]
    template_version: str


@dataclass(frozen=True)
class ChoiceProvenance:
    source: str  # "QC" | "Q" | backend name
    rank: int  # 1-based rank in the source list


@dataclass(frozen=True)
class ChoiceList(Sequence[str]):
    """Ordered, normalized, deduplicated candidate answers for one question.

    Earlier means higher model preference. Iterating yields the choice
    strings; provenance is parallel to choices.
    """

    question_id: int
    choices: tuple[str, ...]
    provenance: tuple[ChoiceProvenance, ...]

    def __post_init__(self):
        if len(self.choices) != len(self.provenance):
            raise ValueError("choices and provenance must be parallel")
        if len(set(self.choices)) != len(self.choices):
            raise ValueError("choices contain duplicates after normalization")

    def __iter__(self) -> Iterator[str]:
        return iter(self.choices)

    def __len__(self) -> int:
        return len(self.choices)

    def __getitem__(self, index):
        return self.choices[index]

    def to_json_obj(self) -> dict:
        return {
            "question_id": self.question_id,
            "choices": list(self.choices),
            "provenance": [{"source": p.source, "rank": p.rank} for p in self.provenance],
        }

    @staticmethod
    def from_json_obj(obj: Mapping) -> "ChoiceList":
        return ChoiceList(
            question_id=int(obj["question_id"]),
            choices=tuple(obj["choices"]),
            provenance=tuple(
                ChoiceProvenance(source=p["source"], rank=int(p["rank"]))
                for p in obj["provenance"]
            ),
        )


@dataclass(frozen=True)
class Rationale:
    """One single-line chain-of-thought rationale for a question."""

    question_id: int
    text: str

    def __post_init__(self):
        if "\n" in self.text:
            raise ValueError("rationale text must be a single line")


def shot_answer_text(instance: QAInstance) -> str:
    """Unique normalized gold answers of a shot joined by ``or``."""
    seen: list[str] = []
    for raw in instance.gold_answers:
        norm = normalize(raw)
        if norm and norm not in seen:
            seen.append(norm)
    if not seen:
        raise PromptError(f"question {instance.question_id}: no usable gold answers")
    return " or ".join(seen)


def modal_gold_answer(instance: QAInstance) -> str:
    """Most frequent normalized gold answer; ties break by first occurrence."""
    order: list[str] = []
    counts: Counter[str] = Counter()
    for raw in instance.gold_answers:
        norm = normalize(raw)
        if not norm:
            continue
        if norm not in counts:
            order.append(norm)
        counts[norm] += 1
    if not order:
        raise PromptError(f"question {instance.question_id}: no usable gold answers")
    return max(order, key=lambda a: (counts[a], -order.index(a)))


def _context_line(context: ImageContext) -> str:
    caption = context.caption.strip()
    if caption and caption[-1] not in ".!?":
        caption += "."
    if context.tags:
        return f"Context: {caption} Tags: {', '.join(context.tags)}"
    return f"Context: {caption}"


def build_prompt_q(
    target: QAInstance,
    shots: Sequence[QAInstance],
    templates: TemplateSet | None = None,
) -> PromptText:
    """Question-only choice-generation prompt with few-shot answer lists."""
    templates = templates or TemplateSet.packaged()
    if not shots:
        raise PromptError("prompt requires at least one shot")
    parts = [templates.instruction_q, "\n\n"]
    for shot in shots:
        parts.append(f"Question: {shot.question}\nAnswer: {shot_answer_text(shot)}\n\n")
    parts.append(f"Question: {target.question}\nAnswer:")
    return PromptText(
        kind=PromptKind.Q,
        text="".join(parts),
        shot_ids=tuple(s.question_id for s in shots),
        template_version=templates.version,
    )


def build_prompt_qc(
    target: QAInstance,
    context: ImageContext,
    shots: Sequence[QAInstance],
    shot_contexts: Mapping[int, ImageContext],
    templates: TemplateSet | None = None,
) -> PromptText:
    """Context+question choice-generation prompt.

    shot_contexts maps image_id -> ImageContext and must cover every shot.
    """
    templates = templates or TemplateSet.packaged()
    if not shots:
        raise PromptError("prompt requires at least one shot")
    parts = [templates.instruction_qc, "\n\n"]
    for shot in shots:
        if shot.image_id not in shot_contexts:
            raise PromptError(f"shot question {shot.question_id}: missing context for image {shot.image_id}")
        ctx = shot_contexts[shot.image_id]
        parts.append(
            f"{_context_line(ctx)}\nQuestion: {shot.question}\nAnswer: {shot_answer_text(shot)}\n\n"
        )
    parts.append(f"{_context_line(context)}\nQuestion: {target.question}\nAnswer:")
    return PromptText(
        kind=PromptKind.QC,
        text="".join(parts),
        shot_ids=tuple(s.question_id for s in shots),
        template_version=templates.version,
    )


def build_cot_prompt(
    target: QAInstance,
    context: ImageContext,
    templates: TemplateSet | None = None,
) -> PromptText:
    """Rationale-generation prompt: fixed preamble, no retrieved shots."""
    templates = templates or TemplateSet.packaged()
    preamble = templates.cot_preamble.rstrip("\n") + "\n\n"
    text = f"{preamble}{_context_line(context)}\nQuestion: {target.question}\nRationale:"
    return PromptText(
        kind=PromptKind.COT,
        text=text,
        shot_ids=(),
        template_version=templates.version,
    )


@dataclass(frozen=True)
class SolvedShot:
    """One completed example block for the selection prompt."""

    instance: QAInstance
    context: ImageContext
    rationale: str
    choices: tuple[str, ...]
    answer: str


def _select_block(
    context: ImageContext,
    question: str,
    rationale: str,
    choices: Sequence[str],
) -> str:
    return (
        f"{_context_line(context)} question: {question} "
        f"rationale: {rationale} choices: {', '.join(choices)} answers:"
    )


def build_select_prompt(
    target: QAInstance,
    context: ImageContext,
    rationale: Rationale,
    choices: ChoiceList,
    shots: Sequence[SolvedShot],
    templates: TemplateSet | None = None,
) -> PromptText:
    """Answer-selection prompt: solved example blocks, then the open target block."""
    templates = templates or TemplateSet.packaged()
    if not len(choices):
        raise PromptError(f"question {target.question_id}: empty choice list")
    parts = []
    for shot in shots:
        block = _select_block(shot.context, shot.instance.question, shot.rationale, shot.choices)
        parts.append(f"{block} {shot.answer}\n\n")
    parts.append(_select_block(context, target.question, rationale.text, choices.choices))
    return PromptText(
        kind=PromptKind.SELECT,
        text="".join(parts),
        shot_ids=tuple(s.instance.question_id for s in shots),
        template_version=templates.version,
    )


_CHOICE_SPLIT = re.compile(r" or |,")


def parse_choices(raw_completion: str) -> list[str]:
    """Split a completion into candidate answers.

    Splits on the token " or " and on commas, trims whitespace and
    trailing periods, drops empties, preserves order.
    """
    out = []
    for piece in _CHOICE_SPLIT.split(raw_completion):
        piece = piece.strip().rstrip(".").strip()
        if piece:
            out.append(piece)
    return out


def merge_choice_lists(
    question_id: int,
    sources: Sequence[tuple[str, Sequence[str]]],
) -> ChoiceList:
    """Concatenate (source_name, raw choices) lists, normalize, dedup keep-first."""
    choices: list[str] = []
    provenance: list[ChoiceProvenance] = []
    seen: set[str] = set()
    for source_name, raw_choices in sources:
        for rank, raw in enumerate(raw_choices, start=1):
            norm = normalize(raw)
            if not norm or norm in seen:
                continue
            seen.add(norm)
            choices.append(norm)
            provenance.append(ChoiceProvenance(source=source_name, rank=rank))
    return ChoiceList(
        question_id=question_id,
        choices=tuple(choices),
        provenance=tuple(provenance),
    )


def pool_choices(
    question_id: int,
    qc_output: Sequence[str],
    q_output: Sequence[str],
) -> ChoiceList:
    """Pool the two prompt outputs, context+question choices first."""
    return merge_choice_lists(question_id, [("QC", qc_output), ("Q", q_output)])
