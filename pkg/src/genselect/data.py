"""Dataset-level domain types and their loading/validation.

On disk a dataset is the standard VQA-challenge pair of JSON files
(questions + annotations, one pair per split) plus two JSONL sidecars:
image contexts (caption + tags) and CLIP-style embeddings for images and
questions. Real OK-VQA / A-OKVQA downloads ingest unchanged.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_ANSWERS_PER_QUESTION = 10


class DataError(Exception):
    """A dataset file failed validation."""


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


class EmbeddingKind(str, Enum):
    IMAGE = "image"
    QUESTION = "question"


@dataclass(frozen=True)
class QAInstance:
    """One question: identifiers, text, and its raw gold annotations."""

    question_id: int
    image_id: int
    question: str
    gold_answers: tuple[str, ...]
    split: Split


@dataclass(frozen=True)
class ImageContext:
    """Textual surrogate of an image: a caption plus object tags."""

    image_id: int
    caption: str
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class EmbeddingRecord:
    """One parsed embedding line, before it is folded into a store."""

    owner_id: int
    kind: EmbeddingKind
    vector: tuple[float, ...]


class EmbeddingStore:
    """Owner-id keyed vectors of one kind, all sharing one dimension."""

    def __init__(self, kind: EmbeddingKind):
        self.kind = kind
        self.dim: int | None = None
        self._vectors: dict[int, np.ndarray] = {}

    def add(self, owner_id: int, vector: Sequence[float], where: str = "") -> None:
        arr = np.asarray(vector, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise DataError(f"{where}: embedding vector must be a nonempty flat list")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{where}: embedding vector contains non-finite values")
        if self.dim is None:
            self.dim = arr.size
        elif arr.size != self.dim:
            raise DataError(
                f"{where}: {self.kind.value} embedding dimension {arr.size} != {self.dim}"
            )
        if owner_id in self._vectors:
            raise DataError(f"{where}: duplicate {self.kind.value} embedding for owner {owner_id}")
        self._vectors[owner_id] = arr

    def get(self, owner_id: int) -> np.ndarray:
        return self._vectors[owner_id]

    def owner_ids(self) -> list[int]:
        return sorted(self._vectors)

    def __contains__(self, owner_id: int) -> bool:
        return owner_id in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.dim == other.dim
            and self._vectors.keys() == other._vectors.keys()
            and all(np.array_equal(v, other._vectors[k]) for k, v in self._vectors.items())
        )


@dataclass
class Dataset:
    """Immutable-after-load container shared read-only across workers."""

    instances: dict[int, QAInstance]
    contexts: dict[int, ImageContext]
    image_embeddings: EmbeddingStore
    question_embeddings: EmbeddingStore
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def split_instances(self, split: Split) -> list[QAInstance]:
        return [inst for inst in self.instances.values() if inst.split == split]

    def count(self, split: Split) -> int:
        return sum(1 for inst in self.instances.values() if inst.split == split)

    def gold_answers(self, question_id: int) -> tuple[str, ...]:
        return self.instances[question_id].gold_answers

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.instances == other.instances
            and self.contexts == other.contexts
            and self.image_embeddings == other.image_embeddings
            and self.question_embeddings == other.question_embeddings
        )


def _as_paths(path_or_paths: str | Path | Sequence[str | Path]) -> list[Path]:
    if isinstance(path_or_paths, (str, Path)):
        return [Path(path_or_paths)]
    return [Path(p) for p in path_or_paths]


def _require(obj: Mapping, key: str, where: str):
    if key not in obj:
        raise DataError(f"{where}: missing field '{key}'")
    return obj[key]


def _int_field(obj: Mapping, key: str, where: str) -> int:
    value = _require(obj, key, where)
    if isinstance(value, bool) or not isinstance(value, int):
        raise DataError(f"{where}: field '{key}' must be an integer")
    return value


def _infer_split(doc: Mapping, path: Path) -> Split:
    subtype = str(doc.get("data_subtype", "")) or path.name
    return Split.TRAIN if "train" in subtype.lower() else Split.TEST


def _load_json(path: Path, where: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{where}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{where}: expected a JSON object")
    return doc


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}, line {line_no}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}, line {line_no}: expected a JSON object")
            yield line_no, obj


def parse_context(obj: Mapping, where: str) -> ImageContext:
    image_id = _int_field(obj, "image_id", where)
    caption = _require(obj, "caption", where)
    if not isinstance(caption, str) or not caption.strip():
        raise DataError(f"{where}: field 'caption' must be nonempty text")
    raw_tags = obj.get("tags", [])
    if not isinstance(raw_tags, list) or any(not isinstance(t, str) for t in raw_tags):
        raise DataError(f"{where}: field 'tags' must be a list of strings")
    tags: list[str] = []
    seen = set()
    for tag in raw_tags:
        folded = tag.casefold()
        if folded in seen:
            continue
        seen.add(folded)
        tags.append(tag)
    return ImageContext(image_id=image_id, caption=caption, tags=tuple(tags))


def parse_embedding(obj: Mapping, where: str) -> EmbeddingRecord:
    owner_id = _int_field(obj, "owner_id", where)
    kind_raw = _require(obj, "kind", where)
    try:
        kind = EmbeddingKind(kind_raw)
    except ValueError:
        raise DataError(f"{where}: field 'kind' must be 'image' or 'question'") from None
    vector = _require(obj, "vector", where)
    if not isinstance(vector, list) or any(
        isinstance(x, bool) or not isinstance(x, (int, float)) for x in vector
    ):
        raise DataError(f"{where}: field 'vector' must be a list of numbers")
    return EmbeddingRecord(owner_id=owner_id, kind=kind, vector=tuple(float(x) for x in vector))


def load_dataset(
    questions_path: str | Path | Sequence[str | Path],
    annotations_path: str | Path | Sequence[str | Path],
    contexts_path: str | Path,
    embeddings_path: str | Path,
    answers_per_question: int = DEFAULT_ANSWERS_PER_QUESTION,
) -> Dataset:
    """Load and validate a dataset from its four on-disk artifacts.

    questions_path / annotations_path accept one file or a list of files
    (one pair per split; the split is inferred from each file's
    data_subtype, falling back to the filename). Errors carry the file
    and record/line they were found at; instances missing contexts or
    embeddings in the test split are collected as warnings.
    """
    question_files = _as_paths(questions_path)
    annotation_files = _as_paths(annotations_path)

    questions: dict[int, tuple[int, str, Split]] = {}
    for path in question_files:
        doc = _load_json(path, str(path))
        split = _infer_split(doc, path)
        records = _require(doc, "questions", str(path))
        for i, rec in enumerate(records):
            where = f"{path}, questions[{i}]"
            qid = _int_field(rec, "question_id", where)
            image_id = _int_field(rec, "image_id", where)
            question = _require(rec, "question", where)
            if not isinstance(question, str) or not question.strip():
                raise DataError(f"{where}: field 'question' must be nonempty text")
            if qid in questions:
                raise DataError(f"{where}: duplicate question_id {qid}")
            questions[qid] = (image_id, question, split)

    if not questions:
        raise DataError("no instances: questions files contain no records")

    answers: dict[int, tuple[str, ...]] = {}
    for path in annotation_files:
        doc = _load_json(path, str(path))
        records = _require(doc, "annotations", str(path))
        for i, rec in enumerate(records):
            where = f"{path}, annotations[{i}]"
            qid = _int_field(rec, "question_id", where)
            if qid not in questions:
                raise DataError(f"{where}: annotation for unknown question_id {qid}")
            if qid in answers:
                raise DataError(f"{where}: duplicate annotation for question_id {qid}")
            raw = _require(rec, "answers", where)
            if not isinstance(raw, list):
                raise DataError(f"{where}: field 'answers' must be a list")
            if len(raw) != answers_per_question:
                raise DataError(
                    f"{where}: question {qid} has {len(raw)} answers, expected {answers_per_question}"
                )
            texts = []
            for j, ans in enumerate(raw):
                if not isinstance(ans, Mapping) or not isinstance(ans.get("answer"), str):
                    raise DataError(f"{where}: answers[{j}] must be an object with text field 'answer'")
                texts.append(ans["answer"])
            answers[qid] = tuple(texts)

    if not answers:
        raise DataError("no instances: annotations files contain no records")
    missing_annotations = sorted(set(questions) - set(answers))
    if missing_annotations:
        raise DataError(
            f"questions without annotations: {missing_annotations[:10]}"
            + (" ..." if len(missing_annotations) > 10 else "")
        )

    instances = {
        qid: QAInstance(
            question_id=qid,
            image_id=questions[qid][0],
            question=questions[qid][1],
            gold_answers=answers[qid],
            split=questions[qid][2],
        )
        for qid in sorted(questions)
    }

    contexts: dict[int, ImageContext] = {}
    contexts_file = Path(contexts_path)
    for line_no, obj in _iter_jsonl(contexts_file):
        ctx = parse_context(obj, f"{contexts_file}, line {line_no}")
        if ctx.image_id in contexts:
            raise DataError(f"{contexts_file}, line {line_no}: duplicate image_id {ctx.image_id}")
        contexts[ctx.image_id] = ctx

    image_embeddings = EmbeddingStore(EmbeddingKind.IMAGE)
    question_embeddings = EmbeddingStore(EmbeddingKind.QUESTION)
    embeddings_file = Path(embeddings_path)
    for line_no, obj in _iter_jsonl(embeddings_file):
        rec = parse_embedding(obj, f"{embeddings_file}, line {line_no}")
        store = image_embeddings if rec.kind == EmbeddingKind.IMAGE else question_embeddings
        store.add(rec.owner_id, rec.vector, f"{embeddings_file}, line {line_no}")

    warnings = _validate(instances, contexts, image_embeddings, question_embeddings)
    dataset = Dataset(
        instances=instances,
        contexts={k: contexts[k] for k in sorted(contexts)},
        image_embeddings=image_embeddings,
        question_embeddings=question_embeddings,
        warnings=tuple(warnings),
    )
    logger.info(
        "loaded %d train / %d test instances, %d contexts, %d image + %d question embeddings (%d warnings)",
        dataset.count(Split.TRAIN),
        dataset.count(Split.TEST),
        len(contexts),
        len(image_embeddings),
        len(question_embeddings),
        len(warnings),
    )
    return dataset


def _validate(
    instances: Mapping[int, QAInstance],
    contexts: Mapping[int, ImageContext],
    image_embeddings: EmbeddingStore,
    question_embeddings: EmbeddingStore,
) -> list[str]:
    warnings: list[str] = []
    for inst in instances.values():
        if inst.split != Split.TEST:
            continue
        if inst.image_id not in contexts:
            warnings.append(f"question {inst.question_id}: missing context for image {inst.image_id}")
        if inst.image_id not in image_embeddings:
            warnings.append(f"question {inst.question_id}: missing image embedding for image {inst.image_id}")
        if inst.question_id not in question_embeddings:
            warnings.append(f"question {inst.question_id}: missing question embedding")
    return warnings


def dump_dataset(dataset: Dataset, out_dir: str | Path) -> dict[str, list[Path] | Path]:
    """Debug dump: re-serialize a Dataset into loadable files.

    Writes one questions/annotations pair per nonempty split plus the
    contexts and embeddings JSONL files; load_dataset on the returned
    paths reproduces the dataset exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    question_paths: list[Path] = []
    annotation_paths: list[Path] = []
    for split in (Split.TRAIN, Split.TEST):
        members = dataset.split_instances(split)
        if not members:
            continue
        qpath = out / f"questions_{split.value}.json"
        apath = out / f"annotations_{split.value}.json"
        with open(qpath, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "data_subtype": split.value,
                    "questions": [
                        {
                            "question_id": m.question_id,
                            "image_id": m.image_id,
                            "question": m.question,
                        }
                        for m in members
                    ],
                },
                fh,
                ensure_ascii=False,
            )
        with open(apath, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "data_subtype": split.value,
                    "annotations": [
                        {
                            "question_id": m.question_id,
                            "image_id": m.image_id,
                            "answers": [{"answer": a} for a in m.gold_answers],
                        }
                        for m in members
                    ],
                },
                fh,
                ensure_ascii=False,
            )
        question_paths.append(qpath)
        annotation_paths.append(apath)

    contexts_path = out / "contexts.jsonl"
    with open(contexts_path, "w", encoding="utf-8") as fh:
        for image_id in sorted(dataset.contexts):
            ctx = dataset.contexts[image_id]
            fh.write(
                json.dumps(
                    {"image_id": ctx.image_id, "caption": ctx.caption, "tags": list(ctx.tags)},
                    ensure_ascii=False,
                )
                + "\n"
            )

    embeddings_path = out / "embeddings.jsonl"
    with open(embeddings_path, "w", encoding="utf-8") as fh:
        for store in (dataset.image_embeddings, dataset.question_embeddings):
            for owner_id in store.owner_ids():
                fh.write(
                    json.dumps(
                        {
                            "owner_id": owner_id,
                            "kind": store.kind.value,
                            "vector": store.get(owner_id).tolist(),
                        }
                    )
                    + "\n"
                )

    return {
        "questions": question_paths,
        "annotations": annotation_paths,
        "contexts": contexts_path,
        "embeddings": embeddings_path,
    }
