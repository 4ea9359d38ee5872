"""Few-shot example retrieval by combined image/question embedding similarity.

Exhaustive scan over the train split; the combined score is a weighted
mean of the image-image and question-question cosines (0.5/0.5 by
default). Exactness over speed: ties break by ascending question_id so
the ranking is total and reproducible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from genselect.data import Dataset, QAInstance, Split

logger = logging.getLogger(__name__)


class RetrievalError(Exception):
    """Retrieval preconditions not met (missing embeddings, bad shot count)."""


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    """Cosine similarity of two equal-dimension, nonzero vectors."""
    ua = np.asarray(u, dtype=np.float64)
    va = np.asarray(v, dtype=np.float64)
    if ua.ndim != 1 or va.ndim != 1 or ua.shape != va.shape:
        raise ValueError(f"dimension mismatch: {ua.shape} vs {va.shape}")
    duv = float(np.dot(ua, va))
    duu = float(np.dot(ua, ua))
    dvv = float(np.dot(va, va))
    if duu == 0.0 or dvv == 0.0:
        raise ValueError("cosine of a zero-norm vector is undefined")
    # Single sqrt of the product keeps cosine(u, u) exactly 1.0.
    return duv / math.sqrt(duu * dvv)


@dataclass(frozen=True)
class SimilarityScore:
    train_question_id: int
    score: float


def score_candidates(
    target: QAInstance,
    dataset: Dataset,
    image_weight: float = 0.5,
    require_context: bool = False,
    candidate_ids: Iterable[int] | None = None,
) -> list[SimilarityScore]:
    """Score every eligible train instance against the target, best first.

    Candidates missing an embedding (or a context, when require_context is
    set) are skipped with a warning count; a missing target embedding is
    fatal. candidate_ids restricts the scan to a subset of the train split.
    """
    try:
        target_image = dataset.image_embeddings.get(target.image_id)
        target_question = dataset.question_embeddings.get(target.question_id)
    except KeyError as exc:
        raise RetrievalError(
            f"target question {target.question_id} is missing an embedding: {exc}"
        ) from None

    if candidate_ids is not None:
        allowed = set(candidate_ids)
    else:
        allowed = None

    skipped = 0
    scores: list[SimilarityScore] = []
    for cand in dataset.instances.values():
        if cand.split != Split.TRAIN or cand.question_id == target.question_id:
            continue
        if allowed is not None and cand.question_id not in allowed:
            continue
        if require_context and cand.image_id not in dataset.contexts:
            skipped += 1
            continue
        if cand.image_id not in dataset.image_embeddings or cand.question_id not in dataset.question_embeddings:
            skipped += 1
            continue
        image_sim = cosine(target_image, dataset.image_embeddings.get(cand.image_id))
        question_sim = cosine(target_question, dataset.question_embeddings.get(cand.question_id))
        combined = image_weight * image_sim + (1.0 - image_weight) * question_sim
        scores.append(SimilarityScore(cand.question_id, combined))
    if skipped:
        logger.warning(
            "question %d: skipped %d train candidates missing embeddings%s",
            target.question_id,
            skipped,
            " or contexts" if require_context else "",
        )
    scores.sort(key=lambda s: (-s.score, s.train_question_id))
    return scores


def retrieve_examples(
    target: QAInstance,
    dataset: Dataset,
    n_shots: int,
    image_weight: float = 0.5,
    require_context: bool = False,
    candidate_ids: Iterable[int] | None = None,
) -> list[QAInstance]:
    """The n_shots most similar train instances, descending score.

    The target itself is excluded when it belongs to the train split.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be positive")
    n_train = dataset.count(Split.TRAIN)
    if n_shots > n_train:
        raise RetrievalError(f"n_shots={n_shots} exceeds train split size {n_train}")
    ranked = score_candidates(
        target,
        dataset,
        image_weight=image_weight,
        require_context=require_context,
        candidate_ids=candidate_ids,
    )
    if len(ranked) < n_shots:
        raise RetrievalError(
            f"question {target.question_id}: only {len(ranked)} scorable candidates for n_shots={n_shots}"
        )
    return [dataset.instances[s.train_question_id] for s in ranked[:n_shots]]
