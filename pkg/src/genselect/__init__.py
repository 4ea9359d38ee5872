"""Generate-then-select VQA pipeline over frozen completion backends.

Elicit every plausible answer from a language model with dual few-shot
prompts, pool and rank the candidates, select among them with a
chain-of-thought guided re-prompt, and score runs with the VQA-challenge
accuracy metric and top-k knowledge-coverage reports.
"""

from genselect.backend import (
    BackendRegistry,
    CompletionCache,
    CompletionClient,
    CompletionRecord,
    CompletionRequest,
    HTTPBackend,
    ReplayBackend,
)
from genselect.data import Dataset, ImageContext, QAInstance, Split, load_dataset
from genselect.metric import CoverageReport, coverage, normalize, topk_accuracy, vqa_accuracy
from genselect.pipeline import (
    SelectionResult,
    SelectorKind,
    ensemble_choices,
    evaluate_run,
    generate_choices,
    generate_cots,
    select_answers,
)
from genselect.prompts import (
    ChoiceList,
    PromptText,
    Rationale,
    TemplateSet,
    build_cot_prompt,
    build_prompt_q,
    build_prompt_qc,
    build_select_prompt,
    parse_choices,
    pool_choices,
)
from genselect.retriever import cosine, retrieve_examples

__version__ = "0.1.0"

__all__ = [
    "BackendRegistry",
    "ChoiceList",
    "CompletionCache",
    "CompletionClient",
    "CompletionRecord",
    "CompletionRequest",
    "CoverageReport",
    "Dataset",
    "HTTPBackend",
    "ImageContext",
    "PromptText",
    "QAInstance",
    "Rationale",
    "ReplayBackend",
    "SelectionResult",
    "SelectorKind",
    "Split",
    "TemplateSet",
    "build_cot_prompt",
    "build_prompt_q",
    "build_prompt_qc",
    "build_select_prompt",
    "cosine",
    "coverage",
    "ensemble_choices",
    "evaluate_run",
    "generate_choices",
    "generate_cots",
    "load_dataset",
    "normalize",
    "parse_choices",
    "pool_choices",
    "retrieve_examples",
    "select_answers",
    "topk_accuracy",
    "vqa_accuracy",
]
