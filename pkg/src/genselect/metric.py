"""VQA answer normalization, leave-one-out accuracy, and top-k coverage reports.

Normalization follows the reference VQA-challenge evaluator rules so that
scores are bit-compatible with published numbers: contraction repair,
punctuation stripping (commas between digits deleted, apostrophes kept),
a digit-word map, article removal, and whitespace collapse. Both the
candidate and the gold answers are normalized before comparison.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import TYPE_CHECKING, Mapping, Sequence

if TYPE_CHECKING:
    from genselect.data import Dataset

ANNOTATIONS_PER_QUESTION = 10

# Reference VQA-challenge contraction repairs, kept verbatim (the capitalized
# keys never match lowercased input; the reference table carries them anyway).
_CONTRACTIONS = {
    "aint": "ain't", "arent": "aren't", "cant": "can't", "couldve": "could've",
    "couldnt": "couldn't", "couldn'tve": "couldn't've",
    "couldnt've": "couldn't've", "didnt": "didn't", "doesnt": "doesn't",
    "dont": "don't", "hadnt": "hadn't", "hadnt've": "hadn't've",
    "hadn'tve": "hadn't've", "hasnt": "hasn't", "havent": "haven't",
    "hed": "he'd", "hed've": "he'd've", "he'dve": "he'd've", "hes": "he's",
    "howd": "how'd", "howll": "how'll", "hows": "how's", "Id've": "I'd've",
    "I'dve": "I'd've", "Im": "I'm", "Ive": "I've", "isnt": "isn't",
    "itd": "it'd", "itd've": "it'd've", "it'dve": "it'd've", "itll": "it'll",
    "let's": "let's", "maam": "ma'am", "mightnt": "mightn't",
    "mightnt've": "mightn't've", "mightn'tve": "mightn't've",
    "mightve": "might've", "mustnt": "mustn't", "mustve": "must've",
    "neednt": "needn't", "notve": "not've", "oclock": "o'clock",
    "oughtnt": "oughtn't", "ow's'at": "'ow's'at", "'ows'at": "'ow's'at",
    "'ow'sat": "'ow's'at", "shant": "shan't", "shed've": "she'd've",
    "she'dve": "she'd've", "she's": "she's", "shouldve": "should've",
    "shouldnt": "shouldn't", "shouldnt've": "shouldn't've",
    "shouldn'tve": "shouldn't've", "somebody'd": "somebodyd",
    "somebodyd've": "somebody'd've", "somebody'dve": "somebody'd've",
    "somebodyll": "somebody'll", "somebodys": "somebody's",
    "someoned": "someone'd", "someoned've": "someone'd've",
    "someone'dve": "someone'd've", "someonell": "someone'll",
    "someones": "someone's", "somethingd": "something'd",
    "somethingd've": "something'd've", "something'dve": "something'd've",
    "somethingll": "something'll", "thats": "that's", "thered": "there'd",
    "thered've": "there'd've", "there'dve": "there'd've",
    "therere": "there're", "theres": "there's", "theyd": "they'd",
    "theyd've": "they'd've", "they'dve": "they'd've", "theyll": "they'll",
    "theyre": "they're", "theyve": "they've", "twas": "'twas",
    "wasnt": "wasn't", "wed've": "we'd've", "we'dve": "we'd've",
    "weve": "we've", "werent": "weren't", "whatll": "what'll",
    "whatre": "what're", "whats": "what's", "whatve": "what've",
    "whens": "when's", "whered": "where'd", "wheres": "where's",
    "whereve": "where've", "whod": "who'd", "whod've": "who'd've",
    "who'dve": "who'd've", "wholl": "who'll", "whos": "who's",
    "whove": "who've", "whyll": "why'll", "whyre": "why're", "whys": "why's",
    "wont": "won't", "wouldve": "would've", "wouldnt": "wouldn't",
    "wouldnt've": "wouldn't've", "wouldn'tve": "wouldn't've",
    "yall": "y'all", "yall'll": "y'all'll", "y'allll": "y'all'll",
    "yall'd've": "y'all'd've", "y'alld've": "y'all'd've",
    "y'all'dve": "y'all'd've", "youd": "you'd", "youd've": "you'd've",
    "you'dve": "you'd've", "youll": "you'll", "youre": "you're",
    "youve": "you've",
}

_DIGIT_MAP = {
    "none": "0", "zero": "0", "one": "1", "two": "2", "three": "3",
    "four": "4", "five": "5", "six": "6", "seven": "7", "eight": "8",
    "nine": "9", "ten": "10",
}

_ARTICLES = {"a", "an", "the"}

_PUNCT = [
    ";", "/", "[", "]", '"', "{", "}", "(", ")", "=", "+", "\\", "_", "-",
    ">", "<", "@", "`", ",", "?", "!",
]

# Reference regexes, verbatim. The period pattern effectively deletes any
# period not followed by a digit, keeping decimals like "12.5" intact.
_PERIOD_STRIP = re.compile(r"(?!<=\d)(\.)(?!\d)")
_COMMA_IN_NUMBER = re.compile(r"(\d)(,)(\d)")


def _process_punctuation(text: str) -> str:
    out = text
    has_number_comma = _COMMA_IN_NUMBER.search(text) is not None
    for p in _PUNCT:
        if (p + " " in text or " " + p in text) or has_number_comma:
            out = out.replace(p, "")
        else:
            out = out.replace(p, " ")
    return _PERIOD_STRIP.sub("", out)


def _process_digit_article(text: str) -> str:
    words = []
    for word in text.lower().split():
        word = _DIGIT_MAP.get(word, word)
        if word not in _ARTICLES:
            words.append(word)
    for i, word in enumerate(words):
        if word in _CONTRACTIONS:
            words[i] = _CONTRACTIONS[word]
    return " ".join(words)


@lru_cache(maxsize=1 << 18)
def normalize(raw: str) -> str:
    """Normalize an answer string per the reference VQA-challenge rules.

    Total and idempotent; empty input yields the empty string. Memoized:
    scoring re-normalizes the same gold answers for every choice and k.
    """
    text = raw.replace("\n", " ").replace("\t", " ").strip().lower()
    text = _process_punctuation(text)
    return _process_digit_article(text)


def _accuracy_fraction(matches: int, n: int) -> Fraction:
    # Leave-one-out: a matching left-out annotator sees matches-1 others,
    # a non-matching one sees all matches.
    hit = min(Fraction(max(matches - 1, 0), 3), Fraction(1))
    miss = min(Fraction(matches, 3), Fraction(1))
    return (matches * hit + (n - matches) * miss) / n


def vqa_accuracy(candidate: str, gold: Sequence[str]) -> float:
    """Leave-one-out VQA accuracy of a candidate against 10 gold annotations.

    Averages min(matches_in_subset / 3, 1) over the 10 subsets of 9
    annotators, matching on normalized forms. Exact rational arithmetic
    internally, so e.g. 2 matches yield exactly 0.6 and 3 yield 0.9.
    """
    if len(gold) != ANNOTATIONS_PER_QUESTION:
        raise ValueError(
            f"expected exactly {ANNOTATIONS_PER_QUESTION} gold answers, got {len(gold)}"
        )
    cand = normalize(candidate)
    matches = sum(1 for g in gold if normalize(g) == cand)
    return float(_accuracy_fraction(matches, ANNOTATIONS_PER_QUESTION))


ALL = "all"
"""Sentinel k value meaning "use every choice"."""

COVERAGE_KS = (1, 3, 5, ALL)


def topk_accuracy(choices: Sequence[str], gold: Sequence[str], k: int | str = ALL) -> float:
    """Best VQA accuracy achievable among the first k choices.

    k is a positive integer or ALL. Empty choice lists score 0.0.
    """
    if k != ALL:
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise ValueError(f"k must be a positive integer or ALL, got {k!r}")
        choices = choices[:k]
    if not len(choices):
        return 0.0
    return max(vqa_accuracy(c, gold) for c in choices)


@dataclass(frozen=True)
class CoverageReport:
    """Per-k best-achievable accuracies over a run (the knowledge-coverage view)."""

    top1: float
    top3: float
    top5: float
    all: float
    avg_choices: float
    n: int

    def per_k(self, k: int | str) -> float:
        return {1: self.top1, 3: self.top3, 5: self.top5, ALL: self.all}[k]

    def to_json(self) -> str:
        return json.dumps(
            {
                "top1": self.top1,
                "top3": self.top3,
                "top5": self.top5,
                "all": self.all,
                "avg_choices": self.avg_choices,
                "n": self.n,
            },
            sort_keys=True,
        )

    def to_table(self) -> str:
        """Aligned plain-text table: Top1, Top3, Top5, All, Avg#."""
        header = f"{'Top1':>8} {'Top3':>8} {'Top5':>8} {'All':>8} {'Avg#':>8}"
        row = (
            f"{self.top1 * 100:>8.1f} {self.top3 * 100:>8.1f} "
            f"{self.top5 * 100:>8.1f} {self.all * 100:>8.1f} "
            f"{self.avg_choices:>8.1f}"
        )
        return header + "\n" + row


def coverage(run: Mapping[int, Sequence[str]], dataset: "Dataset") -> CoverageReport:
    """Coverage report for a map of question_id -> ordered answer choices.

    The dataset must hold gold annotations for every question in the run;
    an unknown question_id raises KeyError.
    """
    if not run:
        raise ValueError("coverage of an empty run")
    missing = sorted(q for q in run if q not in dataset.instances)
    if missing:
        raise KeyError(f"run references unknown question_ids: {missing[:10]}")
    qids = sorted(run)
    gold = {q: dataset.gold_answers(q) for q in qids}
    per_k: dict[int | str, float] = {}
    for k in COVERAGE_KS:
        per_k[k] = math.fsum(topk_accuracy(run[q], gold[q], k) for q in qids) / len(qids)
    avg_choices = math.fsum(len(run[q]) for q in qids) / len(qids)
    return CoverageReport(
        top1=per_k[1],
        top3=per_k[3],
        top5=per_k[5],
        all=per_k[ALL],
        avg_choices=avg_choices,
        n=len(qids),
    )
