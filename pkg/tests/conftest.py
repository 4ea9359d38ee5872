"""Shared fixtures: synthetic datasets, scripted backends, replay fixtures."""

from __future__ import annotations

import json
import re
from pathlib import Path

import pytest

from genselect.backend import CompletionBackend, write_replay_fixture
from genselect.data import (
    Dataset,
    EmbeddingKind,
    EmbeddingStore,
    ImageContext,
    QAInstance,
    Split,
)

GOLDEN_DIR = Path(__file__).parent / "goldens"


def make_store(kind: EmbeddingKind, vectors: dict[int, list[float]]) -> EmbeddingStore:
    store = EmbeddingStore(kind)
    for owner_id in vectors:
        store.add(owner_id, vectors[owner_id])
    return store


def build_dataset(instances, contexts, image_vecs, question_vecs) -> Dataset:
    return Dataset(
        instances={i.question_id: i for i in sorted(instances, key=lambda x: x.question_id)},
        contexts={c.image_id: c for c in contexts},
        image_embeddings=make_store(EmbeddingKind.IMAGE, image_vecs),
        question_embeddings=make_store(EmbeddingKind.QUESTION, question_vecs),
    )


def write_dataset_files(dataset: Dataset, out_dir: Path) -> dict:
    """Serialize a Dataset into loadable fixture files, one split pair each."""
    from genselect.data import dump_dataset

    paths = dump_dataset(dataset, out_dir)
    return {
        "questions": [str(p) for p in paths["questions"]],
        "annotations": [str(p) for p in paths["annotations"]],
        "contexts": str(paths["contexts"]),
        "embeddings": str(paths["embeddings"]),
    }


# ---------------------------------------------------------------------------
# Golden 5-question fixture: fixed texts, hand-written, used for prompt goldens.


def _golden_instances():
    train = [
        QAInstance(
            1, 1, "What utensil is used to eat soup?",
            ("Spoon", "spoon", "ladle", "spoon", "a spoon", "spoon", "ladle", "spoon", "spoon", "spoon"),
            Split.TRAIN,
        ),
        QAInstance(
            2, 2, "Which animal is known as man's best friend?",
            ("dog",) * 10,
            Split.TRAIN,
        ),
        QAInstance(
            3, 3, "What do bees make?",
            ("honey", "honey", "wax", "Honey", "honey", "wax", "honey", "wax", "honey", "honey"),
            Split.TRAIN,
        ),
    ]
    test = [
        QAInstance(101, 11, "What musical instrument has black and white keys?", ("piano",) * 10, Split.TEST),
        QAInstance(102, 12, "Which fruit keeps the doctor away?", ("apple",) * 7 + ("an apple", "fruit", "orange"), Split.TEST),
        QAInstance(103, 13, "What season comes after summer?", ("fall", "autumn") * 5, Split.TEST),
        QAInstance(104, 14, "What gas do plants absorb?", ("carbon dioxide",) * 8 + ("co2", "oxygen"), Split.TEST),
        QAInstance(105, 15, "Where do penguins mostly live?", ("antarctica",) * 6 + ("south pole",) * 4, Split.TEST),
    ]
    return train + test


def _golden_contexts():
    return [
        ImageContext(1, "A bowl of soup on a wooden table", ("soup", "bowl", "table")),
        ImageContext(2, "A dog playing fetch in a park.", ("dog", "park")),
        ImageContext(3, "Bees flying around a hive", ()),
        ImageContext(11, "A grand piano in a bright room", ("piano", "room")),
        ImageContext(12, "A basket of red apples on a counter", ("apple", "basket")),
        ImageContext(13, "Trees with orange and brown leaves", ("tree", "leaves")),
        ImageContext(14, "A green houseplant near a window", ("plant", "window")),
        ImageContext(15, "Penguins standing on an ice sheet", ("penguin", "ice", "snow")),
    ]


@pytest.fixture
def golden_dataset() -> Dataset:
    instances = _golden_instances()
    image_vecs = {i.image_id: [1.0, float(i.image_id)] for i in instances}
    question_vecs = {i.question_id: [1.0, float(i.question_id)] for i in instances}
    return build_dataset(instances, _golden_contexts(), image_vecs, question_vecs)


# ---------------------------------------------------------------------------
# Scripted backend: completes requests by recognizing which stage/question a
# prompt belongs to, so real pipeline runs can be recorded into replay fixtures.

_GEN_TAIL = re.compile(r"Question: (.+)\nAnswer:$")
_COT_TAIL = re.compile(r"Question: (.+)\nRationale:$")
_SELECT_TAIL = re.compile(r" question: (.+?) rationale: ")


class ScriptedBackend(CompletionBackend):
    """Maps (stage, question_id) to a scripted completion."""

    def __init__(self, name, dataset: Dataset, script: dict, model_id=None):
        super().__init__(name, model_id)
        self.dataset = dataset
        self.script = script
        self.by_question = {i.question: i.question_id for i in dataset.instances.values()}

    def _classify(self, request) -> tuple[str, int]:
        prompt = request.prompt
        if request.max_tokens == 80:
            match = _COT_TAIL.search(prompt)
            return "cot", self.by_question[match.group(1)]
        if request.max_tokens == 5:
            last_block = prompt.rsplit("\n\n", 1)[-1]
            match = _SELECT_TAIL.search(last_block)
            return "select", self.by_question[match.group(1)]
        match = _GEN_TAIL.search(prompt)
        qid = self.by_question[match.group(1)]
        final_block = prompt.rsplit("\n\n", 1)[-1]
        return ("gen_qc" if final_block.startswith("Context:") else "gen_q"), qid

    def send(self, request) -> str:
        self.calls += 1
        stage, qid = self._classify(request)
        return self.script[(stage, qid)]


# ---------------------------------------------------------------------------
# 20-question end-to-end fixture. Selected answer for test question i is
# "a{i}"; gold answers contain it m_i times, giving hand-computed accuracies.

E2E_MATCH_COUNTS = [10] * 5 + [3] * 5 + [2] * 4 + [1] * 3 + [0] * 3
E2E_EXPECTED_ACCS = [1.0] * 5 + [0.9] * 5 + [0.6] * 4 + [0.3] * 3 + [0.0] * 3

# 16 train instances so the default 16-shot test retrieval works unmodified.
N_E2E_TRAIN = 16


def build_e2e_dataset() -> Dataset:
    instances = []
    contexts = []
    image_vecs = {}
    question_vecs = {}
    for i in range(1, N_E2E_TRAIN + 1):
        qid, image_id = i, i
        instances.append(
            QAInstance(qid, image_id, f"what is in training scene {i}?", (f"t{i}",) * 10, Split.TRAIN)
        )
        contexts.append(ImageContext(image_id, f"A training scene number {i}", (f"tag{i}",)))
        image_vecs[image_id] = [1.0, float(i), 0.5]
        question_vecs[qid] = [1.0, float(i), -0.5]
    for i in range(1, 21):
        qid, image_id = 100 + i, 200 + i
        m = E2E_MATCH_COUNTS[i - 1]
        gold = tuple([f"a{i}"] * m + [f"filler{i}x{j}" for j in range(10 - m)])
        instances.append(QAInstance(qid, image_id, f"what is shown in test scene {i}?", gold, Split.TEST))
        contexts.append(ImageContext(image_id, f"A test scene number {i}", (f"thing{i}", "object")))
        image_vecs[image_id] = [1.0, float(i) * 0.7, 0.2]
        question_vecs[qid] = [1.0, float(i) * 0.7, -0.2]
    return build_dataset(instances, contexts, image_vecs, question_vecs)


def e2e_script() -> dict:
    script = {}
    for i in range(1, N_E2E_TRAIN + 1):
        script[("gen_qc", i)] = f"t{i} or u{i}"
        script[("gen_q", i)] = f"u{i} or v{i}"
        script[("cot", i)] = f"because training scene {i} shows t{i}"
        script[("select", i)] = f" t{i}"
    for i in range(1, 21):
        qid = 100 + i
        script[("gen_qc", qid)] = f"a{i} or b{i}"
        script[("gen_q", qid)] = f"b{i} or c{i}"
        script[("cot", qid)] = f"because test scene {i} features a{i}\nsecond line ignored"
        mode = i % 3
        if mode == 1:
            script[("select", qid)] = f" a{i}"
        elif mode == 2:
            script[("select", qid)] = f" the answer is a{i}"
        else:
            script[("select", qid)] = " zzz unmatched zzz"
    return script


def record_replay_fixture(dataset: Dataset, script: dict, path: Path, model_id="replay-model") -> Path:
    """Run all stages against the scripted backend, dump cache as a replay fixture."""
    from genselect.backend import CompletionCache, CompletionClient
    from genselect.pipeline import generate_choices, generate_cots, select_answers

    cache = CompletionCache(path.parent / "_recording_cache.jsonl")
    client = CompletionClient(ScriptedBackend("scripted", dataset, script, model_id=model_id), cache)
    train_choices = generate_choices(dataset, Split.TRAIN, client)
    train_cots = generate_cots(dataset, Split.TRAIN, client)
    test_choices = generate_choices(dataset, Split.TEST, client)
    test_cots = generate_cots(dataset, Split.TEST, client)
    select_answers(
        dataset,
        test_choices,
        test_cots,
        client,
        "prompt_select",
        shot_choices=train_choices,
        shot_rationales=train_cots,
    )
    entries = {key: cache.get(key).completion for key in cache.keys()}
    write_replay_fixture(path, entries)
    (path.parent / "_recording_cache.jsonl").unlink()
    return path


@pytest.fixture(scope="session")
def e2e_fixture(tmp_path_factory):
    """(dataset, replay fixture path) for the 20-question end-to-end runs."""
    dataset = build_e2e_dataset()
    path = tmp_path_factory.mktemp("replay") / "replay.jsonl"
    record_replay_fixture(dataset, e2e_script(), path)
    return dataset, path


def read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
