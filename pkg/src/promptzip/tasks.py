"""Task adapters: dataset ingestion, evaluator prompts, output scoring.

Four downstream tasks are supported: original-text reconstruction,
summarization, multi-hop QA over concatenated documents, and chain-of-
thought math reasoning where only the demonstrations' reasoning steps
are compressed.

Dataset files are line-delimited JSON; see ``load_dataset`` for the
per-task record shapes. Evaluation prompt templates are normative:
replay cassettes key on the prompts they produce, so changing them is a
breaking change.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from pathlib import Path

import requests

from .gateway import truncate_tokens
from .textmetrics import (
    MetricReport,
    exact_match,
    extract_numeric_answer,
    numbers_equal,
    parse_number,
    rouge_l,
    rouge_n,
    token_f1,
    tokenize_words,
)

MAX_INSTANCE_TOKENS = 1000


class TaskKind(str, Enum):
    RECONSTRUCTION = "reconstruction"
    SUMMARIZATION = "summarization"
    MULTIHOP_QA = "multihop_qa"
    COT_REASONING = "cot_reasoning"


class MalformedRecord(ValueError):
    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyDataset(ValueError):
    pass


class MissingAux(ValueError):
    """QA/CoT instance lacks the auxiliary fields its prompt needs."""


class ScorerUnavailable(RuntimeError):
    pass


@dataclass
class TaskInstance:
    id: str
    compressible_text: str
    aux: str | None
    reference: str


@dataclass(frozen=True)
class EvalTarget:
    """Held-out evaluation context for CoT reasoning.

    ``extra_demos`` holds additional pre-compressed (question, reasoning,
    answer) blocks for multi-shot prompts; the instance under evaluation
    always supplies the first block.
    """

    question: str
    shots: int = 1
    extra_demos: tuple[tuple[str, str, str], ...] = ()


@dataclass(frozen=True)
class CotTestQuestion:
    id: str
    question: str
    answer: str


@dataclass
class TaskData:
    """A loaded dataset plus per-instance evaluation targets (CoT only)."""

    kind: TaskKind
    instances: list[TaskInstance]
    eval_targets: dict[str, EvalTarget]

    def target_for(self, instance: TaskInstance) -> EvalTarget | None:
        return self.eval_targets.get(instance.id)


_REQUIRED_FIELDS = {
    TaskKind.RECONSTRUCTION: ("id", "text", "reference"),
    TaskKind.SUMMARIZATION: ("id", "text", "reference"),
    TaskKind.MULTIHOP_QA: ("id", "question", "documents", "answer"),
    TaskKind.COT_REASONING: ("id", "question", "reasoning", "answer_number"),
}


def _read_records(path: str | Path) -> list[tuple[int, dict]]:
    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise MalformedRecord(line_no, "record is not an object")
            records.append((line_no, record))
    return records


def load_dataset(path: str | Path, kind: TaskKind, limit: int | None = None) -> list[TaskInstance]:
    """Read one line-delimited dataset file into task instances.

    Record shapes:
      reconstruction / summarization: {id, text, reference}
      multihop_qa: {id, question, documents: [str, ...], answer}
      cot_reasoning: {id, question, reasoning, answer_number}

    Compressible text is truncated to MAX_INSTANCE_TOKENS whitespace
    tokens; QA documents are concatenated in file order before truncation.
    """
    kind = TaskKind(kind)
    instances: list[TaskInstance] = []
    for line_no, record in _read_records(path):
        for field_name in _REQUIRED_FIELDS[kind]:
            if field_name not in record:
                raise MalformedRecord(line_no, f"missing field {field_name!r}")
        rid = str(record["id"])
        if kind in (TaskKind.RECONSTRUCTION, TaskKind.SUMMARIZATION):
            text = truncate_tokens(str(record["text"]), MAX_INSTANCE_TOKENS)
            aux = None
            reference = str(record["reference"])
        elif kind is TaskKind.MULTIHOP_QA:
            documents = record["documents"]
            if not isinstance(documents, list) or not documents:
                raise MalformedRecord(line_no, "'documents' must be a non-empty list")
            text = truncate_tokens("\n".join(str(d) for d in documents), MAX_INSTANCE_TOKENS)
            aux = str(record["question"])
            reference = str(record["answer"])
        else:
            text = truncate_tokens(str(record["reasoning"]), MAX_INSTANCE_TOKENS)
            aux = f"{record['question']}\n{record['answer_number']}"
            reference = str(record["answer_number"])
        if not reference:
            raise MalformedRecord(line_no, "empty reference")
        if not text:
            raise MalformedRecord(line_no, "empty compressible text")
        instances.append(TaskInstance(id=rid, compressible_text=text, aux=aux, reference=reference))
        if limit is not None and len(instances) >= limit:
            break
    if not instances:
        raise EmptyDataset(f"no usable records in {path}")
    return instances


def load_cot_test_questions(path: str | Path) -> list[CotTestQuestion]:
    """Read the held-out CoT test-question file: {id, question, answer_number}."""
    questions = []
    for line_no, record in _read_records(path):
        for field_name in ("id", "question", "answer_number"):
            if field_name not in record:
                raise MalformedRecord(line_no, f"missing field {field_name!r}")
        questions.append(
            CotTestQuestion(
                id=str(record["id"]),
                question=str(record["question"]),
                answer=str(record["answer_number"]),
            )
        )
    if not questions:
        raise EmptyDataset(f"no test questions in {path}")
    return questions


def load_task_data(
    path: str | Path,
    kind: TaskKind,
    limit: int | None = None,
    cot_test_path: str | Path | None = None,
) -> TaskData:
    """Load a dataset and, for CoT, pair each demonstration with a held-out
    test question (round-robin by position). Paired instances score against
    the test question's answer; the demonstration's own question and final
    answer stay in ``aux`` for prompt assembly."""
    kind = TaskKind(kind)
    instances = load_dataset(path, kind, limit)
    targets: dict[str, EvalTarget] = {}
    if kind is TaskKind.COT_REASONING:
        if cot_test_path is None:
            raise ValueError("cot_reasoning requires a test-question file")
        tests = load_cot_test_questions(cot_test_path)
        paired = []
        for i, instance in enumerate(instances):
            test = tests[i % len(tests)]
            paired.append(replace(instance, reference=test.answer))
            targets[instance.id] = EvalTarget(question=test.question)
        instances = paired
    return TaskData(kind=kind, instances=instances, eval_targets=targets)


def mini_corpus_path(kind: TaskKind | str, test_questions: bool = False) -> Path:
    """Path to the bundled 5-sample corpus for a task."""
    if test_questions:
        name = "mini_cot_test.jsonl"
    else:
        name = f"mini_{TaskKind(kind).value}.jsonl"
    return Path(str(resources.files("promptzip").joinpath("data", name)))


# --- evaluation prompts (normative templates) ------------------------------

COT_HEADER = "Refer to the following examples to answer the math problem."


def _split_cot_aux(instance: TaskInstance) -> tuple[str, str]:
    if not instance.aux or "\n" not in instance.aux:
        raise MissingAux(f"instance {instance.id} lacks question/answer aux")
    question, _, answer = instance.aux.rpartition("\n")
    return question, answer


def build_eval_prompt(
    kind: TaskKind,
    compressed: str,
    instance: TaskInstance,
    target: EvalTarget | None = None,
) -> str:
    """Fill the task's evaluator template with the compressed text."""
    kind = TaskKind(kind)
    if not compressed:
        raise ValueError("compressed text must be nonempty")
    if kind is TaskKind.RECONSTRUCTION:
        return (
            "Reconstruct the original text from the compressed text.\n"
            f"Compressed Text: {compressed}\nOriginal Text:"
        )
    if kind is TaskKind.SUMMARIZATION:
        return f"Summarize the following text.\nText: {compressed}\nSummary:"
    if kind is TaskKind.MULTIHOP_QA:
        if not instance.aux:
            raise MissingAux(f"instance {instance.id} lacks a question")
        return (
            "Answer the question based on the context.\n"
            f"Context: {compressed}\nQuestion: {instance.aux}\nAnswer:"
        )
    # CoT: demonstration blocks, then the held-out test question.
    if target is None or not target.question:
        raise MissingAux(f"instance {instance.id} has no evaluation target question")
    question, answer = _split_cot_aux(instance)
    blocks = [(question, compressed, answer)]
    blocks.extend(target.extra_demos[: max(0, target.shots - 1)])
    parts = [COT_HEADER]
    for i, (demo_q, demo_reasoning, demo_answer) in enumerate(blocks, start=1):
        parts.append(
            f"Example {i}\nQuestion: {demo_q}\n"
            f"Answer: {demo_reasoning} The answer is: {demo_answer}"
        )
    parts.append(f"Question: {target.question}\nAnswer:")
    return "\n\n".join(parts)


def score_output(kind: TaskKind, model_output: str, instance: TaskInstance) -> MetricReport:
    """Score an evaluator output against the instance reference."""
    kind = TaskKind(kind)
    if kind in (TaskKind.RECONSTRUCTION, TaskKind.SUMMARIZATION):
        candidate = tokenize_words(model_output)
        reference = tokenize_words(instance.reference)
        r1 = rouge_n(candidate, reference, 1)
        r2 = rouge_n(candidate, reference, 2)
        rl = rouge_l(candidate, reference)
        return MetricReport(scalar=rl.f1, rouge1=r1, rouge2=r2, rougeL=rl)
    if kind is TaskKind.MULTIHOP_QA:
        em = float(exact_match(model_output, instance.reference))
        f1 = token_f1(model_output, instance.reference)
        return MetricReport(scalar=f1, em=em, f1=f1)
    predicted = extract_numeric_answer(model_output)
    gold = parse_number(instance.reference)
    correct = predicted is not None and gold is not None and numbers_equal(predicted, gold)
    accuracy = 1.0 if correct else 0.0
    return MetricReport(scalar=accuracy, accuracy=accuracy)


# --- optional external scorer ----------------------------------------------


@dataclass(frozen=True)
class ExternalScorerConfig:
    url: str
    timeout_ms: int = 30_000


def external_score_hook(
    kind: TaskKind,
    pairs: list[tuple[str, str]],
    scorer: ExternalScorerConfig | None = None,
) -> list[float]:
    """Forward (output, reference) pairs to an external scoring service.

    Never used as the adaptation scalar unless explicitly configured;
    embedding-based scorers stay out of process by design.
    """
    if scorer is None:
        raise ScorerUnavailable("no external scorer configured")
    if not pairs:
        return []
    payload = {
        "task": TaskKind(kind).value,
        "pairs": [{"candidate": out, "reference": ref} for out, ref in pairs],
    }
    try:
        response = requests.post(scorer.url, json=payload, timeout=scorer.timeout_ms / 1000.0)
        response.raise_for_status()
        scores = response.json()["scores"]
    except (requests.RequestException, KeyError, ValueError) as exc:
        raise ScorerUnavailable(f"external scorer failed: {exc}") from exc
    if len(scores) != len(pairs):
        raise ScorerUnavailable("external scorer returned wrong number of scores")
    return [float(s) for s in scores]
