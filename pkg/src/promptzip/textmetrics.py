"""Deterministic text scoring without external dependencies.

Implements the metrics used to judge compressed prompts:
- ROUGE-1/2/L (precision / recall / F1)
- SQuAD-style exact match and token-level F1 for QA
- numeric answer extraction for math reasoning outputs
"""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass, field

_WORD_SPLIT = re.compile(r"[\W_]+", re.UNICODE)
_ARTICLE = re.compile(r"\b(a|an|the)\b")
_NUMBER = re.compile(r"-?\d[\d,]*(?:\.\d+)?")
_ANSWER_MARKER = re.compile(r"the answer is:?", re.IGNORECASE)

ZERO_TRIPLE_TOL = 1e-12


@dataclass(frozen=True)
class ScoreTriple:
    """Precision / recall / F1 bundle, all in [0, 1]."""

    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "ScoreTriple":
        if precision + recall <= ZERO_TRIPLE_TOL:
            return cls(precision, recall, 0.0)
        return cls(precision, recall, 2 * precision * recall / (precision + recall))

    @classmethod
    def zero(cls) -> "ScoreTriple":
        return cls(0.0, 0.0, 0.0)


@dataclass
class MetricReport:
    """Scores for one evaluator output.

    Only the fields relevant to the task are populated; ``scalar`` always
    carries the task's adaptation metric.
    """

    scalar: float = 0.0
    rouge1: ScoreTriple | None = None
    rouge2: ScoreTriple | None = None
    rougeL: ScoreTriple | None = None
    em: float | None = None
    f1: float | None = None
    accuracy: float | None = None
    extra: dict = field(default_factory=dict)

    def as_flat_dict(self) -> dict:
        """Flatten populated fields into scalars for record persistence."""
        out: dict = {"scalar": self.scalar}
        for name in ("rouge1", "rouge2", "rougeL"):
            triple = getattr(self, name)
            if triple is not None:
                out[f"{name}_p"] = triple.precision
                out[f"{name}_r"] = triple.recall
                out[f"{name}_f1"] = triple.f1
        for name in ("em", "f1", "accuracy"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        out.update(self.extra)
        return out


def tokenize_words(text: str) -> list[str]:
    """Lowercase, treat punctuation as separators, split on whitespace."""
    return [t for t in _WORD_SPLIT.split(text.lower()) if t]


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: list[str], reference: list[str], n: int) -> ScoreTriple:
    """ROUGE-N with multiset-clipped n-gram counts.

    Returns an all-zero triple when either side has no n-grams.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cand_ngrams = _ngram_counts(candidate, n)
    ref_ngrams = _ngram_counts(reference, n)
    total_cand = sum(cand_ngrams.values())
    total_ref = sum(ref_ngrams.values())
    if total_cand == 0 or total_ref == 0:
        return ScoreTriple.zero()
    overlap = sum((cand_ngrams & ref_ngrams).values())
    return ScoreTriple.from_pr(overlap / total_cand, overlap / total_ref)


def _lcs_length(x: list[str], y: list[str]) -> int:
    # Rolling 1-row DP keeps memory linear in len(y).
    prev = [0] * (len(y) + 1)
    for xi in x:
        curr = [0] * (len(y) + 1)
        for j, yj in enumerate(y, start=1):
            if xi == yj:
                curr[j] = prev[j - 1] + 1
            else:
                curr[j] = max(prev[j], curr[j - 1])
        prev = curr
    return prev[len(y)]


def rouge_l(candidate: list[str], reference: list[str]) -> ScoreTriple:
    """Sentence-level ROUGE-L from the longest common subsequence."""
    if not candidate or not reference:
        return ScoreTriple.zero()
    lcs = _lcs_length(candidate, reference)
    return ScoreTriple.from_pr(lcs / len(candidate), lcs / len(reference))


def qa_normalize(text: str) -> str:
    """SQuAD answer normalization: lowercase, drop punctuation and
    articles, collapse whitespace."""
    text = text.lower()
    text = "".join(ch for ch in text if ch not in string.punctuation)
    text = _ARTICLE.sub(" ", text)
    return " ".join(text.split())


def exact_match(prediction: str, reference: str) -> int:
    """1 iff prediction and reference are identical after normalization."""
    return int(qa_normalize(prediction) == qa_normalize(reference))


def token_f1(prediction: str, reference: str) -> float:
    """Harmonic mean of precision/recall over normalized token multisets."""
    pred_tokens = qa_normalize(prediction).split()
    ref_tokens = qa_normalize(reference).split()
    if not pred_tokens or not ref_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(ref_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(ref_tokens)
    return 2 * precision * recall / (precision + recall)


def extract_numeric_answer(text: str) -> float | None:
    """Pull the final numeric answer out of a reasoning output.

    Takes the last number after the final "the answer is" marker
    (optional colon, any case, commas stripped). When the marker is
    missing, falls back to the last number anywhere in the text.
    Returns None when nothing numeric can be extracted.
    """
    marker_matches = list(_ANSWER_MARKER.finditer(text))
    if marker_matches:
        tail = text[marker_matches[-1].end() :]
        numbers = _NUMBER.findall(tail)
    else:
        numbers = _NUMBER.findall(text)
    if not numbers:
        return None
    return float(numbers[-1].replace(",", ""))


def numbers_equal(a: float, b: float, tol: float = 1e-6) -> bool:
    """Absolute-tolerance comparison that absorbs formatting drift."""
    return abs(a - b) <= tol


def parse_number(text: str) -> float | None:
    """Parse a bare number string (commas allowed); None when invalid."""
    try:
        return float(text.replace(",", "").strip())
    except (ValueError, AttributeError):
        return None
