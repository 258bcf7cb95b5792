"""Five-dimension benchmark harness with a pluggable answer judge.

Dimensions: correctness, detailing, contextual, temporal, consistency.
The default judge is rule-based and deterministic: a candidate answer is
scored by the fraction of the reference's key terms (adherence keyphrase
plus entity words) it contains, and is correct only when all key terms
match — in reference order for temporal questions. Consistency is the
agreement of the adherence keyphrases extracted from the answers to the
correctness question and its paraphrase. An external-process judge
adapter is provided for plugging in model-based scorers: it sends
``{"question", "reference", "candidate"}`` as JSON on standard input and
expects a ``{"correct", "score"}`` JSON verdict on standard output.
"""

from __future__ import annotations

import json
import math
import subprocess
from dataclasses import dataclass, field
from typing import Callable

from .data.records import AnnotationRecord
from .errors import ContractError, DataError

DIMENSIONS = ("correctness", "detailing", "contextual", "temporal", "consistency")
LABEL_KEYPHRASES = ("yes", "no", "unclear")
ENTITY_TERMS = frozenset({
    "pill", "water", "face", "bottle", "medication", "hands", "mouth",
    "person", "background", "intake",
})
KEY_TERMS = frozenset(LABEL_KEYPHRASES) | ENTITY_TERMS

Judge = Callable[[str, str, str], "JudgeVerdict"]


@dataclass
class JudgeVerdict:
    correct: bool
    score: int

    def __post_init__(self):
        if not 1 <= self.score <= 5:
            raise ContractError(f"judge score must be in [1, 5], got {self.score}")


@dataclass
class BenchmarkItem:
    item_id: str
    label: str
    qa: dict[str, tuple[str, str]]  # dimension -> (question, reference)


@dataclass
class BenchmarkResult:
    dimension_scores: dict[str, float]
    accuracy: float
    mean_score: float
    n_items: int
    ledger: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dimension_scores": dict(self.dimension_scores),
            "accuracy": self.accuracy,
            "mean_score": self.mean_score,
            "n_items": self.n_items,
            "ledger": list(self.ledger),
        }

    @staticmethod
    def from_dict(d: dict) -> "BenchmarkResult":
        return BenchmarkResult(
            dimension_scores=dict(d["dimension_scores"]),
            accuracy=float(d["accuracy"]),
            mean_score=float(d["mean_score"]),
            n_items=int(d["n_items"]),
            ledger=list(d["ledger"]),
        )


def extract_label(text: str) -> str | None:
    """First adherence keyphrase (yes/no/unclear) in the text, if any."""
    for w in text.lower().split():
        if w in LABEL_KEYPHRASES:
            return w
    return None


def _key_terms(reference: str) -> list[str]:
    seen: list[str] = []
    for w in reference.lower().split():
        if w in KEY_TERMS and w not in seen:
            seen.append(w)
    return seen


def _order_preserved(keys: list[str], candidate_words: list[str]) -> bool:
    last = -1
    for k in keys:
        if k not in candidate_words:
            return False
        pos = candidate_words.index(k)
        if pos < last:
            return False
        last = pos
    return True


def judge_rule_based(question: str, reference: str, candidate: str) -> JudgeVerdict:
    """Keyword-overlap judge: score 1 + 4*(matched key-term fraction),
    rounded half up; correct only when every key term matches. Temporal
    questions additionally require the key terms to appear in the
    candidate in the reference's order."""
    if not question.strip() or not reference.strip():
        raise ContractError("judge requires non-empty question and reference")
    keys = _key_terms(reference)
    cand_words = candidate.lower().split()
    if not keys:
        exact = candidate.strip().lower() == reference.strip().lower()
        return JudgeVerdict(correct=exact, score=5 if exact else 1)
    matched = sum(1 for k in keys if k in cand_words)
    frac = matched / len(keys)
    score = 1 + int(math.floor(4.0 * frac + 0.5))
    correct = matched == len(keys)
    q_words = question.lower().split()
    if correct and ("first" in q_words or "order" in q_words):
        correct = _order_preserved(keys, cand_words)
    return JudgeVerdict(correct=correct, score=score)


class ExternalProcessJudge:
    """Shells out to a scoring command for each verdict. The command
    reads one JSON request on stdin and writes one JSON verdict."""

    def __init__(self, command: list[str], timeout_s: float = 30.0):
        if not command:
            raise ContractError("external judge requires a non-empty command")
        self.command = list(command)
        self.timeout_s = timeout_s

    def __call__(self, question: str, reference: str, candidate: str) -> JudgeVerdict:
        request = json.dumps({"question": question, "reference": reference,
                              "candidate": candidate})
        try:
            proc = subprocess.run(self.command, input=request, text=True,
                                  capture_output=True, timeout=self.timeout_s)
        except (OSError, subprocess.TimeoutExpired) as e:
            raise DataError(f"external judge failed to run: {e}") from e
        if proc.returncode != 0:
            raise DataError(
                f"external judge exited {proc.returncode}: {proc.stderr.strip()}")
        try:
            verdict = json.loads(proc.stdout)
            return JudgeVerdict(correct=bool(verdict["correct"]),
                                score=int(verdict["score"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataError(f"external judge returned a malformed verdict: {e}") from e


def items_from_records(records: list[AnnotationRecord]) -> list[BenchmarkItem]:
    """Map each record's QA slots to benchmark dimensions in slot order."""
    items = []
    for rec in records:
        qa = {dim: (q, a) for dim, (q, a) in zip(DIMENSIONS, rec.qa_pairs)}
        items.append(BenchmarkItem(item_id=rec.video_id, label=rec.label, qa=qa))
    return items


def run_benchmark(
    answer_fn: Callable[[BenchmarkItem, str, str], str],
    items: list[BenchmarkItem],
    judge: Judge = judge_rule_based,
    dimensions: tuple[str, ...] = DIMENSIONS,
) -> BenchmarkResult:
    """Score every item on the requested dimensions.

    ``answer_fn(item, dimension, question)`` returns the candidate
    answer. Consistency is judged as agreement of the adherence
    keyphrases in the answers to the correctness question and its
    paraphrase; the other dimensions go through the judge. Accuracy is
    the percentage of correct verdicts over all (item, dimension) pairs.
    """
    if not items:
        raise ContractError("benchmark requires at least one item")
    unknown = [d for d in dimensions if d not in DIMENSIONS]
    if unknown:
        raise ContractError(f"unknown benchmark dimensions: {unknown}")
    ledger: list[dict] = []
    for item in items:
        candidates: dict[str, str] = {}
        needed = set(dimensions)
        if "consistency" in needed:
            needed.add("correctness")
        for dim in DIMENSIONS:
            if dim not in needed:
                continue
            if dim not in item.qa:
                raise DataError(
                    f"item {item.item_id}: missing QA pair for dimension {dim!r}")
            q, _ = item.qa[dim]
            candidates[dim] = answer_fn(item, dim, q)
        for dim in dimensions:
            q, ref = item.qa[dim]
            cand = candidates[dim]
            if dim == "consistency":
                a = extract_label(candidates["correctness"])
                b = extract_label(cand)
                agree = a is not None and a == b
                verdict = JudgeVerdict(correct=agree, score=5 if agree else 1)
            else:
                verdict = judge(q, ref, cand)
            ledger.append({
                "item_id": item.item_id,
                "dimension": dim,
                "question": q,
                "reference": ref,
                "candidate": cand,
                "correct": verdict.correct,
                "score": verdict.score,
            })
    return result_from_ledger(ledger, n_items=len(items))


def result_from_ledger(ledger: list[dict], n_items: int | None = None) -> BenchmarkResult:
    """Recompute the aggregate result from the per-item ledger alone."""
    if not ledger:
        raise ContractError("cannot aggregate an empty ledger")
    entries = sorted(ledger, key=lambda e: (e["item_id"], e["dimension"]))
    dims = sorted({e["dimension"] for e in entries})
    dim_scores = {
        d: sum(e["score"] for e in entries if e["dimension"] == d)
        / sum(1 for e in entries if e["dimension"] == d)
        for d in dims
    }
    accuracy = 100.0 * sum(e["correct"] for e in entries) / len(entries)
    mean_score = sum(e["score"] for e in entries) / len(entries)
    if n_items is None:
        n_items = len({e["item_id"] for e in entries})
    return BenchmarkResult(dimension_scores=dim_scores, accuracy=accuracy,
                           mean_score=mean_score, n_items=n_items, ledger=entries)
