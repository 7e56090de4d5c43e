"""Rule-based rewarding: format gate, type-specific accuracy, length penalty.

The total reward for a trajectory is ``r_acc + r_length`` where ``r_acc`` is
-1 for malformed output and otherwise the type-specific accuracy score in
[0, 1], and ``r_length`` in [-1, 0] is a soft ramp over the final stretch of
the model-token budget. All functions are pure.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Optional

from . import tags


class QuestionType(str, enum.Enum):
    FACT = "fact"
    MATH_EXACT = "math_exact"
    MATH_ABS_TOL = "math_abs_tol"
    MATH_REL_TOL = "math_rel_tol"


#: Source-dataset tag -> question type.
DATASET_TYPES = {
    "nq": QuestionType.FACT,
    "gsm8k": QuestionType.MATH_EXACT,
    "dapo-math": QuestionType.MATH_EXACT,
    "deepmath": QuestionType.MATH_EXACT,
    "calculator": QuestionType.MATH_ABS_TOL,
    "complex": QuestionType.MATH_REL_TOL,
}


@dataclass(frozen=True)
class LengthBudget:
    """Model-token budget: penalty ramps over the last ``l_cache`` tokens."""

    l_max: int
    l_cache: int

    def __post_init__(self) -> None:
        if not 0 < self.l_cache < self.l_max:
            raise ValueError("require 0 < l_cache < l_max")

    @classmethod
    def with_default_cache(cls, l_max: int) -> "LengthBudget":
        # l_cache = l_max/8 is a non-normative default; configure to taste.
        return cls(l_max=l_max, l_cache=max(1, l_max // 8))


@dataclass(frozen=True)
class RewardBreakdown:
    r_acc: float
    r_length: float
    total: float
    format_ok: bool
    extracted_answer: Optional[str]


def levenshtein(a: str, b: str) -> int:
    """Minimum number of insert/delete/substitute edits turning a into b."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalize_answer(text: str) -> str:
    """Lowercase, trim and collapse internal whitespace."""
    return " ".join(text.lower().split())


def _parse_number(text: str) -> Optional[float]:
    try:
        value = float(text.strip())
    except (TypeError, ValueError):
        return None
    return value if math.isfinite(value) else None


def f_fact(o: str, gt: str) -> float:
    """Normalized edit-distance score: 1 - lev/maxlen, cut to 0 past 0.5."""
    o_norm = normalize_answer(o)
    gt_norm = normalize_answer(gt)
    longest = max(len(o_norm), len(gt_norm))
    if longest == 0:
        return 1.0
    ratio = levenshtein(o_norm, gt_norm) / longest
    return 0.0 if ratio > 0.5 else 1.0 - ratio


def f_math_exact(o: str, gt: str) -> float:
    """1 iff the answers are equal after numeric canonicalization, else 0."""
    o_num = _parse_number(o)
    gt_num = _parse_number(gt)
    if o_num is not None and gt_num is not None:
        return 1.0 if o_num == gt_num else 0.0
    return 1.0 if o.strip() == gt.strip() else 0.0


def f_math_abs_tol(o: str, gt: str, tol: float = 0.001) -> float:
    """1 iff o parses as a number within absolute tolerance of gt."""
    gt_num = _parse_number(gt)
    if gt_num is None:
        raise ValueError(f"ground truth is not numeric: {gt!r}")
    o_num = _parse_number(o)
    if o_num is None:
        return 0.0
    return 1.0 if abs(o_num - gt_num) <= tol else 0.0


def f_math_rel_tol(o: str, gt: str, tol: float = 0.005) -> float:
    """1 iff |o - gt| <= tol*|gt|; a zero ground truth requires o == 0."""
    gt_num = _parse_number(gt)
    if gt_num is None:
        raise ValueError(f"ground truth is not numeric: {gt!r}")
    o_num = _parse_number(o)
    if o_num is None:
        return 0.0
    return 1.0 if abs(o_num - gt_num) <= tol * abs(gt_num) else 0.0


#: Exhaustive scorer dispatch; intentionally no default branch.
SCORERS = {
    QuestionType.FACT: f_fact,
    QuestionType.MATH_EXACT: f_math_exact,
    QuestionType.MATH_ABS_TOL: f_math_abs_tol,
    QuestionType.MATH_REL_TOL: f_math_rel_tol,
}


def length_penalty(l_o: int, budget: LengthBudget) -> float:
    """Soft penalty in [-1, 0] over model-generated token count ``l_o``."""
    if l_o < 0:
        raise ValueError("l_o must be non-negative")
    free = budget.l_max - budget.l_cache
    if l_o <= free:
        return 0.0
    if l_o >= budget.l_max:
        return -1.0
    return (free - l_o) / budget.l_cache


def score_answer(question_type: QuestionType, answer: str, gt: str) -> float:
    return SCORERS[question_type](answer, gt)


def score(trajectory, item, budget: LengthBudget) -> RewardBreakdown:
    """Score a terminal trajectory against its QA item.

    The format gate overrides accuracy: malformed output scores -1 regardless
    of any answer text. The length penalty applies in both cases, so the total
    ranges over [-2, 1].
    """
    text = trajectory.text
    format_ok = tags.check_format(text)
    extracted = tags.extract_last(text, "answer")
    if not format_ok:
        r_acc = -1.0
    else:
        r_acc = score_answer(item.type, extracted if extracted is not None else "", item.answer)
    r_length = length_penalty(trajectory.model_token_count, budget)
    return RewardBreakdown(
        r_acc=r_acc,
        r_length=r_length,
        total=r_acc + r_length,
        format_ok=format_ok,
        extracted_answer=extracted,
    )


@dataclass(frozen=True)
class VectorResult:
    index: int
    vector: dict
    expected: float
    actual: float

    @property
    def ok(self) -> bool:
        return self.actual == self.expected  # bit-exact by design


def run_vectors(path) -> list[VectorResult]:
    """Replay a JSONL conformance-vector file against the reward rules.

    Scorer vectors are ``{type, o, gt, expected_score}`` with type one of the
    four question types; ``type: "format"`` checks the format gate on a full
    trajectory in ``o`` (expected 1/0); ``type: "length"`` carries
    ``l_o, l_max, l_cache``; ``type: "total"`` combines an accuracy vector
    with length fields and expects r_acc + r_length.
    """
    results: list[VectorResult] = []
    with open(path, encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            vec = json.loads(line)
            kind = vec["type"]
            expected = float(vec["expected_score"])
            if kind == "format":
                actual = 1.0 if tags.check_format(vec["o"]) else 0.0
            elif kind == "length":
                actual = length_penalty(
                    vec["l_o"], LengthBudget(vec["l_max"], vec["l_cache"])
                )
            elif kind == "total":
                budget = LengthBudget(vec["l_max"], vec["l_cache"])
                if vec.get("format_ok", True):
                    r_acc = score_answer(QuestionType(vec["qtype"]), vec["o"], vec["gt"])
                else:
                    r_acc = -1.0
                actual = r_acc + length_penalty(vec["l_o"], budget)
            else:
                actual = score_answer(QuestionType(kind), vec["o"], vec["gt"])
            results.append(VectorResult(index, vec, expected, actual))
    return results
