"""Dataset plumbing: synthetic calculator generation, JSONL ingestion,
train/test splitting, and evaluation with tool-usage statistics."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Iterable, Optional

import numpy as np

from . import rewards
from .rewards import QuestionType

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QAItem:
    id: str
    question: str
    answer: str
    type: QuestionType
    dataset: str

    def __post_init__(self) -> None:
        if not self.answer:
            raise ValueError(f"item {self.id}: answer must be non-empty")


def format_answer(value: float, places: int = 6) -> str:
    """Fixed-point rendering with half-away-from-zero rounding."""
    quantum = Decimal(1).scaleb(-places)
    return str(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def _euclidean(points: list[tuple[float, ...]]) -> float:
    a, b = points
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def _num(rng: np.random.Generator) -> float:
    """A number in the style of the calculator templates: large, mixed sign,
    integer or float."""
    magnitude = 10.0 ** rng.uniform(1, 8)
    value = magnitude * rng.choice([-1.0, 1.0])
    if rng.random() < 0.5:
        return float(int(value))
    return float(value * rng.uniform(0.1, 1.0))


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(x)


def _tpl_chain(rng: np.random.Generator) -> tuple[str, float]:
    a, b, c, d = (_num(rng) for _ in range(4))
    b = b or 7.0
    question = f"What is {_fmt_num(a)} divided by {_fmt_num(b)} plus {_fmt_num(c)} times {_fmt_num(d)}?"
    return question, a / b + c * d


def _tpl_mul_sub(rng: np.random.Generator) -> tuple[str, float]:
    a, b, c = (_num(rng) for _ in range(3))
    question = f"What is {_fmt_num(a)} * {_fmt_num(b)} - {_fmt_num(c)}?"
    return question, a * b - c


def _tpl_div_add(rng: np.random.Generator) -> tuple[str, float]:
    a, b, c = (_num(rng) for _ in range(3))
    b = b or 3.0
    question = f"What is {_fmt_num(a)} / {_fmt_num(b)} + {_fmt_num(c)}?"
    return question, a / b + c


def _tpl_plus(rng: np.random.Generator) -> tuple[str, float]:
    a, b = _num(rng), _num(rng)
    return f"How much is {_fmt_num(a)} plus {_fmt_num(b)}?", a + b


def _tpl_sum(rng: np.random.Generator) -> tuple[str, float]:
    k = int(rng.integers(3, 6))
    values = [_num(rng) for _ in range(k)]
    rendered = ", ".join(_fmt_num(v) for v in values[:-1]) + f" and {_fmt_num(values[-1])}"
    return f"What's the sum of {rendered}?", sum(values)


def _tpl_euclid2(rng: np.random.Generator) -> tuple[str, float]:
    p = (_num(rng), _num(rng))
    q = (_num(rng), _num(rng))
    question = (
        f"What is the Euclidean distance between points ({_fmt_num(p[0])}, {_fmt_num(p[1])}) "
        f"and ({_fmt_num(q[0])}, {_fmt_num(q[1])})?"
    )
    return question, _euclidean([p, q])


def _tpl_euclid3(rng: np.random.Generator) -> tuple[str, float]:
    p = tuple(_num(rng) for _ in range(3))
    q = tuple(_num(rng) for _ in range(3))
    question = (
        f"What is the 3D Euclidean distance between ({_fmt_num(p[0])}, {_fmt_num(p[1])}, {_fmt_num(p[2])}) "
        f"and ({_fmt_num(q[0])}, {_fmt_num(q[1])}, {_fmt_num(q[2])})?"
    )
    return question, _euclidean([p, q])


def _tpl_manhattan(rng: np.random.Generator) -> tuple[str, float]:
    p = (_num(rng), _num(rng))
    q = (_num(rng), _num(rng))
    question = (
        f"What is the Manhattan distance between points ({_fmt_num(p[0])}, {_fmt_num(p[1])}) "
        f"and ({_fmt_num(q[0])}, {_fmt_num(q[1])})?"
    )
    return question, abs(p[0] - q[0]) + abs(p[1] - q[1])


def _tpl_square(rng: np.random.Generator) -> tuple[str, float]:
    x = _num(rng) * rng.uniform(0.001, 0.01)  # keep the square printable
    return f"What is the square of {_fmt_num(x)}?", x * x


def _tpl_sine(rng: np.random.Generator) -> tuple[str, float]:
    x = abs(_num(rng)) * 10
    return f"What is the sine of {repr(x)} radians?", math.sin(x)


CALCULATOR_TEMPLATES: list[Callable[[np.random.Generator], tuple[str, float]]] = [
    _tpl_chain,
    _tpl_mul_sub,
    _tpl_div_add,
    _tpl_plus,
    _tpl_sum,
    _tpl_euclid2,
    _tpl_euclid3,
    _tpl_manhattan,
    _tpl_square,
    _tpl_sine,
]


def gen_calculator(n: int, seed: int) -> list[QAItem]:
    """Generate computation-heavy calculator questions from fixed templates."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        template = CALCULATOR_TEMPLATES[int(rng.integers(len(CALCULATOR_TEMPLATES)))]
        question, value = template(rng)
        items.append(
            QAItem(
                id=f"calc-{i:06d}",
                question=question,
                answer=format_answer(value),
                type=QuestionType.MATH_ABS_TOL,
                dataset="calculator",
            )
        )
    return items


def load_dataset(path) -> list[QAItem]:
    """Read QA items from JSONL; schema errors name the offending line."""
    items: list[QAItem] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            try:
                item = QAItem(
                    id=str(obj["id"]),
                    question=str(obj["question"]),
                    answer=str(obj["answer"]),
                    type=QuestionType(obj["type"]),
                    dataset=str(obj["dataset"]),
                )
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad item ({exc})") from exc
            if item.id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate id {item.id!r}")
            seen.add(item.id)
            items.append(item)
    return items


def save_dataset(items: Iterable[QAItem], path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(
                json.dumps(
                    {
                        "id": item.id,
                        "question": item.question,
                        "answer": item.answer,
                        "type": item.type.value,
                        "dataset": item.dataset,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
            count += 1
    return count


def split(items: list[QAItem], test_fraction: float, seed: int) -> tuple[list[QAItem], list[QAItem]]:
    """Deterministic shuffle-and-cut into disjoint (train, test) lists."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(items))
    n_test = int(round(len(items) * test_fraction))
    test = [items[i] for i in order[:n_test]]
    train = [items[i] for i in order[n_test:]]
    return train, test


@dataclass
class DatasetStats:
    items: int = 0
    passed: int = 0
    search_calls: int = 0
    code_calls: int = 0
    model_tokens: int = 0

    @property
    def pass_at_1(self) -> float:
        return self.passed / self.items if self.items else 0.0

    @property
    def mean_search_calls(self) -> float:
        return self.search_calls / self.items if self.items else 0.0

    @property
    def mean_code_calls(self) -> float:
        return self.code_calls / self.items if self.items else 0.0

    @property
    def mean_model_tokens(self) -> float:
        return self.model_tokens / self.items if self.items else 0.0


@dataclass
class EvalReport:
    per_dataset: dict[str, DatasetStats] = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            name: {
                "items": stats.items,
                "pass_at_1": stats.pass_at_1,
                "mean_search_calls": stats.mean_search_calls,
                "mean_code_calls": stats.mean_code_calls,
                "mean_model_tokens": stats.mean_model_tokens,
            }
            for name, stats in sorted(self.per_dataset.items())
        }
        return json.dumps(payload, indent=2)

    def to_table(self) -> str:
        header = ["dataset", "items", "pass@1", "search/rollout", "code/rollout", "tokens"]
        rows = [header]
        for name, stats in sorted(self.per_dataset.items()):
            rows.append(
                [
                    name,
                    str(stats.items),
                    f"{stats.pass_at_1:.3f}",
                    f"{stats.mean_search_calls:.2f}",
                    f"{stats.mean_code_calls:.2f}",
                    f"{stats.mean_model_tokens:.1f}",
                ]
            )
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        return "\n".join(
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows
        )


def item_passes(breakdown: rewards.RewardBreakdown, question_type: QuestionType) -> bool:
    """Pass@1 rule: exact score 1 for math types, score > 0.5 for fact."""
    if not breakdown.format_ok:
        return False
    if question_type is QuestionType.FACT:
        return breakdown.r_acc > 0.5
    return breakdown.r_acc >= 1.0


def evaluate(policy, tools, items, limits, budget, seed: int) -> EvalReport:
    """One rollout per item (pass@1) with per-dataset tool-usage aggregation."""
    from . import rollout as rollout_mod

    report = EvalReport()
    for index, item in enumerate(items):
        stats = report.per_dataset.setdefault(item.dataset, DatasetStats())
        stats.items += 1
        try:
            traj = rollout_mod.run_rollout(
                item, policy, tools, limits, rollout_mod.derive_seed(seed, item.id, index)
            )
        except Exception as exc:  # noqa: BLE001 - per-item failure counts incorrect
            log.warning("rollout failed for item %s: %s", item.id, exc)
            continue
        breakdown = rewards.score(traj, item, budget)
        if item_passes(breakdown, item.type):
            stats.passed += 1
        stats.search_calls += sum(1 for c in traj.tool_calls if c.tool == "search")
        stats.code_calls += sum(1 for c in traj.tool_calls if c.tool == "code")
        stats.model_tokens += traj.model_token_count
    return report
