import json
import math
import re

import pytest

from toolrl import data
from toolrl.data import QAItem, format_answer, gen_calculator
from toolrl.rewards import QuestionType

NUMBER = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")


def reverify_from_question(question: str) -> float:
    """Recompute a calculator answer from the question text alone."""
    nums = [float(m) for m in NUMBER.findall(question)]
    if "divided by" in question and "times" in question:
        a, b, c, d = nums
        return a / b + c * d
    if "3D Euclidean distance" in question:
        nums = [float(m) for m in NUMBER.findall(question.replace("3D", ""))]
        return math.dist(nums[:3], nums[3:])
    if "Euclidean distance" in question:
        return math.dist(nums[:2], nums[2:])
    if "Manhattan distance" in question:
        return abs(nums[0] - nums[2]) + abs(nums[1] - nums[3])
    if "sum of" in question:
        return sum(nums)
    if "square of" in question:
        return nums[0] ** 2
    if "sine of" in question:
        return math.sin(nums[0])
    if "*" in question:
        a, b, c = nums
        return a * b - c
    if "/" in question:
        a, b, c = nums
        return a / b + c
    if "plus" in question:
        return nums[0] + nums[1]
    raise AssertionError(f"unrecognized question: {question!r}")


class TestFormatAnswer:
    def test_worked_examples(self):
        assert format_answer(math.dist((-59.1, -84), (521, 8))) == "587.349989"
        assert format_answer(60.61620772833686 + 3332093.3462560773 + 18071071) == "21403224.962464"
        # half-away-from-zero at the 6th place, consistently applied
        assert format_answer(math.dist((-86, -63, -43), (-77, 49, -24))) == "113.956132"

    def test_fixed_point_never_scientific(self):
        assert format_answer(1.5e-7) == "0.000000"
        assert format_answer(0.0) == "0.000000"
        assert format_answer(-54824881.466547) == "-54824881.466547"

    def test_ties_round_away_from_zero(self):
        assert format_answer(0.0000005) == "0.000001"
        assert format_answer(-0.0000005) == "-0.000001"
        assert format_answer(2.5, places=0) == "3"

    def test_places(self):
        assert format_answer(1.23456789, places=2) == "1.23"


class TestQAItem:
    def test_empty_answer_rejected(self):
        with pytest.raises(ValueError):
            QAItem(id="x", question="q", answer="", type=QuestionType.FACT, dataset="d")

    def test_frozen(self):
        item = QAItem(id="x", question="q", answer="a", type=QuestionType.FACT, dataset="d")
        with pytest.raises(AttributeError):
            item.answer = "b"


class TestGenCalculator:
    def test_deterministic(self):
        assert gen_calculator(20, seed=1) == gen_calculator(20, seed=1)
        assert gen_calculator(20, seed=1) != gen_calculator(20, seed=2)

    def test_ids_unique_and_typed(self):
        items = gen_calculator(50, seed=0)
        assert len({item.id for item in items}) == 50
        for item in items:
            assert item.type is QuestionType.MATH_ABS_TOL
            assert item.dataset == "calculator"
            assert re.fullmatch(r"-?\d+\.\d{6}", item.answer)

    def test_answers_reverify_from_question_text(self):
        for item in gen_calculator(300, seed=42):
            expected = reverify_from_question(item.question)
            assert abs(float(item.answer) - expected) <= 1e-6, item.question

    def test_all_templates_reachable(self):
        questions = " | ".join(i.question for i in gen_calculator(200, seed=7))
        for marker in ("divided by", "* ", "/ ", "plus", "sum of", "3D Euclidean",
                       "Manhattan", "square of", "sine of"):
            assert marker in questions

    def test_rejects_nonpositive_n(self):
        with pytest.raises(ValueError):
            gen_calculator(0, seed=0)


class TestDatasetIo:
    def test_roundtrip(self, tmp_path):
        items = gen_calculator(10, seed=3)
        path = tmp_path / "items.jsonl"
        assert data.save_dataset(items, path) == 10
        assert data.load_dataset(path) == items

    def test_blank_lines_skipped(self, tmp_path):
        items = gen_calculator(2, seed=0)
        path = tmp_path / "items.jsonl"
        data.save_dataset(items, path)
        path.write_text(path.read_text().replace("\n", "\n\n"))
        assert data.load_dataset(path) == items

    def test_error_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = {"id": "a", "question": "q", "answer": "1", "type": "fact", "dataset": "d"}
        path.write_text(json.dumps(good) + "\nnot json\n")
        with pytest.raises(ValueError, match=":2:"):
            data.load_dataset(path)

    def test_missing_field_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({"id": "a", "question": "q"}) + "\n")
        with pytest.raises(ValueError, match=":1:"):
            data.load_dataset(path)

    def test_unknown_type_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        bad = {"id": "a", "question": "q", "answer": "1", "type": "riddle", "dataset": "d"}
        path.write_text(json.dumps(bad) + "\n")
        with pytest.raises(ValueError, match="riddle"):
            data.load_dataset(path)

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        item = {"id": "a", "question": "q", "answer": "1", "type": "fact", "dataset": "d"}
        path.write_text(json.dumps(item) + "\n" + json.dumps(item) + "\n")
        with pytest.raises(ValueError, match="duplicate"):
            data.load_dataset(path)


class TestSplit:
    def test_partition(self):
        items = gen_calculator(100, seed=0)
        train, test = data.split(items, test_fraction=0.2, seed=1)
        assert len(test) == 20
        assert len(train) == 80
        assert {i.id for i in train} | {i.id for i in test} == {i.id for i in items}
        assert {i.id for i in train} & {i.id for i in test} == set()

    def test_deterministic_and_seed_sensitive(self):
        items = gen_calculator(30, seed=0)
        a = data.split(items, 0.3, seed=5)
        b = data.split(items, 0.3, seed=5)
        c = data.split(items, 0.3, seed=6)
        assert a == b
        assert a != c

    def test_fraction_validated(self):
        items = gen_calculator(4, seed=0)
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                data.split(items, bad, seed=0)


class TestEvalReport:
    def make_report(self):
        stats = data.DatasetStats(items=4, passed=3, search_calls=2, code_calls=6, model_tokens=80)
        return data.EvalReport(per_dataset={"calculator": stats})

    def test_json_shape(self):
        payload = json.loads(self.make_report().to_json())
        assert payload["calculator"]["pass_at_1"] == 0.75
        assert payload["calculator"]["mean_code_calls"] == 1.5

    def test_table_contains_rows(self):
        table = self.make_report().to_table()
        lines = table.splitlines()
        assert len(lines) == 2
        assert "calculator" in lines[1]
        assert "0.750" in lines[1]

    def test_empty_stats_no_division_error(self):
        stats = data.DatasetStats()
        assert stats.pass_at_1 == 0.0
        assert stats.mean_code_calls == 0.0


class TestItemPasses:
    def test_fact_threshold(self):
        from toolrl.rewards import RewardBreakdown

        good = RewardBreakdown(r_acc=0.7, r_length=0.0, total=0.7,
                               format_ok=True, extracted_answer="x")
        bad = RewardBreakdown(r_acc=0.5, r_length=0.0, total=0.5,
                              format_ok=True, extracted_answer="x")
        assert data.item_passes(good, QuestionType.FACT)
        assert not data.item_passes(bad, QuestionType.FACT)
        assert not data.item_passes(good, QuestionType.MATH_EXACT)

    def test_malformed_never_passes(self):
        from toolrl.rewards import RewardBreakdown

        broken = RewardBreakdown(r_acc=-1.0, r_length=0.0, total=-1.0,
                                 format_ok=False, extracted_answer=None)
        assert not data.item_passes(broken, QuestionType.FACT)
