"""End-to-end acceptance gate.

Each test covers one headline guarantee of the package and prints a single
PASS/FAIL line to the real stdout, so the gate is auditable from the test log
even under output capture. Everything runs offline against mock backends.
"""
import math
import time

import numpy as np

from toolrl import data as data_mod
from toolrl import optim, rewards, rollout, tools
from toolrl.data import QAItem
from toolrl.optim import ObjectiveInputs
from toolrl.policy import ScriptedPolicy, ToyPolicy, toy_vocab
from toolrl.rewards import LengthBudget, QuestionType
from toolrl.rollout import RolloutLimits, TokenRecord, Trajectory

VECTORS_FILE = "conformance/reward_vectors.jsonl"


def _report(capsys, name: str, ok: bool, detail: str = "") -> None:
    line = f"{'PASS' if ok else 'FAIL'} acceptance: {name}"
    if detail:
        line += f" ({detail})"
    with capsys.disabled():
        print(line, flush=True)


def test_reward_conformance(capsys):
    ok = False
    detail = ""
    try:
        started = time.monotonic()
        results = rewards.run_vectors(VECTORS_FILE)
        elapsed = time.monotonic() - started
        assert len(results) >= 60, f"only {len(results)} vectors"
        mismatches = [r for r in results if not r.ok]
        assert not mismatches, f"{len(mismatches)} vectors mismatch: {mismatches[:3]}"
        assert elapsed < 1.0, f"took {elapsed:.2f}s"
        detail = f"{len(results)} vectors bit-exact in {elapsed:.3f}s"
        ok = True
    finally:
        _report(capsys, "reward conformance", ok, detail)


def test_generation_loop_fidelity(capsys):
    ok = False
    detail = ""
    try:
        started = time.monotonic()
        limits = RolloutLimits(max_turns=4, max_response_length=128)
        budget = LengthBudget(l_max=128, l_cache=16)
        item = QAItem(id="fid-1", question="What is 6*7?", answer="42",
                      type=QuestionType.MATH_EXACT, dataset="fidelity")
        gateway = tools.Gateway(
            search_client=tools.SearchClient(
                tools.MockSearchBackend({"q": [{"title": "T", "snippet": "doc text"}]})
            ),
            code_backend=tools.MockCodeBackend(
                {"6*7": tools.ExecutionResult(stdout="42")}
            ),
        )

        # a tool call on every turn: the budget caps served responses at
        # max_turns even though the loop runs max_turns + 1 times
        greedy = ScriptedPolicy(["<search>", "q", "</search>"], cycle=True)
        traj = rollout.run_rollout(item, greedy, gateway, limits, seed=0)
        assert traj.terminal == "turn_budget_exhausted"
        assert len(traj.tool_calls) == limits.max_turns
        assert traj.text.count("<response>") == limits.max_turns
        # the model opened one more tool block than was served
        assert traj.model_text.count("</search>") == limits.max_turns + 1

        # tool output injection is byte-exact plain wrapping
        coder = ScriptedPolicy(
            ["<code>", "6*7", "</code>", "<answer>", "42", "</answer>"]
        )
        traj = rollout.run_rollout(item, coder, gateway, limits, seed=0)
        tool_text = "".join(r.text for r in traj.records if r.origin == "tool")
        assert tool_text == "<response>42</response>"

        # generation stops at the answer close, nothing after
        assert traj.terminal == "answered"
        assert traj.text.endswith("</answer>")

        # the origin mask reconstructs the model transcript byte for byte
        mask = traj.mask
        rebuilt = "".join(
            r.text for bit, r in zip(mask, traj.records) if bit == 1.0
        )
        assert rebuilt == traj.model_text == "".join(
            ["<code>", "6*7", "</code>", "<answer>", "42", "</answer>"]
        )
        assert "".join(r.text for r in traj.records) == traj.text
        assert rewards.score(traj, item, budget).total == 1.0

        elapsed = time.monotonic() - started
        assert elapsed < 5.0, f"took {elapsed:.2f}s"
        detail = f"{elapsed:.3f}s"
        ok = True
    finally:
        _report(capsys, "generation loop fidelity", ok, detail)


def _random_trajectories(rng, policy, n_traj=2, length=8):
    """Trajectories with mixed origins and off-policy behavior logprobs."""
    batch = []
    for _ in range(n_traj):
        records = []
        for _ in range(length):
            if rng.random() < 0.25:
                records.append(TokenRecord(-1, "<response>", "tool", 0.0))
            else:
                token = int(rng.integers(policy.vocab_size))
                records.append(
                    TokenRecord(token, policy.vocab[token], "model",
                                float(rng.normal(-3.0, 0.7)))
                )
        if not any(r.origin == "model" for r in records):
            records.append(TokenRecord(0, policy.vocab[0], "model", -3.0))
        traj = Trajectory(prompt="p", records=records, terminal="answered")
        batch.append((traj, float(rng.choice([-1.5, -0.5, 0.5, 1.5]))))
    return batch


def _brute_force_objective(inputs: ObjectiveInputs) -> float:
    """Scalar re-evaluation of the masked clipped surrogate, no numpy."""
    total, mass = 0.0, 0.0
    for lp_new, lp_old, mask, advantage in zip(
        inputs.logp_new, inputs.logp_old, inputs.masks, inputs.advantages
    ):
        for t in range(len(lp_new)):
            if not mask[t]:
                continue
            ratio = math.exp(float(lp_new[t]) - float(lp_old[t]))
            clipped = min(max(ratio, 1.0 - inputs.eps_low), 1.0 + inputs.eps_high)
            total += min(ratio * advantage, clipped * advantage)
            mass += 1.0
    return total / mass


def test_optimization_math(capsys):
    ok = False
    detail = ""
    try:
        started = time.monotonic()
        rng = np.random.default_rng(2024)

        # exact gradient vs central differences on 100 random instances
        worst = 0.0
        for i in range(100):
            policy = ToyPolicy(n_features=16, seed=int(rng.integers(1 << 30)))
            policy.theta += rng.normal(scale=0.5, size=policy.theta.shape)
            batch = _random_trajectories(rng, policy)
            worst = max(worst, optim.grad_check(policy, batch, h=1e-5))
        assert worst < 1e-4, f"grad check worst rel err {worst:.2e}"

        # tool-token logprobs are inert: perturbing them leaves J bit-identical
        for _ in range(50):
            n = int(rng.integers(3, 12))
            mask = (rng.random(n) > 0.4).astype(float)
            if mask.sum() == 0:
                mask[0] = 1.0
            lp_new = rng.normal(size=n)
            lp_old = rng.normal(size=n)
            base = ObjectiveInputs([lp_new], [lp_old], [mask], [float(rng.normal())])
            noise = rng.normal(scale=100.0, size=n) * (1.0 - mask)
            bumped = ObjectiveInputs(
                [lp_new + noise], [lp_old - noise], [mask], base.advantages
            )
            assert optim.token_objective(base)[0] == optim.token_objective(bumped)[0]

        # advantages are invariant to reward shift and positive rescaling
        checked = 0
        while checked < 1000:
            group = rng.normal(size=int(rng.integers(2, 17)))
            if rollout.population_std(list(group)) == 0:
                continue
            shift = float(rng.uniform(-10, 10))
            scale = float(rng.uniform(0.1, 10))
            base = optim.group_advantages(list(group))
            moved = optim.group_advantages(list(group * scale + shift))
            assert max(abs(a - b) for a, b in zip(base, moved)) < 1e-9
            checked += 1

        # vectorized objective agrees with a scalar re-evaluation
        for _ in range(200):
            n = int(rng.integers(1, 10))
            inputs = ObjectiveInputs(
                [rng.normal(size=n)], [rng.normal(size=n)],
                [np.ones(n)], [float(rng.normal())],
            )
            value, _ = optim.token_objective(inputs)
            assert abs(value - _brute_force_objective(inputs)) <= 1e-12

        # with a symmetric clip and equal-length full masks the token-level
        # and sample-level objectives coincide
        for _ in range(100):
            n, k = int(rng.integers(2, 8)), int(rng.integers(2, 6))
            inputs = ObjectiveInputs(
                [rng.normal(size=n) for _ in range(k)],
                [rng.normal(size=n) for _ in range(k)],
                [np.ones(n) for _ in range(k)],
                [float(rng.normal()) for _ in range(k)],
                eps_low=0.2, eps_high=0.2,
            )
            token_value, _ = optim.token_objective(inputs)
            assert abs(token_value - optim.grpo_objective(inputs)) <= 1e-12

        elapsed = time.monotonic() - started
        assert elapsed < 30.0, f"took {elapsed:.2f}s"
        detail = f"grad worst {worst:.2e}, {elapsed:.1f}s"
        ok = True
    finally:
        _report(capsys, "optimization math", ok, detail)


def test_dynamic_sampling_filter(capsys):
    ok = False
    detail = ""
    try:
        items = []
        for i in range(200):
            flavor = "settled" if i % 2 == 0 else "varied"
            items.append(QAItem(
                id=f"{flavor}-{i}", question=f"{flavor} question {i}", answer="42",
                type=QuestionType.MATH_EXACT, dataset="sampling",
            ))

        def variants_for(prompt):
            if prompt.startswith("settled"):
                return [["<answer>", "42", "</answer>"]]
            return [
                ["<answer>", "42", "</answer>"],
                ["<answer>", "41", "</answer>"],
            ]

        policy = ScriptedPolicy(variants_for=variants_for)
        limits = RolloutLimits(max_turns=1, max_response_length=16, group_size=8)
        budget = LengthBudget(l_max=16, l_cache=2)
        gateway = tools.mock_gateway()
        result = rollout.collect_batch(
            items, policy, gateway, limits, budget, seed=7, batch_size=200,
        )
        for group in result.groups:
            assert rollout.population_std(group.rewards) > 0
        # half the prompts are forced to a single outcome; the filter should
        # report discards within 10% of that rate
        assert 90 <= result.discarded <= 110, f"discarded {result.discarded}"
        assert result.underfilled
        detail = f"{result.discarded}/200 groups discarded"
        ok = True
    finally:
        _report(capsys, "dynamic sampling filter", ok, detail)


def test_toy_training_learns(capsys):
    ok = False
    detail = ""
    try:
        started = time.monotonic()
        config = optim.TrainConfig()
        assert config.task == "calculator"
        assert config.group_size == 8 and config.batch_size == 16
        assert len(toy_vocab()) <= 64
        history, _ = optim.train_toy(config)
        elapsed = time.monotonic() - started
        reward = [m.reward for m in history]
        entropy = [m.entropy for m in history]

        def moving_average(series, index, window=10):
            return float(np.mean(series[max(0, index - window + 1): index + 1]))

        early = moving_average(reward, 9)
        late = moving_average(reward, 99)
        assert late > early, f"reward MA {early:.3f} -> {late:.3f}"
        assert entropy[99] < entropy[0], f"entropy {entropy[0]:.3f} -> {entropy[99]:.3f}"
        assert elapsed < 600.0, f"took {elapsed:.1f}s"
        detail = (
            f"reward MA {early:.2f}->{late:.2f}, "
            f"entropy {entropy[0]:.2f}->{entropy[99]:.4f}, {elapsed:.0f}s"
        )
        ok = True
    finally:
        _report(capsys, "toy training learns", ok, detail)


def test_tool_frequency_reporting(capsys):
    ok = False
    detail = ""
    try:
        items = []
        for i in range(4):
            items.append(QAItem(
                id=f"lookup-{i}", question=f"Who holds record {i}?", answer="abc",
                type=QuestionType.FACT, dataset="fact-lookup",
            ))
            items.append(QAItem(
                id=f"calc-{i}", question=f"Compute entry {i}.", answer="2",
                type=QuestionType.MATH_ABS_TOL, dataset="calculator",
            ))

        def variants_for(prompt):
            if prompt.startswith("Who"):
                return [["<search>", "x", "</search>", "<answer>", "abc", "</answer>"]]
            return [["<code>", "1+1", "</code>", "<answer>", "2", "</answer>"]]

        policy = ScriptedPolicy(variants_for=variants_for)
        limits = RolloutLimits(max_turns=2, max_response_length=32)
        budget = LengthBudget(l_max=32, l_cache=4)
        report = data_mod.evaluate(policy, tools.mock_gateway(), items, limits, budget, seed=0)

        fact = report.per_dataset["fact-lookup"]
        calc = report.per_dataset["calculator"]
        assert (fact.mean_search_calls, fact.mean_code_calls) == (1.0, 0.0)
        assert (calc.mean_search_calls, calc.mean_code_calls) == (0.0, 1.0)
        detail = "search 1.0/0.0, code 0.0/1.0 per dataset"
        ok = True
    finally:
        _report(capsys, "tool frequency reporting", ok, detail)


def test_cache_clustering(capsys):
    ok = False
    detail = ""
    try:
        rng = np.random.default_rng(11)
        alphabet = list("abcdefghijklmnopqrstuvwxyz0123456789")
        bases = []
        while len(bases) < 40:
            candidate = "".join(rng.choice(alphabet, size=60))
            if all(tools.similarity(candidate, b) <= 0.85 for b in bases):
                bases.append(candidate)

        backend = tools.MockSearchBackend()
        client = tools.SearchClient(backend)

        # the fuzzy tier must stay cold whenever an exact entry exists
        original_fuzzy = client.cache.best_fuzzy

        def guarded_fuzzy(normalized, threshold=tools.FUZZY_THRESHOLD):
            assert client.cache.get(normalized) is None, "fuzzy ran on exact hit"
            return original_fuzzy(normalized, threshold)

        client.cache.best_fuzzy = guarded_fuzzy

        for i in range(1000):
            base = bases[i % len(bases)]
            variant = i % 5
            if variant == 0:
                query = base
            elif variant == 1:
                query = base.upper()            # exact after normalization
            elif variant == 2:
                query = f"  {base[:30]} {base[30:]} "  # exact after normalization
            elif variant == 3:
                query = base + "x"              # fuzzy, ratio ~0.99
            else:
                query = base[:-1]               # fuzzy, ratio ~0.99
            client.search(query)

        assert backend.calls == len(bases), f"{backend.calls} backend calls"
        detail = f"1000 queries, {backend.calls} backend calls, {len(bases)} clusters"
        ok = True
    finally:
        _report(capsys, "cache clustering", ok, detail)
