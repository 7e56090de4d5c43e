"""Optimization math: group-normalized advantages, masked clipped surrogate
objectives, exact gradients for the toy table policy, and the training loop.

Two objectives are provided. ``token_objective`` normalizes the clipped
per-token terms over all masked tokens in the batch and supports asymmetric
clip bounds; ``grpo_objective`` is the classic sample-level variant with a
symmetric clip and an optional KL penalty against a reference policy, kept as
a cross-check.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, asdict
from itertools import cycle, islice
from typing import Optional, Sequence

import numpy as np

from . import data as data_mod
from . import rewards, rollout as rollout_mod, tools as tools_mod
from .policy import ToyPolicy
from .rollout import RolloutGroup, Trajectory, derive_seed

log = logging.getLogger(__name__)

DEFAULT_EPS_LOW = 0.2
DEFAULT_EPS_HIGH = 0.28


def is_valid_group(rewards_list: Sequence[float]) -> bool:
    """A group supports advantage computation iff its rewards have spread."""
    if len(rewards_list) < 2:
        raise ValueError("group must contain at least 2 rewards")
    return rollout_mod.population_std(rewards_list) > 0


def group_advantages(rewards_list: Sequence[float]) -> list[float]:
    """Z-score normalization within the group (population std)."""
    values = np.asarray(rewards_list, dtype=float)
    std = values.std()
    if std == 0:
        raise ValueError("degenerate group: zero reward std (filter first)")
    return list((values - values.mean()) / std)


@dataclass
class ObjectiveInputs:
    """Per-trajectory token arrays plus scalar advantages and clip bounds."""

    logp_new: list[np.ndarray]
    logp_old: list[np.ndarray]
    masks: list[np.ndarray]
    advantages: list[float]
    eps_low: float = DEFAULT_EPS_LOW
    eps_high: float = DEFAULT_EPS_HIGH

    def __post_init__(self) -> None:
        if not (0 < self.eps_low <= self.eps_high):
            raise ValueError("require eps_high >= eps_low > 0")
        n = len(self.logp_new)
        if not (len(self.logp_old) == len(self.masks) == len(self.advantages) == n):
            raise ValueError("per-trajectory lists must have equal length")
        for lp_new, lp_old, mask in zip(self.logp_new, self.logp_old, self.masks):
            if not (len(lp_new) == len(lp_old) == len(mask)):
                raise ValueError("token arrays and mask must be equal-length")


def _clipped_terms(
    lp_new: np.ndarray, lp_old: np.ndarray, advantage: float, eps_low: float, eps_high: float
) -> np.ndarray:
    ratio = np.exp(np.asarray(lp_new, dtype=float) - np.asarray(lp_old, dtype=float))
    clipped = np.clip(ratio, 1.0 - eps_low, 1.0 + eps_high)
    return np.minimum(ratio * advantage, clipped * advantage)


def token_objective(inputs: ObjectiveInputs) -> tuple[float, list[np.ndarray]]:
    """Masked surrogate normalized over all masked tokens in the batch."""
    total = 0.0
    mass = 0.0
    terms: list[np.ndarray] = []
    for lp_new, lp_old, mask, advantage in zip(
        inputs.logp_new, inputs.logp_old, inputs.masks, inputs.advantages
    ):
        term = _clipped_terms(lp_new, lp_old, advantage, inputs.eps_low, inputs.eps_high)
        terms.append(term)
        mask = np.asarray(mask, dtype=float)
        total += float((mask * term).sum())
        mass += float(mask.sum())
    if mass == 0:
        raise ValueError("all-zero mask: nothing to optimize")
    return total / mass, terms


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Exact discrete KL(p || q) in nats."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    support = p > 0
    return float((p[support] * (np.log(p[support]) - np.log(q[support]))).sum())


def grpo_objective(
    inputs: ObjectiveInputs,
    beta: float = 0.0,
    kl_terms: Optional[list[np.ndarray]] = None,
) -> float:
    """Sample-level surrogate: mean over trajectories of per-token means,
    minus ``beta`` times the per-token KL to the reference policy.

    Per-trajectory normalization uses the masked token count.
    """
    if beta and kl_terms is None:
        raise ValueError("beta > 0 requires per-token KL terms")
    per_sample: list[float] = []
    for i, (lp_new, lp_old, mask, advantage) in enumerate(
        zip(inputs.logp_new, inputs.logp_old, inputs.masks, inputs.advantages)
    ):
        term = _clipped_terms(lp_new, lp_old, advantage, inputs.eps_low, inputs.eps_high)
        mask = np.asarray(mask, dtype=float)
        if beta:
            term = term - beta * np.asarray(kl_terms[i], dtype=float)
        mass = float(mask.sum())
        if mass == 0:
            raise ValueError(f"trajectory {i}: all-zero mask")
        per_sample.append(float((mask * term).sum()) / mass)
    return float(np.mean(per_sample))


@dataclass
class ToyEval:
    """Per-token evaluation of a trajectory under a toy policy."""

    logprobs: np.ndarray
    mask: np.ndarray
    features: np.ndarray  # -1 on tool positions
    token_ids: np.ndarray
    dists: list[Optional[np.ndarray]]


def toy_logprobs(policy: ToyPolicy, trajectory: Trajectory) -> ToyEval:
    """Autoregressive logprobs for model positions; placeholders on tool tokens.

    Raises on a model-origin token outside the policy vocabulary.
    """
    n = len(trajectory.records)
    logprobs = np.zeros(n)
    mask = np.zeros(n)
    features = np.full(n, -1, dtype=int)
    token_ids = np.full(n, -1, dtype=int)
    dists: list[Optional[np.ndarray]] = [None] * n
    context: list[int] = []
    for t, record in enumerate(trajectory.records):
        if record.origin == "model":
            if not 0 <= record.token_id < policy.vocab_size:
                raise ValueError(f"token at position {t} is out of vocabulary: {record.text!r}")
            f = policy.feature(trajectory.prompt, context)
            dist = policy.dist_for_feature(f)
            logprobs[t] = np.log(dist[record.token_id])
            mask[t] = 1.0
            features[t] = f
            token_ids[t] = record.token_id
            dists[t] = dist
        context.append(record.token_id)
    return ToyEval(logprobs, mask, features, token_ids, dists)


@dataclass
class _FlatBatch:
    """Model-token positions of a batch, flattened for objective/gradient."""

    features: np.ndarray
    token_ids: np.ndarray
    logp_old: np.ndarray
    advantages: np.ndarray


def _flatten_batch(policy: ToyPolicy, batch: Sequence[tuple[Trajectory, float]]) -> _FlatBatch:
    features, token_ids, logp_old, advantages = [], [], [], []
    for trajectory, advantage in batch:
        ev = toy_logprobs(policy, trajectory)
        old = trajectory.logprobs
        for t in range(len(trajectory.records)):
            if ev.mask[t]:
                features.append(ev.features[t])
                token_ids.append(ev.token_ids[t])
                logp_old.append(old[t])
                advantages.append(advantage)
    if not features:
        raise ValueError("batch contains no model tokens")
    return _FlatBatch(
        np.asarray(features), np.asarray(token_ids), np.asarray(logp_old), np.asarray(advantages)
    )


def _flat_objective(policy: ToyPolicy, flat: _FlatBatch, eps_low: float, eps_high: float) -> float:
    logits = policy.theta[flat.features] / policy.temperature
    logits = logits - logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    lp_new = logp[np.arange(len(flat.token_ids)), flat.token_ids]
    ratio = np.exp(lp_new - flat.logp_old)
    clipped = np.clip(ratio, 1.0 - eps_low, 1.0 + eps_high)
    terms = np.minimum(ratio * flat.advantages, clipped * flat.advantages)
    return float(terms.sum() / len(terms))


def toy_objective_and_grad(
    policy: ToyPolicy,
    batch: Sequence[tuple[Trajectory, float]],
    eps_low: float = DEFAULT_EPS_LOW,
    eps_high: float = DEFAULT_EPS_HIGH,
) -> tuple[float, np.ndarray]:
    """Objective value and exact gradient d J / d theta for a toy policy.

    ``batch`` pairs each trajectory with its group advantage; behavior-policy
    logprobs come from the trajectory records. Tokens where the clipped branch
    of the surrogate is active contribute zero gradient.
    """
    flat = _flatten_batch(policy, batch)
    logits = policy.theta[flat.features] / policy.temperature
    logits = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    idx = np.arange(len(flat.token_ids))
    lp_new = np.log(probs[idx, flat.token_ids])
    ratio = np.exp(lp_new - flat.logp_old)
    clipped = np.clip(ratio, 1.0 - eps_low, 1.0 + eps_high)
    unclipped_terms = ratio * flat.advantages
    clipped_terms = clipped * flat.advantages
    terms = np.minimum(unclipped_terms, clipped_terms)
    mass = len(terms)
    objective = float(terms.sum() / mass)

    # d term / d lp_new = ratio * A where the unclipped branch is the min
    coeff = np.where(unclipped_terms <= clipped_terms, unclipped_terms, 0.0) / mass
    grad = np.zeros_like(policy.theta)
    # d lp / d theta[f] = (onehot - probs) / temperature
    contrib = -coeff[:, None] * probs
    contrib[idx, flat.token_ids] += coeff
    np.add.at(grad, flat.features, contrib / policy.temperature)
    return objective, grad


def grad_check(
    policy: ToyPolicy,
    batch: Sequence[tuple[Trajectory, float]],
    h: float = 1e-5,
    eps_low: float = DEFAULT_EPS_LOW,
    eps_high: float = DEFAULT_EPS_HIGH,
) -> float:
    """Max relative error of the analytic gradient against central differences.

    Only parameters with analytic or numeric gradient magnitude above 1e-8
    enter the comparison; returns 0.0 when none do.
    """
    flat = _flatten_batch(policy, batch)
    _, analytic = toy_objective_and_grad(policy, batch, eps_low, eps_high)
    worst = 0.0
    theta = policy.theta
    for f in range(theta.shape[0]):
        for v in range(theta.shape[1]):
            original = theta[f, v]
            theta[f, v] = original + h
            plus = _flat_objective(policy, flat, eps_low, eps_high)
            theta[f, v] = original - h
            minus = _flat_objective(policy, flat, eps_low, eps_high)
            theta[f, v] = original
            numeric = (plus - minus) / (2 * h)
            a = analytic[f, v]
            if max(abs(a), abs(numeric)) <= 1e-8:
                continue
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric)))
    return worst


@dataclass
class TrainMetrics:
    step: int
    reward: float
    entropy: float
    length: float
    discards: int
    objective: float


@dataclass
class TrainConfig:
    task: str = "calculator"  # "calculator" | "fact-lookup"
    steps: int = 100
    batch_size: int = 16
    group_size: int = 8
    max_turns: int = 2
    max_response_length: int = 48
    l_cache: Optional[int] = None  # defaults to max_response_length // 8
    eps_low: float = DEFAULT_EPS_LOW
    eps_high: float = DEFAULT_EPS_HIGH
    # the objective is normalized by the batch token count (thousands), so the
    # effective per-token step is learning_rate / mass
    learning_rate: float = 1000.0
    momentum: float = 0.0
    temperature: float = 1.0
    seed: int = 0
    n_items: int = 16
    n_features: int = 2048
    context_size: int = 1
    reroll_degenerate: bool = False
    source_oversample: int = 8

    def limits(self) -> rollout_mod.RolloutLimits:
        return rollout_mod.RolloutLimits(
            max_turns=self.max_turns,
            max_response_length=self.max_response_length,
            group_size=self.group_size,
            batch_size=self.batch_size,
        )

    def budget(self) -> rewards.LengthBudget:
        l_cache = self.l_cache if self.l_cache else max(1, self.max_response_length // 8)
        return rewards.LengthBudget(l_max=self.max_response_length, l_cache=l_cache)

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _fact_items(n: int, seed: int) -> list[data_mod.QAItem]:
    rng = np.random.default_rng(seed)
    letters = "abcde"
    items = []
    for i in range(n):
        answer = "".join(rng.choice(list(letters), size=3))
        items.append(
            data_mod.QAItem(
                id=f"fact-{i:04d}",
                question=f"What code word is filed under entry {i}?",
                answer=answer,
                type=rewards.QuestionType.FACT,
                dataset="fact-lookup",
            )
        )
    return items


def build_task(config: TrainConfig) -> tuple[list[data_mod.QAItem], tools_mod.Gateway]:
    """Items and an offline gateway for a toy task."""
    if config.task == "calculator":
        items = data_mod.gen_calculator(config.n_items, config.seed)
        gateway = tools_mod.Gateway(
            search_client=tools_mod.SearchClient(tools_mod.MockSearchBackend()),
            code_backend=tools_mod.EvalCodeBackend(),
        )
    elif config.task == "fact-lookup":
        items = _fact_items(config.n_items, config.seed)
        table = {
            item.question: [{"title": f"entry {item.id}", "snippet": f"code word {item.answer}"}]
            for item in items
        }
        gateway = tools_mod.Gateway(
            search_client=tools_mod.SearchClient(tools_mod.MockSearchBackend(table)),
            code_backend=tools_mod.MockCodeBackend(),
        )
    else:
        raise ValueError(f"unknown toy task: {config.task!r}")
    return items, gateway


def _step_metrics(
    policy: ToyPolicy, step: int, batch: rollout_mod.BatchResult, objective: float
) -> TrainMetrics:
    all_groups = batch.groups + batch.discarded_groups
    rollouts = [t for g in all_groups for t in g.trajectories]
    reward = float(np.mean([r for g in all_groups for r in g.rewards])) if rollouts else float("nan")
    entropies: list[float] = []
    lengths: list[float] = []
    for traj in rollouts:
        lengths.append(traj.model_token_count)
        try:
            ev = toy_logprobs(policy, traj)
        except ValueError:
            continue
        for dist in ev.dists:
            if dist is not None:
                entropies.append(float(-(dist * np.log(dist)).sum()))
    return TrainMetrics(
        step=step,
        reward=reward,
        entropy=float(np.mean(entropies)) if entropies else float("nan"),
        length=float(np.mean(lengths)) if lengths else float("nan"),
        discards=batch.discarded,
        objective=objective,
    )


def train_step(
    policy: ToyPolicy,
    items: Sequence[data_mod.QAItem],
    gateway: tools_mod.Gateway,
    config: TrainConfig,
    step: int,
    velocity: Optional[np.ndarray] = None,
) -> TrainMetrics:
    """One collect / score / advantage / ascent cycle; updates theta in place."""
    limits = config.limits()
    budget = config.budget()
    step_seed = derive_seed(config.seed, "step", step)
    order = np.random.default_rng(step_seed).permutation(len(items))
    source = islice(cycle(items[i] for i in order), config.batch_size * config.source_oversample)
    batch = rollout_mod.collect_batch(
        source, policy, gateway, limits, budget, step_seed,
        reroll_degenerate=config.reroll_degenerate, tool_tokenizer=policy.tokenize,
    )
    if not batch.groups:
        return _step_metrics(policy, step, batch, objective=float("nan"))
    pairs: list[tuple[Trajectory, float]] = []
    for group in batch.groups:
        group.advantages = group_advantages(group.rewards)
        pairs.extend(zip(group.trajectories, group.advantages))
    objective, grad = toy_objective_and_grad(policy, pairs, config.eps_low, config.eps_high)
    if not np.isfinite(objective):
        raise FloatingPointError(f"objective diverged at step {step}")
    metrics = _step_metrics(policy, step, batch, objective)
    if velocity is not None and config.momentum:
        velocity *= config.momentum
        velocity += grad
        policy.theta += config.learning_rate * velocity
    else:
        policy.theta += config.learning_rate * grad
    return metrics


def make_policy(config: TrainConfig) -> ToyPolicy:
    return ToyPolicy(
        context_size=config.context_size,
        n_features=config.n_features,
        temperature=config.temperature,
        seed=derive_seed(config.seed, "policy-init"),
    )


def train_toy(
    config: TrainConfig,
    policy: Optional[ToyPolicy] = None,
    start_step: int = 0,
) -> tuple[list[TrainMetrics], ToyPolicy]:
    """Run the full toy training loop from ``start_step`` to ``config.steps``.

    Step randomness is derived from (config seed, step index), so resuming
    from a checkpointed policy at step k reproduces the remaining metrics
    bit-exactly.
    """
    if policy is None:
        policy = make_policy(config)
    items, gateway = build_task(config)
    velocity = np.zeros_like(policy.theta) if config.momentum else None
    history: list[TrainMetrics] = []
    for step in range(start_step, config.steps):
        metrics = train_step(policy, items, gateway, config, step, velocity)
        history.append(metrics)
        log.debug(
            "step %d reward=%.3f entropy=%.3f discards=%d",
            step, metrics.reward, metrics.entropy, metrics.discards,
        )
    return history, policy


def write_metrics_csv(history: Sequence[TrainMetrics], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "reward", "entropy", "length", "discards", "objective"])
        for m in history:
            writer.writerow([m.step, repr(m.reward), repr(m.entropy), repr(m.length), m.discards, repr(m.objective)])


def save_checkpoint(policy: ToyPolicy, config: TrainConfig, step: int, path) -> None:
    payload = {
        "version": 1,
        "config_hash": config.hash(),
        "step": step,
        "vocab": policy.vocab,
        "context_size": policy.context_size,
        "n_features": policy.n_features,
        "temperature": policy.temperature,
        "theta": policy.theta.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path, config: Optional[TrainConfig] = None) -> tuple[ToyPolicy, int]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version: {payload.get('version')}")
    if config is not None and payload["config_hash"] != config.hash():
        raise ValueError("checkpoint was written for a different config")
    policy = ToyPolicy(
        vocab=payload["vocab"],
        context_size=payload["context_size"],
        n_features=payload["n_features"],
        temperature=payload["temperature"],
        theta=np.array(payload["theta"], dtype=float),
    )
    return policy, int(payload["step"])
