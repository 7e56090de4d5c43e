"""Rollout engine: interleaved generation and tool dispatch.

A rollout alternates between sampling model tokens and, whenever a
``</search>`` or ``</code>`` closes, injecting the tool's output wrapped in
``<response>`` tags as tool-origin tokens. Generation ends on ``</answer>``,
on exhausting the tool-call budget, or on hitting the model-token length
limit.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from . import rewards, tags
from .data import QAItem
from .policy import PolicyBackend, RolloutRng

log = logging.getLogger(__name__)

ToolTokenizer = Callable[[str], list[tuple[int, str]]]


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (reproducible, independent)."""
    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "big") >> 1


@dataclass(frozen=True)
class TokenRecord:
    token_id: int
    text: str
    origin: str  # "model" | "tool"
    logprob: float = 0.0


@dataclass(frozen=True)
class ToolInvocation:
    tool: str  # "search" | "code"
    request: str
    response: str
    latency: float  # seconds


@dataclass
class RolloutLimits:
    max_turns: int
    max_response_length: int
    group_size: int = 8
    batch_size: int = 16
    total_length_cap: Optional[int] = None

    def __post_init__(self) -> None:
        for name in ("max_turns", "max_response_length", "group_size", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.total_length_cap is None:
            # hard cap on total context (model + tool tokens) for termination
            self.total_length_cap = 4 * self.max_response_length


@dataclass
class Trajectory:
    prompt: str
    records: list[TokenRecord]
    terminal: str  # "answered" | "turn_budget_exhausted" | "length_exhausted"
    tool_calls: list[ToolInvocation] = field(default_factory=list)
    item_id: Optional[str] = None

    @property
    def text(self) -> str:
        return "".join(r.text for r in self.records)

    @property
    def model_text(self) -> str:
        return "".join(r.text for r in self.records if r.origin == "model")

    @property
    def model_token_count(self) -> int:
        return sum(1 for r in self.records if r.origin == "model")

    @property
    def mask(self) -> np.ndarray:
        return np.array([1.0 if r.origin == "model" else 0.0 for r in self.records])

    @property
    def logprobs(self) -> np.ndarray:
        """Behavior-policy logprobs captured at rollout time (0 on tool tokens)."""
        return np.array([r.logprob for r in self.records])


@dataclass
class RolloutGroup:
    prompt_item: QAItem
    trajectories: list[Trajectory]
    rewards: list[float]
    advantages: Optional[list[float]] = None


@dataclass
class BatchResult:
    groups: list[RolloutGroup]
    discarded: int
    underfilled: bool
    # kept so training metrics can average over every rollout actually taken
    discarded_groups: list[RolloutGroup] = field(default_factory=list)


def _default_tool_tokenizer(text: str) -> list[tuple[int, str]]:
    return [(-1, text)]


def _inject_response(
    records: list[TokenRecord], payload: str, tool_tokenizer: ToolTokenizer
) -> str:
    wrapped = tags.render_response(payload)
    for token_id, text in tool_tokenizer(wrapped):
        records.append(TokenRecord(token_id=token_id, text=text, origin="tool", logprob=0.0))
    return wrapped


def run_rollout(
    item: QAItem,
    policy: PolicyBackend,
    tools,
    limits: RolloutLimits,
    seed: int,
    tool_tokenizer: Optional[ToolTokenizer] = None,
) -> Trajectory:
    """Generate one trajectory for ``item``.

    The outer loop runs at most ``max_turns + 1`` times, so at most
    ``max_turns`` tool responses are injected; a tool call triggered in the
    final iteration terminates the rollout instead of dispatching. Tool
    failures are injected as response text; policy failures propagate.
    """
    tokenizer = tool_tokenizer or _default_tool_tokenizer
    rng = RolloutRng(seed)
    records: list[TokenRecord] = []
    tool_calls: list[ToolInvocation] = []
    buffer = ""
    model_count = 0

    for turn in range(limits.max_turns + 1):
        event: Optional[tags.ParseEvent] = None
        while model_count < limits.max_response_length and len(records) < limits.total_length_cap:
            tok = policy.next_token(item.question, records, rng)
            records.append(
                TokenRecord(tok.token_id, tok.text, origin="model", logprob=tok.logprob)
            )
            model_count += 1
            parsed = tags.scan_increment(buffer, tok.text)
            buffer += tok.text
            if parsed.kind == "answer_closed":
                return Trajectory(item.question, records, "answered", tool_calls, item.id)
            if parsed.kind in ("search_closed", "code_closed"):
                event = parsed
                break
        if event is None:
            return Trajectory(item.question, records, "length_exhausted", tool_calls, item.id)
        if turn == limits.max_turns:
            # budget spent: the tool call in the final iteration is not served
            return Trajectory(item.question, records, "turn_budget_exhausted", tool_calls, item.id)
        tool = "search" if event.kind == "search_closed" else "code"
        started = time.monotonic()
        response = tools.dispatch(tool, event.payload)
        tool_calls.append(
            ToolInvocation(tool, event.payload, response, time.monotonic() - started)
        )
        buffer += _inject_response(records, response, tokenizer)

    return Trajectory(item.question, records, "turn_budget_exhausted", tool_calls, item.id)


def population_std(values: Sequence[float]) -> float:
    return float(np.std(np.asarray(values, dtype=float)))


def run_group(
    item: QAItem,
    policy: PolicyBackend,
    tools,
    limits: RolloutLimits,
    budget: rewards.LengthBudget,
    seed: int,
    group_size: Optional[int] = None,
    tool_tokenizer: Optional[ToolTokenizer] = None,
) -> RolloutGroup:
    """Roll out a group of independent trajectories for one prompt."""
    g = group_size if group_size is not None else limits.group_size
    if g < 2:
        raise ValueError("group size must be >= 2")
    trajectories = [
        run_rollout(item, policy, tools, limits, derive_seed(seed, item.id, i), tool_tokenizer)
        for i in range(g)
    ]
    group_rewards = [rewards.score(t, item, budget).total for t in trajectories]
    return RolloutGroup(item, trajectories, group_rewards, advantages=None)


def collect_batch(
    source: Iterable[QAItem],
    policy: PolicyBackend,
    tools,
    limits: RolloutLimits,
    budget: rewards.LengthBudget,
    seed: int,
    batch_size: Optional[int] = None,
    reroll_degenerate: bool = False,
    max_rerolls: int = 4,
    tool_tokenizer: Optional[ToolTokenizer] = None,
) -> BatchResult:
    """Fill a batch with groups whose rewards have non-zero spread.

    Degenerate groups (population std 0) are discarded and counted; with
    ``reroll_degenerate`` the same prompt is retried with fresh seeds up to
    ``max_rerolls`` times before being discarded. If the source runs out
    first, the partial batch is returned with ``underfilled`` set.
    """
    wanted = batch_size if batch_size is not None else limits.batch_size
    groups: list[RolloutGroup] = []
    dropped: list[RolloutGroup] = []
    it: Iterator[QAItem] = iter(source)
    draw = 0
    while len(groups) < wanted:
        item = next(it, None)
        if item is None:
            return BatchResult(groups, len(dropped), underfilled=True, discarded_groups=dropped)
        attempts = 1 + (max_rerolls if reroll_degenerate else 0)
        accepted = False
        for attempt in range(attempts):
            group = run_group(
                item, policy, tools, limits, budget,
                derive_seed(seed, draw, attempt), tool_tokenizer=tool_tokenizer,
            )
            if population_std(group.rewards) > 0:
                groups.append(group)
                accepted = True
                break
        if not accepted:
            dropped.append(group)
            log.debug("discarded degenerate group for item %s", item.id)
        draw += 1
    return BatchResult(groups, len(dropped), underfilled=False, discarded_groups=dropped)


def _origins_rle(records: Sequence[TokenRecord]) -> list[list]:
    runs: list[list] = []
    for record in records:
        if runs and runs[-1][0] == record.origin:
            runs[-1][1] += 1
        else:
            runs.append([record.origin, 1])
    return runs


def export_jsonl(groups: Iterable[RolloutGroup], path) -> int:
    """Write one JSON object per trajectory: transcript, origins, tools, reward."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for group in groups:
            for traj, reward in zip(group.trajectories, group.rewards):
                fh.write(
                    json.dumps(
                        {
                            "item_id": traj.item_id,
                            "text": traj.text,
                            "origins": _origins_rle(traj.records),
                            "tool_calls": [
                                {
                                    "tool": c.tool,
                                    "request": c.request,
                                    "response": c.response,
                                    "latency": c.latency,
                                }
                                for c in traj.tool_calls
                            ],
                            "terminal": traj.terminal,
                            "reward": reward,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
                count += 1
    return count
