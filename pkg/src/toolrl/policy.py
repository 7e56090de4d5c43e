"""Policy backends: the interface the rollout engine samples from, a scripted
policy for tests, and a small differentiable table policy for toy training."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Protocol, Sequence

import numpy as np


class NextToken(NamedTuple):
    token_id: int
    text: str
    logprob: float
    dist: Optional[np.ndarray] = None


class RolloutRng:
    """Per-rollout randomness: a seeded generator plus the seed itself, so
    policies can derive rollout-stable choices."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = np.random.default_rng(seed)


class PolicyBackend(Protocol):
    def next_token(self, prompt: str, history: Sequence, rng: RolloutRng) -> NextToken:
        """Emit the next token given the prompt and the trajectory so far.

        Must be deterministic under a fixed rollout seed and safe for
        concurrent calls across rollouts.
        """


def _model_texts(history: Sequence) -> list[str]:
    return [r.text for r in history if r.origin == "model"]


class ScriptedPolicy:
    """Deterministic test policy that replays a token script.

    ``variants_for`` maps a prompt to one or more candidate scripts; the
    rollout seed picks among them, so group members can be forced to diverge
    or coincide at will. The script position is recovered from the
    model-origin history, keeping the policy stateless.
    """

    def __init__(
        self,
        script: Optional[Sequence[str]] = None,
        variants_for: Optional[Callable[[str], Sequence[Sequence[str]]]] = None,
        filler: str = " ",
        cycle: bool = False,
    ):
        if (script is None) == (variants_for is None):
            raise ValueError("provide exactly one of script / variants_for")
        self._script = list(script) if script is not None else None
        self._variants_for = variants_for
        self.filler = filler
        self.cycle = cycle

    def next_token(self, prompt: str, history: Sequence, rng: RolloutRng) -> NextToken:
        if self._script is not None:
            script = self._script
        else:
            variants = self._variants_for(prompt)
            script = list(variants[rng.seed % len(variants)])
        position = len(_model_texts(history))
        if self.cycle:
            position %= len(script)
        text = script[position] if position < len(script) else self.filler
        return NextToken(token_id=position, text=text, logprob=0.0)


def _stable_hash(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


def toy_vocab() -> list[str]:
    """Default toy vocabulary: the protocol tags plus enough characters to
    spell numeric answers and short fact answers."""
    tags = [
        "<think>", "</think>", "<search>", "</search>",
        "<code>", "</code>", "<answer>", "</answer>",
        "<response>", "</response>",
    ]
    chars = list("0123456789.+-*/ ,abcde")
    return tags + chars


@dataclass
class ToyPolicy:
    """Context-table policy: logits indexed by a hashed fixed-width context.

    The context feature hashes the prompt together with the last
    ``context_size`` token ids, so the table can memorize per-question
    behavior. Sampling uses softmax at the given temperature.
    """

    vocab: list[str] = field(default_factory=toy_vocab)
    context_size: int = 3
    n_features: int = 2048
    temperature: float = 1.0
    seed: int = 0
    theta: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if len(self.vocab) > 64:
            raise ValueError("toy vocabulary is limited to 64 symbols")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.theta is None:
            rng = np.random.default_rng(self.seed)
            self.theta = rng.normal(scale=0.01, size=(self.n_features, len(self.vocab)))
        else:
            self.theta = np.asarray(self.theta, dtype=float)
            if self.theta.shape != (self.n_features, len(self.vocab)):
                raise ValueError("theta shape does not match (n_features, vocab)")
        self._index = {tok: i for i, tok in enumerate(self.vocab)}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def token_id(self, text: str) -> int:
        return self._index.get(text, -1)

    def feature(self, prompt: str, context_ids: Sequence[int]) -> int:
        window = tuple(context_ids[-self.context_size :])
        return _stable_hash(prompt, window) % self.n_features

    def dist_for_feature(self, feature: int) -> np.ndarray:
        logits = self.theta[feature] / self.temperature
        logits = logits - logits.max()
        exps = np.exp(logits)
        return exps / exps.sum()

    def dist(self, prompt: str, context_ids: Sequence[int]) -> np.ndarray:
        return self.dist_for_feature(self.feature(prompt, context_ids))

    def next_token(self, prompt: str, history: Sequence, rng: RolloutRng) -> NextToken:
        context_ids = [r.token_id for r in history]
        dist = self.dist(prompt, context_ids)
        token = int(rng.generator.choice(self.vocab_size, p=dist))
        return NextToken(token, self.vocab[token], float(np.log(dist[token])), dist)

    def tokenize(self, text: str) -> list[tuple[int, str]]:
        """Greedy longest-match tokenization; unknown characters map to -1."""
        records: list[tuple[int, str]] = []
        by_length = sorted(self.vocab, key=len, reverse=True)
        pos = 0
        while pos < len(text):
            for token in by_length:
                if text.startswith(token, pos):
                    records.append((self._index[token], token))
                    pos += len(token)
                    break
            else:
                records.append((-1, text[pos]))
                pos += 1
        return records
