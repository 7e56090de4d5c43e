"""Declarative run configuration: one YAML file drives every CLI workflow.

The file doubles as the experiment record, so the schema is strict: unknown
keys are rejected up front.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Any, Optional

import yaml

from . import optim, rewards, rollout, tools


class ConfigError(ValueError):
    pass


def _build_section(cls, raw: dict, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return cls(**raw)


@dataclass
class LimitsSection:
    max_turns: int = 4
    max_response_length: int = 48
    group_size: int = 8
    batch_size: int = 16


@dataclass
class BudgetSection:
    l_max: Optional[int] = None  # defaults to max_response_length
    l_cache: Optional[int] = None  # defaults to l_max // 8


@dataclass
class ClipSection:
    eps_low: float = 0.2
    eps_high: float = 0.28


@dataclass
class TrainSection:
    task: str = "calculator"
    steps: int = 100
    learning_rate: float = 1000.0
    momentum: float = 0.0
    temperature: float = 1.0
    n_items: int = 16
    n_features: int = 2048
    context_size: int = 1
    reroll_degenerate: bool = False


@dataclass
class ToolsSection:
    mock: bool = True
    search_url: Optional[str] = None
    interpreter_url: Optional[str] = None
    cache_path: Optional[str] = None
    doc_count: int = 5
    timeout_ms: int = 5000


@dataclass
class DataSection:
    train_path: Optional[str] = None
    eval_path: Optional[str] = None


@dataclass
class RunConfig:
    seed: int = 0
    limits: LimitsSection = field(default_factory=LimitsSection)
    budget: BudgetSection = field(default_factory=BudgetSection)
    clip: ClipSection = field(default_factory=ClipSection)
    train: TrainSection = field(default_factory=TrainSection)
    tools: ToolsSection = field(default_factory=ToolsSection)
    data: DataSection = field(default_factory=DataSection)

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        sections = {
            "limits": LimitsSection,
            "budget": BudgetSection,
            "clip": ClipSection,
            "train": TrainSection,
            "tools": ToolsSection,
            "data": DataSection,
        }
        unknown = set(raw) - set(sections) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        if "seed" in raw:
            if not isinstance(raw["seed"], int):
                raise ConfigError("seed: expected an integer")
            kwargs["seed"] = raw["seed"]
        for name, section_cls in sections.items():
            if name in raw:
                kwargs[name] = _build_section(section_cls, raw[name], name)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_mapping(raw)

    def rollout_limits(self) -> rollout.RolloutLimits:
        return rollout.RolloutLimits(
            max_turns=self.limits.max_turns,
            max_response_length=self.limits.max_response_length,
            group_size=self.limits.group_size,
            batch_size=self.limits.batch_size,
        )

    def length_budget(self) -> rewards.LengthBudget:
        l_max = self.budget.l_max or self.limits.max_response_length
        l_cache = self.budget.l_cache or max(1, l_max // 8)
        return rewards.LengthBudget(l_max=l_max, l_cache=l_cache)

    def train_config(self) -> optim.TrainConfig:
        budget = self.length_budget()
        return optim.TrainConfig(
            task=self.train.task,
            steps=self.train.steps,
            batch_size=self.limits.batch_size,
            group_size=self.limits.group_size,
            max_turns=self.limits.max_turns,
            max_response_length=self.limits.max_response_length,
            l_cache=budget.l_cache,
            eps_low=self.clip.eps_low,
            eps_high=self.clip.eps_high,
            learning_rate=self.train.learning_rate,
            momentum=self.train.momentum,
            temperature=self.train.temperature,
            seed=self.seed,
            n_items=self.train.n_items,
            n_features=self.train.n_features,
            context_size=self.train.context_size,
            reroll_degenerate=self.train.reroll_degenerate,
        )

    def search_cache(self) -> tools.SearchCache:
        cache = tools.SearchCache()
        path = self.tools.cache_path
        if path and os.path.exists(path):
            cache.load(path)
        return cache

    def gateway(self) -> tools.Gateway:
        """Build the tool gateway: mock backends, or HTTP adapters when
        endpoints are configured. INTERPRETER_URL overrides the config."""
        if self.tools.mock:
            items, gw = optim.build_task(self.train_config())
            return gw
        if not self.tools.search_url:
            raise ConfigError("tools.search_url required when tools.mock is false")
        interpreter_url = os.environ.get("INTERPRETER_URL", self.tools.interpreter_url)
        if not interpreter_url:
            raise ConfigError("tools.interpreter_url (or INTERPRETER_URL) required")
        client = tools.SearchClient(
            tools.HttpSearchBackend(self.tools.search_url),
            cache=self.search_cache(),
            doc_count=self.tools.doc_count,
        )
        return tools.Gateway(
            search_client=client,
            code_backend=tools.HttpCodeBackend(interpreter_url),
            timeout_ms=self.tools.timeout_ms,
        )
