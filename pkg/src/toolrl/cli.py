"""Operator entry points: data generation, debug rollouts, toy training,
evaluation, reward conformance replay, and cache maintenance.

Exit codes: 0 success, 1 assertion/conformance failure, 2 usage/config error.
"""
from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import data as data_mod
from . import optim, rewards, rollout as rollout_mod, tools as tools_mod
from .config import ConfigError, RunConfig

log = logging.getLogger(__name__)


def _load_config(path: str) -> RunConfig:
    try:
        return RunConfig.from_file(path)
    except (ConfigError, OSError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO)


@main.command("gen-data")
@click.option("--n", type=int, required=True, help="Number of questions to generate.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def cmd_gen_data(n: int, seed: int, out: str) -> None:
    """Generate synthetic calculator questions as JSONL."""
    if n < 1:
        click.echo("gen-data: --n must be >= 1", err=True)
        sys.exit(2)
    items = data_mod.gen_calculator(n, seed)
    count = data_mod.save_dataset(items, out)
    click.echo(f"wrote {count} items to {out}")


def _resolve_items(config: RunConfig, path_field):
    if path_field:
        return data_mod.load_dataset(path_field)
    items, _ = optim.build_task(config.train_config())
    return items


@main.command("rollout")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--item-id", required=True)
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--mock-tools", is_flag=True, help="Force mock tool backends.")
def cmd_rollout(config_path: str, item_id: str, checkpoint, mock_tools: bool) -> None:
    """Run a single debug rollout and print the annotated transcript."""
    config = _load_config(config_path)
    if mock_tools:
        config.tools.mock = True
    items = _resolve_items(config, config.data.eval_path or config.data.train_path)
    by_id = {item.id: item for item in items}
    if item_id not in by_id:
        click.echo(f"unknown item-id: {item_id}", err=True)
        sys.exit(1)
    item = by_id[item_id]
    if checkpoint:
        policy, _ = optim.load_checkpoint(checkpoint)
    else:
        policy = optim.make_policy(config.train_config())
    gateway = config.gateway()
    traj = rollout_mod.run_rollout(
        item, policy, gateway, config.rollout_limits(),
        rollout_mod.derive_seed(config.seed, item.id), tool_tokenizer=policy.tokenize,
    )
    breakdown = rewards.score(traj, item, config.length_budget())
    click.echo(f"# item {item.id}: {item.question}")
    click.echo(f"# terminal={traj.terminal} reward={breakdown.total:+.3f} format_ok={breakdown.format_ok}")
    current = None
    for record in traj.records:
        if record.origin != current:
            current = record.origin
            click.echo(f"\n[{current}] ", nl=False)
        click.echo(record.text, nl=False)
    click.echo("")


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--metrics-out", type=click.Path(dir_okay=False), default="metrics.csv", show_default=True)
@click.option("--checkpoint-out", type=click.Path(dir_okay=False), default="checkpoint.json", show_default=True)
@click.option("--resume", type=click.Path(exists=True), default=None, help="Checkpoint to resume from.")
def cmd_train(config_path: str, metrics_out: str, checkpoint_out: str, resume) -> None:
    """Train the toy policy and write per-step metrics plus a checkpoint."""
    config = _load_config(config_path)
    train_config = config.train_config()
    policy = None
    start_step = 0
    if resume:
        try:
            policy, start_step = optim.load_checkpoint(resume, train_config)
        except ValueError as exc:
            click.echo(f"resume error: {exc}", err=True)
            sys.exit(2)
    history, policy = optim.train_toy(train_config, policy=policy, start_step=start_step)
    optim.write_metrics_csv(history, metrics_out)
    optim.save_checkpoint(policy, train_config, train_config.steps, checkpoint_out)
    click.echo(f"trained {len(history)} steps; metrics -> {metrics_out}, checkpoint -> {checkpoint_out}")


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--json", "as_json", is_flag=True, help="Emit the report as JSON.")
def cmd_eval(config_path: str, checkpoint, as_json: bool) -> None:
    """Evaluate pass@1 and tool-usage statistics over the configured items."""
    config = _load_config(config_path)
    items = _resolve_items(config, config.data.eval_path)
    if checkpoint:
        policy, _ = optim.load_checkpoint(checkpoint)
    else:
        policy = optim.make_policy(config.train_config())
    report = data_mod.evaluate(
        policy, config.gateway(), items, config.rollout_limits(),
        config.length_budget(), config.seed,
    )
    click.echo(report.to_json() if as_json else report.to_table())


@main.command("score")
@click.argument("vectors_file", type=click.Path(exists=True))
def cmd_score(vectors_file: str) -> None:
    """Replay a reward conformance-vector file; exit 1 on any mismatch."""
    results = rewards.run_vectors(vectors_file)
    if not results:
        click.echo("warning: empty vector file", err=True)
        return
    failures = [r for r in results if not r.ok]
    for failure in failures:
        click.echo(
            f"vector {failure.index} FAILED: expected {failure.expected!r}, "
            f"got {failure.actual!r} ({failure.vector})",
            err=True,
        )
    click.echo(f"{len(results) - len(failures)}/{len(results)} vectors passed")
    if failures:
        sys.exit(1)


@main.group("cache")
def cmd_cache() -> None:
    """Search-cache store maintenance."""


def _cache_path(config: RunConfig) -> str:
    path = config.tools.cache_path
    if not path:
        click.echo("config error: tools.cache_path is not set", err=True)
        sys.exit(2)
    return path


@cmd_cache.command("inspect")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
def cache_inspect(config_path: str) -> None:
    config = _load_config(config_path)
    cache = config.search_cache()
    click.echo(f"entries: {len(cache)}")
    for entry in cache.entries():
        click.echo(f"  {entry.normalized_query!r} (raw: {entry.raw_query!r})")


@cmd_cache.command("clear")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
def cache_clear(config_path: str) -> None:
    config = _load_config(config_path)
    path = _cache_path(config)
    tools_mod.SearchCache().persist(path)  # idempotent: truncates to empty
    click.echo(f"cleared {path}")


@cmd_cache.command("import")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.argument("source", type=click.Path(exists=True))
def cache_import(config_path: str, source: str) -> None:
    config = _load_config(config_path)
    path = _cache_path(config)
    cache = config.search_cache()
    count = cache.load(source)
    cache.persist(path)
    click.echo(f"imported {count} entries into {path}")


if __name__ == "__main__":
    main()
