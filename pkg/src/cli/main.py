#!/usr/bin/env python3
"""
gkm command line

    gkm run    --scenario data/scenarios/walkthrough.jsonl --out out/
    gkm fuzz   --iterations 10000 --seed 7
    gkm report out/trace.jsonl --format records

Exit codes: 0 success, 1 invariant violation or probe failure,
2 usage or parse error.

Author: bdstest
License: Apache 2.0
Copyright: 2025 CDSI - Compliance Data Systems Insights
"""

import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
from colorama import Fore, Style, just_fix_windows_console

try:
    from ..core.exceptions import (ConfigError, GroupKeyError, InvariantViolation, ScenarioError,
                                   TraceParseError)
    from ..reporting.cost_report import build_report, storage_rows
    from ..reporting.formulas import parse_params
    from ..simulation.fuzz import FuzzReport, run_campaign, run_campaigns
    from ..simulation.scenario import load_scenario
    from ..simulation.simnet import read_trace, run_scenario, write_trace
    from ..utils.config import DEFAULT_CONFIG_PATH, GKMConfig, get_config, load_config
    from ..utils.secure_logging import configure_secure_logging
except (ImportError, ValueError):
    sys.path.append(str(Path(__file__).parent.parent))
    from core.exceptions import (ConfigError, GroupKeyError, InvariantViolation, ScenarioError,
                                 TraceParseError)
    from reporting.cost_report import build_report, storage_rows
    from reporting.formulas import parse_params
    from simulation.fuzz import FuzzReport, run_campaign, run_campaigns
    from simulation.scenario import load_scenario
    from simulation.simnet import read_trace, run_scenario, write_trace
    from utils.config import DEFAULT_CONFIG_PATH, GKMConfig, get_config, load_config
    from utils.secure_logging import configure_secure_logging

# Configure logging
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
DEFAULT_SCENARIO = "data/scenarios/walkthrough.jsonl"
FIELD_CHOICES = click.Choice(['4', '8', '16'])
FORMAT_CHOICES = click.Choice(['text', 'records'])
CIPHER_CHOICES = click.Choice(['hmac-stream', 'aes-gcm', 'null'])


def _ok(message: str) -> None:
    click.echo(f"{Fore.GREEN}{message}{Style.RESET_ALL}")


def _fail(message: str) -> None:
    click.echo(f"{Fore.RED}{message}{Style.RESET_ALL}", err=True)


def _usage_error(ctx: click.Context, error: Exception) -> None:
    logger.error(f"usage error: {error}")
    if isinstance(error, ScenarioError) and error.line:
        _fail(f"error: line {error.line}: {error}")
    elif isinstance(error, TraceParseError):
        _fail(f"error: byte offset {error.offset}: {error}")
    else:
        _fail(f"error: {error}")
    ctx.exit(EXIT_USAGE)


def _build_config(ctx: click.Context, settings: Optional[Dict[str, Any]] = None,
                  **flags: Any) -> GKMConfig:
    """Config file, then scenario settings, then command-line flags"""
    values: Dict[str, Any] = dict(settings or {})
    values.update({k: v for k, v in flags.items() if v is not None})
    if values.get('field_bits') is not None:
        values['field_bits'] = int(values['field_bits'])
    return load_config(ctx.obj.get('config_path'), **values)


@click.group()
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help=f"YAML configuration file  [default: {DEFAULT_CONFIG_PATH}]")
@click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR']), default=None,
              help="[default: log_level from the config, else WARNING]")
@click.option('--log-dir', type=click.Path(file_okay=False), default=None,
              help="Also write log and audit files here  [default: log_dir from the config]")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str], log_level: Optional[str],
        log_dir: Optional[str]) -> None:
    """Weight-balanced 2-3 tree group key management simulator."""
    ctx.ensure_object(dict)
    ctx.obj['config_path'] = config_path
    if log_level is None or log_dir is None:
        try:
            base = load_config(config_path) if config_path else get_config()
        except ConfigError:
            # reported by the subcommand that builds its config
            base = GKMConfig()
        log_level = log_level or base.log_level
        log_dir = log_dir or base.log_dir
    configure_secure_logging(log_level=log_level, log_dir=log_dir)


@cli.command()
@click.option('--scenario', 'scenario_path', type=click.Path(dir_okay=False), default=DEFAULT_SCENARIO,
              show_default=True)
@click.option('--seed', type=int, default=None, help="[default: scenario seed, else 7]")
@click.option('--field-bits', type=FIELD_CHOICES, default=None, help="[default: 8]")
@click.option('--cipher', type=CIPHER_CHOICES, default=None, help="[default: hmac-stream]")
@click.option('--out', type=click.Path(file_okay=False), default=None,
              help="Directory for trace.jsonl and the report  [default: none]")
@click.option('--format', 'fmt', type=FORMAT_CHOICES, default='text', show_default=True)
@click.option('--params', default=None,
              help="Comparison symbols, e.g. 't=4,w=2,mu=3,n_B=5,L=1'  [default: none]")
@click.option('--probes/--no-probes', default=True, show_default=True)
@click.pass_context
def run(ctx: click.Context, scenario_path: str, seed: Optional[int], field_bits: Optional[str],
        cipher: Optional[str], out: Optional[str], fmt: str, params: Optional[str], probes: bool) -> None:
    """Run a scenario, write its trace and print the cost report."""
    try:
        scenario = load_scenario(scenario_path)
        if seed is not None:
            scenario.seed = seed
        config = _build_config(ctx, scenario.settings, seed=scenario.seed, field_bits=field_bits,
                               cipher_name=cipher)
        symbols = parse_params(params)
    except (ScenarioError, ConfigError, ValueError) as e:
        _usage_error(ctx, e)
        return

    try:
        result = run_scenario(scenario, config, observe=probes)
    except InvariantViolation as e:
        logger.error(f"invariant violation at event {e.event_index}: {e}")
        _fail(f"FAIL event {e.event_index}: {e}")
        if e.snapshot:
            click.echo(json.dumps(e.snapshot, sort_keys=True), err=True)
        ctx.exit(EXIT_FAILURE)
        return
    except GroupKeyError as e:
        logger.error(f"scenario aborted: {e}")
        _fail(f"FAIL {type(e).__name__}: {e}")
        ctx.exit(EXIT_FAILURE)
        return

    storage = storage_rows(result.group, result.members, config.point_limit, config.nonce_bits)
    cost_report = build_report(result.records, symbols, storage)
    rendered = cost_report.render(fmt)
    if out:
        out_dir = Path(out)
        write_trace(result.records, str(out_dir / "trace.jsonl"))
        suffix = "jsonl" if fmt == 'records' else "txt"
        (out_dir / f"report.{suffix}").write_text(rendered, encoding='utf-8')
    click.echo(rendered, nl=False)

    leaks = [name for name, r in result.probes.items() if name != 'guessing' and r.seal_opens]
    for name, r in result.probes.items():
        click.echo(f"probe {name}: seal opens {r.seal_opens}/{r.seal_attempts}, "
                   f"decode rate {r.decode_rate:.4f} ({r.decode_hits}/{r.decode_attempts})")
    if leaks:
        _fail(f"FAIL secrecy probes: {', '.join(leaks)}")
        ctx.exit(EXIT_FAILURE)
    _ok("PASS")


def _campaign_job(args: Dict[str, Any]) -> FuzzReport:
    return run_campaign(**args)


@cli.command()
@click.option('--iterations', type=int, default=10000, show_default=True, help="Total events")
@click.option('--seed', type=int, default=7, show_default=True, help="First campaign seed")
@click.option('--shards', type=int, default=1, show_default=True,
              help="Independent campaigns, seeds seed..seed+shards-1")
@click.option('--workers', type=int, default=1, show_default=True, help="Processes running shards")
@click.option('--members', type=int, default=None, help="Initial members  [default: from config]")
@click.option('--subgroups', type=int, default=None, help="Subgroups  [default: from config]")
@click.option('--field-bits', type=FIELD_CHOICES, default=None, help="[default: 8]")
@click.option('--cipher', type=CIPHER_CHOICES, default=None, help="[default: hmac-stream]")
@click.option('--format', 'fmt', type=FORMAT_CHOICES, default='text', show_default=True)
@click.option('--window', type=int, default=None,
              help="Replay only this many events around each departure or join  [default: whole history]")
@click.option('--sample-every', type=int, default=None,
              help="Replay one departed or joined member in N  [default: from config, 1]")
@click.option('--out', type=click.Path(file_okay=False), default=None,
              help="Directory for fuzz.jsonl  [default: none]")
@click.pass_context
def fuzz(ctx: click.Context, iterations: int, seed: int, shards: int, workers: int,
         members: Optional[int], subgroups: Optional[int], field_bits: Optional[str],
         cipher: Optional[str], fmt: str, window: Optional[int], sample_every: Optional[int],
         out: Optional[str]) -> None:
    """Randomized join/leave/merge/partition campaigns with secrecy probes."""
    if iterations < 0 or shards < 1 or workers < 1 or (sample_every is not None and sample_every < 1) \
            or (window is not None and window < 1):
        _usage_error(ctx, ValueError("iterations must be >= 0; shards, workers, window and sample-every >= 1"))
        return
    try:
        config = _build_config(ctx, seed=seed, field_bits=field_bits, cipher_name=cipher)
    except ConfigError as e:
        _usage_error(ctx, e)
        return

    if iterations == 0:
        _ok("PASS 0 events")
        return

    seeds = list(range(seed, seed + shards))
    kwargs: Dict[str, Any] = {'config': config, 'members': members, 'subgroups': subgroups,
                              'window': window, 'sample_every': sample_every}
    if workers > 1 and shards > 1:
        per_seed = iterations // shards
        jobs = [dict(kwargs, events=per_seed + (1 if i < iterations - per_seed * shards else 0), seed=s)
                for i, s in enumerate(seeds)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports: List[FuzzReport] = list(pool.map(_campaign_job, jobs))
    else:
        reports = run_campaigns(iterations, seeds, **kwargs)

    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in reports]
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "fuzz.jsonl").write_text("\n".join(lines) + "\n", encoding='utf-8')

    failed = [r for r in reports if not r.passed]
    if fmt == 'records':
        click.echo("\n".join(lines))
    else:
        for r in reports:
            rates = ", ".join(f"{name} {p.decode_rate:.4f}" for name, p in sorted(r.probes.items()))
            click.echo(f"seed {r.seed}: {r.events_run} events in {r.elapsed:.1f}s, "
                       f"max merge gap {r.max_merge_gap}, decode rates: {rates or 'n/a'}")
            for problem in r.violations + r.probe_failures():
                _fail(f"  {problem}")
    if failed:
        _fail(f"FAIL reproduce with: gkm fuzz --seed {failed[0].seed} --iterations {failed[0].events_run + 1}")
        ctx.exit(EXIT_FAILURE)
    _ok(f"PASS {sum(r.events_run for r in reports)} events")


@cli.command()
@click.argument('trace_path', type=click.Path(dir_okay=False))
@click.option('--format', 'fmt', type=FORMAT_CHOICES, default='text', show_default=True)
@click.option('--params', default=None, help="Comparison symbols, e.g. 't=4,L=1'  [default: none]")
@click.pass_context
def report(ctx: click.Context, trace_path: str, fmt: str, params: Optional[str]) -> None:
    """Recompute the cost ledger from a trace file and print the report."""
    try:
        records = read_trace(trace_path)
        symbols = parse_params(params)
    except (TraceParseError, ValueError) as e:
        _usage_error(ctx, e)
        return
    except OSError as e:
        _usage_error(ctx, TraceParseError(f"cannot read {trace_path}: {e}"))
        return

    cost_report = build_report(records, symbols)
    click.echo(cost_report.render(fmt), nl=False)
    if not cost_report.consistent:
        _fail(f"FAIL trace ledger disagrees with its messages ({len(cost_report.mismatches)} events)")
        ctx.exit(EXIT_FAILURE)


def main() -> None:
    just_fix_windows_console()
    cli(obj={}, prog_name="gkm")


if __name__ == "__main__":
    main()
