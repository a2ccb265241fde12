"""
Command line entry points.

    caremesh run --scenario FILE [--syntactic-only] [--hop-limit N] [--lenient]
                 [--allow-narrower] --log OUT --metrics OUT
    caremesh gen --seed N --out FILE
    caremesh validate --scenario FILE
    caremesh export --scenario FILE --cc ID --out FILE [--format json|csv]
    caremeshd --config FILE [--listen HOST:PORT]

Exit codes: 0 success, 1 scenario validation failure, 2 runtime error.
"""
import json
import sys
from typing import Optional, Tuple

import click

from caremesh import __version__
from caremesh.config.config import Config, load_daemon_config
from caremesh.errors import CaremeshError, ScenarioError
from caremesh.harness.generator import generate_scenario, write_scenario
from caremesh.harness.runner import RunOptions, run_scenario
from caremesh.harness.scenario import load_scenario
from caremesh.models.registry import TaxonomyTable, load_registry, load_taxonomy_table
from caremesh.utilities.export import EXPORT_FORMATS, export_registry
from caremesh.utilities.helpers import canonical_json
from caremesh.utilities.logger import error, info, log_exception

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _fail(e: Exception) -> None:
    """Report e and exit with the code its kind maps to."""
    if isinstance(e, ScenarioError):
        error(f"Validation failed: {e}")
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_VALIDATION)
    if isinstance(e, (CaremeshError, OSError)):
        error(f"Run failed: {type(e).__name__}: {e}")
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_RUNTIME)
    raise e


@click.group()
@click.version_option(__version__, prog_name="caremesh")
def cli():
    """Semantic service discovery and scheduling for care coordination centers."""


@cli.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(dir_okay=False),
              help="Scenario file to run")
@click.option("--syntactic-only", is_flag=True, help="Match on exact concept equality only")
@click.option("--hop-limit", type=click.IntRange(min=0), default=Config.HOP_LIMIT, show_default=True,
              help="Federation forwarding budget per request")
@click.option("--lenient", is_flag=True, default=Config.LENIENT_FORMAT,
              help="Ignore unknown raw fields instead of rejecting them")
@click.option("--allow-narrower", is_flag=True, default=Config.ALLOW_NARROWER,
              help="Admit offers narrower than the requested concept")
@click.option("--log", "log_path", required=True, type=click.Path(dir_okay=False), help="Event log output")
@click.option("--metrics", "metrics_path", required=True, type=click.Path(dir_okay=False),
              help="Metrics output")
def run(scenario_path, syntactic_only, hop_limit, lenient, allow_narrower, log_path, metrics_path):
    """Run a scenario and write its event log and metrics."""
    options = RunOptions(syntactic_only=syntactic_only, hop_limit=hop_limit, lenient=lenient,
                         allow_narrower=allow_narrower)
    try:
        scenario = load_scenario(scenario_path)
        report = run_scenario(scenario, options)
        report.event_log.write(log_path)
        with open(metrics_path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(canonical_json(report.metrics) + "\n")
    except (CaremeshError, OSError) as e:
        _fail(e)
    info(f"Wrote {len(report.event_log)} log entries to {log_path}")
    click.echo(json.dumps(report.metrics, sort_keys=True))


@cli.command()
@click.option("--seed", required=True, type=int, help="Random seed; the only source of randomness")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Scenario output")
def gen(seed, out_path):
    """Generate a random, valid scenario."""
    try:
        write_scenario(generate_scenario(seed), out_path)
    except OSError as e:
        _fail(e)
    click.echo(out_path)


@cli.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(dir_okay=False),
              help="Scenario file to check")
def validate(scenario_path):
    """Check a scenario file without running it."""
    try:
        scenario = load_scenario(scenario_path)
    except CaremeshError as e:
        _fail(e)
    click.echo(f"ok: {scenario.name} ({len(scenario.ccs)} CCs, {len(scenario.events)} events)")


@cli.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(dir_okay=False),
              help="Scenario whose end state is exported")
@click.option("--cc", "cc_id", required=True, help="Coordination center to export")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Output file")
@click.option("--format", "format_type", type=click.Choice(EXPORT_FORMATS), default="json", show_default=True)
def export(scenario_path, cc_id, out_path, format_type):
    """Run a scenario and export one CC's registry as taxonomy records."""
    try:
        scenario = load_scenario(scenario_path)
        report = run_scenario(scenario)
    except CaremeshError as e:
        _fail(e)

    registries = report.registries()
    if cc_id not in registries:
        click.echo(f"error: no coordination center {cc_id!r} in {scenario_path}", err=True)
        sys.exit(EXIT_RUNTIME)
    table = scenario.taxonomy or TaxonomyTable({})
    result = export_registry(registries[cc_id], table, out_path, format_type)
    if not result["success"]:
        click.echo(f"error: {result['message']}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(f"{result['message']}: {result['count']} records -> {out_path}")


#######################################################################
# DAEMON
#######################################################################

def _parse_listen(value: Optional[str]) -> Tuple[str, int]:
    if not value:
        return Config.DAEMON_HOST, Config.DAEMON_PORT
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit():
        raise click.BadParameter("expected HOST:PORT", param_hint="--listen")
    return host or Config.DAEMON_HOST, int(port)


def build_coordination_center(config):
    """CoordinationCenter for a daemon configuration, linked over HTTP."""
    from caremesh.models.knowledge_base import load_knowledge_base
    from caremesh.services.federation import CoordinationCenter, HttpTransport

    kb = load_knowledge_base(config.ontology)
    registry = load_registry(config.registry_dump, config.cc_id) if config.registry_dump else None
    links = list(config.directory) + ([config.parent] if config.parent else []) + list(config.peers)
    transport = HttpTransport({link.cc_id: link.url for link in links})
    cc = CoordinationCenter(config.cc_id, config.level, kb,
                            parent=config.parent.cc_id if config.parent else None,
                            peers=[p.cc_id for p in config.peers],
                            registry=registry, lenient=Config.LENIENT_FORMAT, transport=transport)
    cc.validate()
    return cc


@click.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
              help="Daemon configuration file")
@click.option("--listen", default=None, help="HOST:PORT to serve on")
def daemon_main(config_path, listen):
    """Serve one coordination center over HTTP."""
    from caremesh import create_app, start_server

    host, port = _parse_listen(listen)
    try:
        config = load_daemon_config(config_path)
    except (ValueError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_VALIDATION)

    try:
        cc = build_coordination_center(config)
        taxonomy = load_taxonomy_table(config.taxonomy) if config.taxonomy else None
        app = create_app(cc, hop_limit=config.hop_limit, taxonomy=taxonomy)
    except (CaremeshError, OSError) as e:
        log_exception(e, "daemon")
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_RUNTIME)
    start_server(app, host, port)
