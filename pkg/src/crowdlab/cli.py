"""Command-line front door: validate, run, report, simulate, serve, export."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .analysis import render_text, report_json
from .engine import RunRejected
from .model import WorkflowFormatError, load_units, load_workflow, validate_workflow
from .platforms.sim import PopulationProfile
from .runner import Toggles, report_for_run, run_simulation
from .store import Store


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_workflow(path: str):
    try:
        return load_workflow(Path(path).read_text())
    except (OSError, WorkflowFormatError) as exc:
        _fail(str(exc))


@click.group()
def main() -> None:
    """Controlled crowdsourcing experiment orchestrator."""


@main.command()
@click.argument("workflow_file")
@click.option("--units", "units_file", default=None, help="Units file to resolve bindings against.")
def validate(workflow_file: str, units_file: str | None) -> None:
    """Validate a workflow file; exits nonzero and lists every violation."""
    wf = _load_workflow(workflow_file)
    schema = None
    if units_file:
        units = load_units(Path(units_file).read_text())
        schema = set()
        for u in units:
            schema |= set(u.payload)
    result = validate_workflow(wf, schema)
    if result.ok:
        click.echo("ok")
        return
    for violation in result.violations:
        click.echo(violation, err=True)
    sys.exit(1)


def _run_options(fn):
    fn = click.option("--adapter", default="sim", show_default=True)(fn)
    fn = click.option("--profile", "profile_file", default=None, help="Population profile JSON (sim adapter).")(fn)
    fn = click.option("--seed", default=0, show_default=True, type=int)(fn)
    fn = click.option("--units", "units_file", required=True, help="Units JSON file.")(fn)
    fn = click.option("--horizon-hours", default=168.0, show_default=True, type=float)(fn)
    fn = click.option("--store", "store_path", default=":memory:", show_default=True)(fn)
    fn = click.option("--no-eligibility", is_flag=True, help="Disable eligibility control.")(fn)
    fn = click.option("--no-quotas", is_flag=True, help="Disable demographic quotas.")(fn)
    fn = click.option("--no-schedule", is_flag=True, help="Disable time-window gating.")(fn)
    fn = click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="json", show_default=True)(fn)
    fn = click.option("--report-out", default=None, help="Write the report to this path.")(fn)
    fn = click.option("--per-condition-z", is_flag=True, help="Standardize z-scores per condition before pooling.")(fn)
    return fn


def _execute_run(
    workflow_file: str,
    adapter: str,
    profile_file: str | None,
    seed: int,
    units_file: str,
    horizon_hours: float,
    store_path: str,
    no_eligibility: bool,
    no_quotas: bool,
    no_schedule: bool,
    fmt: str,
    report_out: str | None,
    per_condition_z: bool,
) -> None:
    wf = _load_workflow(workflow_file)
    try:
        units = load_units(Path(units_file).read_text())
    except (OSError, WorkflowFormatError, json.JSONDecodeError) as exc:
        _fail(f"units: {exc}")
    toggles = Toggles(
        eligibility=not no_eligibility, quotas=not no_quotas, schedule=not no_schedule
    )
    store = Store(store_path)
    if adapter != "sim":
        _fail(f"adapter {adapter!r} is not runnable from the CLI; use `crowdlab serve` for file runs")
    if profile_file:
        try:
            profile = PopulationProfile.from_json(Path(profile_file).read_text())
        except (OSError, ValueError) as exc:
            _fail(f"profile: {exc}")
    else:
        profile = PopulationProfile()
    profile.seed = seed if seed else profile.seed
    try:
        result = run_simulation(
            wf, profile, toggles, units=units, horizon_hours=horizon_hours, store=store
        )
    except RunRejected as exc:
        for violation in exc.violations:
            click.echo(violation, err=True)
        sys.exit(1)
    report = report_for_run(store, result.run_id, per_condition_z=per_condition_z)
    rendered = report_json(report) if fmt == "json" else render_text(report)
    if report_out:
        Path(report_out).write_text(rendered)
    click.echo(f"run: {result.run_id}", err=True)
    click.echo(
        f"workers: {result.workers_created}  judgments: {len(result.judgments)}  outcome: {result.outcome}",
        err=True,
    )
    click.echo(rendered)


@main.command()
@click.argument("workflow_file")
@_run_options
def run(**kwargs) -> None:
    """Execute a workflow against the simulated platform and print the report."""
    _execute_run(**kwargs)


@main.command()
@click.argument("workflow_file")
@_run_options
def simulate(**kwargs) -> None:
    """Alias of `run` with the simulated platform."""
    kwargs["adapter"] = "sim"
    _execute_run(**kwargs)


@main.command()
@click.argument("run_id")
@click.option("--store", "store_path", required=True)
@click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="json", show_default=True)
@click.option("--per-condition-z", is_flag=True, help="Standardize z-scores per condition before pooling.")
def report(run_id: str, store_path: str, fmt: str, per_condition_z: bool) -> None:
    """Print the bias report of a stored run."""
    store = Store(store_path)
    try:
        doc = report_for_run(store, run_id, per_condition_z=per_condition_z)
    except KeyError as exc:
        _fail(str(exc))
    click.echo(report_json(doc) if fmt == "json" else render_text(doc))


@main.command()
@click.argument("run_id")
@click.argument("archive")
@click.option("--store", "store_path", required=True)
def export(run_id: str, archive: str, store_path: str) -> None:
    """Export one run (workflow, units, judgments, audit) as a zip archive."""
    store = Store(store_path)
    try:
        store.export_run(run_id, archive)
    except Exception as exc:  # noqa: BLE001
        _fail(str(exc))
    click.echo(f"exported {run_id} -> {archive}")


@main.command()
@click.option("--port", default=8008, show_default=True, type=int, envvar="CROWDLAB_PORT")
@click.option(
    "--store", "store_path", default=":memory:", show_default=True, envvar="CROWDLAB_STORE"
)
@click.option("--data-dir", default=None, envvar="CROWDLAB_DATA_DIR")
@click.option(
    "--log-level",
    default="warning",
    show_default=True,
    envvar="CROWDLAB_LOG_LEVEL",
    type=click.Choice(["critical", "error", "warning", "info", "debug"]),
)
def serve(port: int, store_path: str, data_dir: str | None, log_level: str) -> None:
    """Start the HTTP service. Options also read CROWDLAB_* env vars."""
    from .service import serve as _serve

    _serve(port=port, store_path=store_path, data_dir=data_dir, log_level=log_level)


@main.command("init-demo")
@click.argument("directory", default=".")
def init_demo(directory: str) -> None:
    """Write a demo workflow, units, and population profile into DIRECTORY."""
    from .model import dump_units, dump_workflow
    from .workloads import screening_experiment, screening_units

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "workflow.json").write_text(dump_workflow(screening_experiment()))
    (out / "units.json").write_text(dump_units(screening_units()))
    (out / "profile.json").write_text(PopulationProfile().to_json())
    click.echo(f"wrote workflow.json, units.json, profile.json to {out}/")


if __name__ == "__main__":
    main()
