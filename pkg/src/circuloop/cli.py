"""Operator CLI.

Exit codes: 0 success, 1 domain error (message names the error code),
2 usage error. Read commands take ``--json`` for machine-readable output.
Configuration resolves flag > env var (CIRCULOOP_*) > config file > defaults.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Optional

import click

from .config import ServiceConfig, load_config
from .errors import CirculoopError
from .indicators import AuditLine, report_csv_from_dict
from .service import CirculoopService
from .workflow import Disposition, ListState


class Ctx:
    def __init__(self, config_file: Optional[Path], data_dir: Optional[Path]):
        self.config_file = config_file
        self.data_dir = data_dir
        self._service: Optional[CirculoopService] = None

    def service(self) -> CirculoopService:
        if self._service is None:
            overrides = {}
            if self.data_dir is not None:
                overrides["data_dir"] = str(self.data_dir)
            config = load_config(self.config_file, overrides=overrides)
            self._service = CirculoopService(config, durable=True)
        return self._service


def fail(err: CirculoopError) -> None:
    click.echo(f"error {err.code}: {err.message}", err=True)
    if err.details:
        click.echo(f"  details: {json.dumps(err.details, default=str)}", err=True)
    sys.exit(1)


@click.group()
@click.option("--config", "config_file", type=click.Path(path_type=Path),
              default=None, help="Flat key=value config file.")
@click.option("--data-dir", type=click.Path(path_type=Path), default=None,
              help="Override the data directory.")
@click.pass_context
def main(ctx: click.Context, config_file: Optional[Path], data_dir: Optional[Path]):
    """circuloop: event-sourced warehouse-to-event orchestration."""
    ctx.obj = Ctx(config_file, data_dir)


@main.command()
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.pass_obj
def serve(ctx: Ctx, host: Optional[str], port: Optional[int]):
    """Run the HTTP API."""
    import uvicorn

    from .api import create_app

    try:
        service = ctx.service()
    except CirculoopError as err:
        fail(err)
    app = create_app(service)
    uvicorn.run(
        app,
        host=host or service.config.listen_host,
        port=port or service.config.listen_port,
    )


@main.group(name="import")
def import_group():
    """Bulk CSV ingestion."""


@import_group.command(name="items")
@click.argument("csv_path", type=click.Path(exists=True, path_type=Path))
@click.option("--actor", default="admin", show_default=True)
@click.pass_obj
def import_items(ctx: Ctx, csv_path: Path, actor: str):
    """Bootstrap-import the item catalogue."""
    try:
        service = ctx.service()
        count = service.import_items_as(actor, csv_path.read_text(encoding="utf-8"))
        service.close()
    except CirculoopError as err:
        fail(err)
    click.echo(f"imported {count} items")


@import_group.command(name="materials")
@click.argument("csv_path", type=click.Path(exists=True, path_type=Path))
@click.pass_obj
def import_materials(ctx: Ctx, csv_path: Path):
    """Import or update the materials catalogue."""
    try:
        service = ctx.service()
        count = service.import_materials(csv_path.read_text(encoding="utf-8"))
        service.close()
    except CirculoopError as err:
        fail(err)
    click.echo(f"imported {count} materials")


@main.group(name="list")
def list_group():
    """Project list operations."""


def _parse_lines(values: tuple[str, ...], origin) -> list:
    from .workflow import LineRequest

    lines = []
    for value in values:
        label, _, qty = value.rpartition(":")
        if not label or not qty.isdigit():
            raise click.UsageError(f"expected LABEL:QTY, got {value!r}")
        lines.append(LineRequest(label, int(qty), origin))
    return lines


@list_group.command(name="create")
@click.option("--project", required=True)
@click.option("--client", "client_name", required=True)
@click.option("--line", "stock_lines", multiple=True,
              help="Stock line LABEL:QTY (repeatable).")
@click.option("--purchase-line", "purchase_lines", multiple=True,
              help="New-purchase line LABEL:QTY (repeatable).")
@click.option("--list-id", default=None)
@click.option("--actor", default="lead", show_default=True)
@click.pass_obj
def list_create(ctx: Ctx, project: str, client_name: str,
                stock_lines: tuple[str, ...], purchase_lines: tuple[str, ...],
                list_id: Optional[str], actor: str):
    """Create an outbound list from warehouse stock."""
    from .workflow import LineOrigin

    lines = _parse_lines(stock_lines, LineOrigin.FROM_STOCK) + _parse_lines(
        purchase_lines, LineOrigin.NEW_PURCHASE
    )
    try:
        service = ctx.service()
        user = service.resolve_actor(actor)
        plist = service.workflow.create_outbound(
            project, client_name, lines, user.actor_id, user.role, list_id=list_id
        )
        service.close()
    except CirculoopError as err:
        fail(err)
    click.echo(f"created {plist.list_id} (Draft, {len(plist.lines)} lines)")


@list_group.command(name="show")
@click.argument("list_id")
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def list_show(ctx: Ctx, list_id: str, as_json: bool):
    """Show a list document."""
    try:
        service = ctx.service()
        plist = service.workflow.get_list(list_id)
    except CirculoopError as err:
        fail(err)
    if as_json:
        click.echo(json.dumps(plist.to_dict(), indent=2))
        return
    click.echo(f"list {plist.list_id}: {plist.project_name} for {plist.client}")
    click.echo(f"  state: {plist.state.value}  high value: {plist.high_value}")
    for ln in plist.lines:
        click.echo(
            f"  line {ln.line_no}: {ln.item_label} requested {ln.quantity_requested}"
            f" dispatched {ln.quantity_dispatched} origin {ln.origin.value}"
        )
        for disposition, qty in sorted(ln.dispositions.items()):
            click.echo(f"    {disposition.value}: {qty}")


@list_group.command(name="transition")
@click.argument("list_id")
@click.argument("target")
@click.option("--actor", required=True)
@click.option("--dispatch", "dispatch", multiple=True,
              help="Partial dispatch LINE_NO:QTY (repeatable).")
@click.pass_obj
def list_transition(ctx: Ctx, list_id: str, target: str, actor: str,
                    dispatch: tuple[str, ...]):
    """Confirm the next milestone."""
    try:
        state = ListState(target)
    except ValueError:
        raise click.UsageError(f"unknown state {target!r}")
    quantities = {}
    for value in dispatch:
        line_no, _, qty = value.partition(":")
        if not line_no.isdigit() or not qty.isdigit():
            raise click.UsageError(f"expected LINE_NO:QTY, got {value!r}")
        quantities[int(line_no)] = int(qty)
    try:
        service = ctx.service()
        user = service.resolve_actor(actor)
        plist = service.workflow.transition(
            list_id, state, user.actor_id, user.role,
            dispatch_quantities=quantities or None,
        )
        service.close()
    except CirculoopError as err:
        fail(err)
    click.echo(f"{list_id} -> {plist.state.value}")


@list_group.command(name="dispose")
@click.argument("list_id")
@click.argument("line_no", type=int)
@click.argument("disposition")
@click.argument("quantity", type=int)
@click.option("--actor", default="admin", show_default=True)
@click.pass_obj
def list_dispose(ctx: Ctx, list_id: str, line_no: int, disposition: str,
                 quantity: int, actor: str):
    """Record an inbound disposition on a line."""
    try:
        kind = Disposition(disposition)
    except ValueError:
        raise click.UsageError(
            f"disposition must be one of {[d.value for d in Disposition]}"
        )
    try:
        service = ctx.service()
        user = service.resolve_actor(actor)
        line = service.workflow.set_disposition(
            list_id, line_no, kind, quantity, user.actor_id, user.role
        )
        service.close()
    except CirculoopError as err:
        fail(err)
    click.echo(
        f"line {line.line_no}: {kind.value} {quantity} "
        f"({line.undispositioned} undispositioned)"
    )


@list_group.command(name="reconcile")
@click.argument("list_id")
@click.option("--actor", default="admin", show_default=True)
@click.pass_obj
def list_reconcile(ctx: Ctx, list_id: str, actor: str):
    """Close the inbound list; stock updates immediately."""
    try:
        service = ctx.service()
        user = service.resolve_actor(actor)
        plist = service.workflow.reconcile(list_id, user.actor_id, user.role)
        service.close()
    except CirculoopError as err:
        fail(err)
    report = plist.frozen_report or {}
    click.echo(f"{list_id} reconciled; recovery rate "
               f"{report.get('recovery_rate')}")


@main.group(name="report")
def report_group():
    """Indicator reports."""


def _print_report(report: dict, as_json: bool, as_csv: bool) -> None:
    if as_json:
        click.echo(json.dumps(report, indent=2))
        return
    if as_csv:
        click.echo(report_csv_from_dict(report), nl=False)
        return
    click.echo(f"scope: {report['scope'].get('type')} {report['scope'].get('ref')}")
    click.echo(f"  dispatched: {report['dispatched_units']}")
    click.echo(f"  returned: {report['returned_units']}")
    click.echo(f"  consumed: {report['consumed_units']}")
    click.echo(f"  temporarily stored: {report['temp_stored_units']}")
    click.echo(f"  intended for reuse: {report['intended_for_reuse']}")
    click.echo(f"  recovery rate: {report['recovery_rate']}")
    click.echo(f"  reuse sourcing rate: {report['reuse_sourcing_rate']}")
    click.echo(f"  loss/damage rate: {report['loss_damage_rate']}")
    click.echo(f"  cycle time (h): {report['cycle_time_hours']}")
    click.echo(f"  carbon avoided (kg CO2e): {report['carbon_avoided_kg']}"
               f" [factors {report['carbon']['factor_source']}"
               f" v{report['carbon']['factor_version']}]")


@report_group.command(name="project")
@click.argument("list_id")
@click.option("--json", "as_json", is_flag=True)
@click.option("--csv", "as_csv", is_flag=True)
@click.pass_obj
def report_project(ctx: Ctx, list_id: str, as_json: bool, as_csv: bool):
    """Frozen report for a reconciled project list."""
    try:
        report = ctx.service().project_report(list_id)
    except CirculoopError as err:
        fail(err)
    _print_report(report, as_json, as_csv)


@report_group.command(name="period")
@click.argument("period_from")
@click.argument("period_to")
@click.option("--json", "as_json", is_flag=True)
@click.option("--csv", "as_csv", is_flag=True)
@click.pass_obj
def report_period(ctx: Ctx, period_from: str, period_to: str, as_json: bool,
                  as_csv: bool):
    """Aggregate report over lists reconciled in the window."""
    try:
        report = ctx.service().period_report(period_from, period_to).to_dict()
    except CirculoopError as err:
        fail(err)
    _print_report(report, as_json, as_csv)


@main.command()
@click.argument("csv_path", type=click.Path(exists=True, path_type=Path))
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def audit(ctx: Ctx, csv_path: Path, as_json: bool):
    """Compare counted stock (CSV: label,counted) against the ledger."""
    import csv as csv_module

    lines = []
    with open(csv_path, encoding="utf-8") as fh:
        reader = csv_module.DictReader(fh)
        if reader.fieldnames != ["label", "counted"]:
            raise click.UsageError("audit CSV needs header: label,counted")
        for row in reader:
            lines.append(AuditLine(row["label"], int(row["counted"])))
    try:
        service = ctx.service()
        result = service.record_audit(lines)
    except CirculoopError as err:
        fail(err)
    if as_json:
        click.echo(json.dumps(result.to_dict(), indent=2))
        return
    click.echo(f"inventory accuracy: {result.accuracy} "
               f"({result.matched}/{result.audited} lines match)")
    for d in result.discrepancies:
        click.echo(f"  {d['label']}: counted {d['counted']}, ledger {d['on_hand']}")


@main.command(name="replay-verify")
@click.pass_obj
def replay_verify(ctx: Ctx):
    """Re-fold the event log and verify it against the live snapshot."""
    try:
        result = ctx.service().replay_verify()
    except CirculoopError as err:
        fail(err)
    click.echo(f"snapshot verified ({result['events']} events, "
               f"{result['items']} items)")


@main.command(name="seed-demo")
@click.pass_obj
def seed_demo(ctx: Ctx):
    """Create the demo warehouse and run the canonical demo project."""
    from .fixtures import DEMO_LIST_ID, run_demo_journey

    try:
        service = ctx.service()
        plist = run_demo_journey(service)
        if not service.materials.all_materials():
            from .config import packaged_data

            service.import_materials(
                packaged_data("demo_materials.csv").read_text(encoding="utf-8")
            )
        service.close()
    except CirculoopError as err:
        fail(err)
    click.echo(f"seeded {DEMO_LIST_ID}: state {plist.state.value}, recovery rate "
               f"{(plist.frozen_report or {}).get('recovery_rate')}")


if __name__ == "__main__":
    main()
