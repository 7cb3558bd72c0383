"""Service wiring: ledger, warehouse, workflow, indicators, and materials
behind one object shared by the HTTP API and the CLI, so both surfaces drive
identical domain code.

Persistence layout under ``data_dir``:

    events.jsonl    append-only movement-event ledger (fsync'd per append)
    snapshot.json   periodic materialised snapshot of the ledger fold
    lists/<id>.json one document per project list (atomic replace)
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Optional

from .config import ServiceConfig
from .errors import ConfigError, CorruptLog, Forbidden, UnknownList
from .indicators import (
    AuditLine,
    AuditResult,
    EmissionFactorTable,
    IndicatorReport,
    IndicatorService,
)
from .inventory import Warehouse, utc_now
from .ledger import EventKind, EventLedger
from .materials import MaterialsLibrary
from .workflow import (
    ListState,
    PermissionMatrix,
    ProjectList,
    Role,
    WorkflowService,
    from_storage_doc,
    to_storage_doc,
)


@dataclass(slots=True)
class User:
    actor_id: str
    role: Role
    password: str


def load_users(path: Path) -> dict[str, User]:
    """Parse the seeded users file: ``actor_id,role,password`` per line."""
    users: dict[str, User] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ConfigError(
                f"users file line {line_no}: expected actor_id,role,password",
                line=line_no,
            )
        actor_id, role_name, password = parts
        try:
            role = Role(role_name)
        except ValueError:
            raise ConfigError(
                f"users file line {line_no}: unknown role {role_name!r}",
                line=line_no,
            ) from None
        if actor_id in users:
            raise ConfigError(
                f"users file line {line_no}: duplicate actor {actor_id!r}",
                line=line_no,
            )
        users[actor_id] = User(actor_id, role, password)
    return users


def _atomic_write(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(content)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class CirculoopService:
    """One deployable unit: warehouse + workflow + indicators + materials."""

    def __init__(
        self,
        config: Optional[ServiceConfig] = None,
        durable: bool = True,
        clock: Callable[[], datetime] = utc_now,
    ):
        self.config = config or ServiceConfig()
        self.config.validate()
        self.clock = clock
        self._durable = durable

        ledger_path = None
        if durable:
            self.data_dir = Path(self.config.data_dir)
            self.data_dir.mkdir(parents=True, exist_ok=True)
            ledger_path = self.data_dir / "events.jsonl"
        else:
            self.data_dir = None

        self.ledger = EventLedger(ledger_path)
        self.warehouse = Warehouse(self.ledger, clock=clock)
        self.matrix = PermissionMatrix.from_file(self.config.permission_matrix_file)
        self.factors = EmissionFactorTable.from_file(self.config.factor_table_file)
        self.users = load_users(self.config.users_file)
        self.indicators = IndicatorService(self.warehouse, self.factors)
        self.materials = MaterialsLibrary(self.config.scoring)
        self.workflow = WorkflowService(
            self.warehouse,
            self.matrix,
            high_value_threshold=self.config.high_value_threshold,
            clock=clock,
            on_change=self._persist_list if durable else None,
            report_builder=self._build_frozen_report,
        )
        self._events_at_snapshot = 0
        if durable:
            self._restore_lists()
            self._restore_materials()
            self._restore_audit()

    # -- persistence -------------------------------------------------------

    def _lists_dir(self) -> Path:
        assert self.data_dir is not None
        return self.data_dir / "lists"

    def _persist_list(self, plist: ProjectList) -> None:
        doc = to_storage_doc(plist)
        _atomic_write(
            self._lists_dir() / f"{plist.list_id}.json",
            json.dumps(doc, indent=2, sort_keys=False),
        )
        self._maybe_snapshot()

    def _restore_lists(self) -> None:
        lists_dir = self._lists_dir()
        if not lists_dir.exists():
            return
        for path in sorted(lists_dir.glob("*.json")):
            doc = json.loads(path.read_text(encoding="utf-8"))
            self.workflow.restore(from_storage_doc(doc))

    def _materials_path(self) -> Path:
        assert self.data_dir is not None
        return self.data_dir / "materials.csv"

    def _restore_materials(self) -> None:
        path = self._materials_path()
        if path.exists():
            self.materials.import_csv(path.read_text(encoding="utf-8"))

    def import_materials(self, csv_text: str) -> int:
        count = self.materials.import_csv(csv_text)
        if self.data_dir is not None:
            _atomic_write(self._materials_path(), self.materials.export_csv())
        return count

    def _audit_path(self) -> Path:
        assert self.data_dir is not None
        return self.data_dir / "audit.json"

    def _restore_audit(self) -> None:
        path = self._audit_path()
        if path.exists():
            raw = json.loads(path.read_text(encoding="utf-8"))
            self.indicators.latest_audit = AuditResult(
                accuracy=raw["accuracy"],
                audited=raw["audited"],
                matched=raw["matched"],
                discrepancies=raw["discrepancies"],
            )

    def _maybe_snapshot(self) -> None:
        if self.data_dir is None:
            return
        if len(self.ledger) - self._events_at_snapshot >= self.config.snapshot_interval:
            self.write_snapshot()

    def write_snapshot(self) -> Path:
        assert self.data_dir is not None
        snap = self.warehouse.snapshot()
        path = self.data_dir / "snapshot.json"
        _atomic_write(path, snap.to_json())
        self._events_at_snapshot = len(self.ledger)
        return path

    def replay_verify(self) -> dict[str, Any]:
        """Re-fold the on-disk ledger and check it against the live state and,
        when present, the last persisted snapshot. Raises CorruptLog on a gap.
        """
        from .inventory import replay

        events = self.ledger.events()
        folded = replay(events)
        live = self.warehouse.snapshot()
        if folded.to_json() != live.to_json():
            raise CorruptLog(
                "ledger fold does not match the live snapshot",
                as_of=folded.as_of,
            )
        result: dict[str, Any] = {
            "events": len(events),
            "items": len(folded.tallies),
            "matches_live": True,
            "snapshot_file": None,
        }
        if self.data_dir is not None:
            snap_path = self.data_dir / "snapshot.json"
            if snap_path.exists():
                stored = json.loads(snap_path.read_text(encoding="utf-8"))
                as_of = stored.get("as_of", 0)
                prefix_fold = replay(events[:as_of])
                if prefix_fold.to_dict() != stored:
                    raise CorruptLog(
                        f"stored snapshot (as_of={as_of}) does not match the "
                        f"ledger fold",
                        as_of=as_of,
                    )
                result["snapshot_file"] = str(snap_path)
        return result

    def close(self) -> None:
        if self.data_dir is not None:
            self.write_snapshot()
        self.ledger.close()

    # -- auth helpers --------------------------------------------------------

    def authenticate(self, actor_id: str, password: str) -> User:
        user = self.users.get(actor_id)
        if user is None or user.password != password:
            from .errors import Unauthenticated

            raise Unauthenticated("unknown actor or wrong password")
        return user

    def resolve_actor(self, actor_id: str) -> User:
        user = self.users.get(actor_id)
        if user is None:
            raise Forbidden(f"unknown actor {actor_id!r}", actor_id=actor_id)
        return user

    def require_event_permission(self, kind: EventKind, role: Role) -> None:
        if not self.matrix.allows_event(kind, role):
            raise Forbidden(
                f"role {role.value} may not append {kind.value} events",
                role=role.value,
                kind=kind.value,
            )

    # -- authorised inventory operations (shared by API and CLI) ------------

    def register_item_as(self, actor_id: str, draft) -> Any:
        user = self.resolve_actor(actor_id)
        self.require_event_permission(EventKind.REGISTER, user.role)
        return self.warehouse.register_item(draft, actor_id)

    def import_items_as(self, actor_id: str, csv_text: str) -> int:
        user = self.resolve_actor(actor_id)
        self.require_event_permission(EventKind.REGISTER, user.role)
        count = self.warehouse.import_items_csv(csv_text, actor_id)
        self._maybe_snapshot()
        return count

    def update_metadata_as(
        self,
        actor_id: str,
        label: str,
        patch: dict[str, Any],
        expected_version: Optional[int] = None,
    ) -> Any:
        user = self.resolve_actor(actor_id)
        self.require_event_permission(EventKind.UPDATE_METADATA, user.role)
        return self.warehouse.update_metadata(
            label, patch, actor_id, expected_version=expected_version
        )

    def apply_event_as(
        self,
        actor_id: str,
        kind: EventKind,
        item_label: str,
        quantity: int,
        list_ref: Optional[str] = None,
        note: Optional[str] = None,
        expected_version: Optional[int] = None,
    ) -> Any:
        user = self.resolve_actor(actor_id)
        self.require_event_permission(kind, user.role)
        result = self.warehouse.apply_event(
            kind, item_label, quantity, actor_id,
            list_ref=list_ref, note=note, expected_version=expected_version,
        )
        self._maybe_snapshot()
        return result

    def link_material_as(
        self, actor_id: str, list_id: str, material_id: str, note: str = ""
    ) -> Any:
        user = self.resolve_actor(actor_id)
        self.materials.get(material_id)  # raises UnknownMaterial
        return self.workflow.link_material(
            list_id, material_id, note, actor_id, user.role
        )

    # -- reports ---------------------------------------------------------

    def _build_frozen_report(self, plist: ProjectList) -> dict[str, Any]:
        reconciled = {
            p.list_id
            for p in self.workflow.lists()
            if p.state is ListState.RECONCILED
        } | {plist.list_id}
        return self.indicators.project_report(plist, reconciled).to_dict()

    def project_report(self, list_id: str) -> dict[str, Any]:
        plist = self.workflow.get_list(list_id)
        if plist.frozen_report is not None:
            return plist.frozen_report
        from .errors import NotReconciled

        raise NotReconciled(
            f"list {list_id!r} has no frozen report yet; state is "
            f"{plist.state.value}",
            list_id=list_id,
        )

    def period_report(self, period_from: str, period_to: str) -> IndicatorReport:
        return self.indicators.period_report(
            self.workflow.lists(), period_from, period_to
        )

    def record_audit(self, audit: list[AuditLine]) -> AuditResult:
        result = self.indicators.record_audit(audit)
        if self.data_dir is not None:
            _atomic_write(
                self._audit_path(), json.dumps(result.to_dict(), indent=2)
            )
        return result
