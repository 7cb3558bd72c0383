"""Project logistics workflow.

An outbound list moves through a linear chain of milestones, becomes the
inbound list at event end, and closes with reconciliation. Every milestone is
role-gated by the permission matrix (default deny) and fires its inventory
events exactly once; retried requests are deduplicated by idempotency key.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Optional

from .errors import (
    ConfigError,
    EmptyList,
    Forbidden,
    IllegalState,
    IllegalTransition,
    IncompleteDispositions,
    InsufficientStock,
    InvalidQuantity,
    LinesFrozen,
    OverDisposition,
    PreconditionFailed,
    UnknownItem,
    UnknownList,
    ValidationError,
)
from .inventory import Warehouse, format_timestamp, utc_now
from .ledger import EventKind


class Role(str, Enum):
    PROJECT_LEAD = "ProjectLead"
    WAREHOUSE_ADMINISTRATOR = "WarehouseAdministrator"
    DESIGNER = "Designer"
    PROCUREMENT = "Procurement"
    FINANCE_REVIEWER = "FinanceReviewer"
    SUSTAINABILITY_LEAD = "SustainabilityLead"


class ListState(str, Enum):
    DRAFT = "Draft"
    SUBMITTED = "Submitted"
    APPROVED = "Approved"
    PICKING = "Picking"
    PACKED = "Packed"
    DISPATCHED = "Dispatched"
    RECEIVED_ON_SITE = "ReceivedOnSite"
    EVENT_ENDED = "EventEnded"
    INBOUND_OPEN = "InboundOpen"
    RECONCILED = "Reconciled"
    REJECTED = "Rejected"


# The only legal edges: the linear chain plus the terminal rejection branch.
EDGES: tuple[tuple[ListState, ListState], ...] = (
    (ListState.DRAFT, ListState.SUBMITTED),
    (ListState.SUBMITTED, ListState.APPROVED),
    (ListState.SUBMITTED, ListState.REJECTED),
    (ListState.APPROVED, ListState.PICKING),
    (ListState.PICKING, ListState.PACKED),
    (ListState.PACKED, ListState.DISPATCHED),
    (ListState.DISPATCHED, ListState.RECEIVED_ON_SITE),
    (ListState.RECEIVED_ON_SITE, ListState.EVENT_ENDED),
    (ListState.EVENT_ENDED, ListState.INBOUND_OPEN),
    (ListState.INBOUND_OPEN, ListState.RECONCILED),
)

TERMINAL_STATES = frozenset({ListState.RECONCILED, ListState.REJECTED})

# States in which lines may still be edited/substituted.
MUTABLE_STATES = frozenset({ListState.DRAFT, ListState.SUBMITTED})

# The designated next actor notified for each pending milestone (one open
# notification per list per pending milestone, a single recipient role each).
NEXT_ACTION: dict[ListState, tuple[ListState, Role]] = {
    ListState.DRAFT: (ListState.SUBMITTED, Role.PROJECT_LEAD),
    ListState.SUBMITTED: (ListState.APPROVED, Role.PROJECT_LEAD),
    ListState.APPROVED: (ListState.PICKING, Role.WAREHOUSE_ADMINISTRATOR),
    ListState.PICKING: (ListState.PACKED, Role.WAREHOUSE_ADMINISTRATOR),
    ListState.PACKED: (ListState.DISPATCHED, Role.WAREHOUSE_ADMINISTRATOR),
    ListState.DISPATCHED: (ListState.RECEIVED_ON_SITE, Role.PROJECT_LEAD),
    ListState.RECEIVED_ON_SITE: (ListState.EVENT_ENDED, Role.PROJECT_LEAD),
    ListState.EVENT_ENDED: (ListState.INBOUND_OPEN, Role.WAREHOUSE_ADMINISTRATOR),
    ListState.INBOUND_OPEN: (ListState.RECONCILED, Role.WAREHOUSE_ADMINISTRATOR),
}


class Disposition(str, Enum):
    RETURNED_RESTOCKED = "ReturnedRestocked"
    CONSUMED_OR_DAMAGED = "ConsumedOrDamaged"
    TEMPORARILY_STORED = "TemporarilyStored"


DISPOSITION_EVENT: dict[Disposition, EventKind] = {
    Disposition.RETURNED_RESTOCKED: EventKind.RETURN_RESTOCK,
    Disposition.CONSUMED_OR_DAMAGED: EventKind.MARK_CONSUMED_OR_DAMAGED,
    Disposition.TEMPORARILY_STORED: EventKind.TEMP_STORE,
}

DISPOSITION_ROLES = frozenset({Role.WAREHOUSE_ADMINISTRATOR, Role.PROJECT_LEAD})
SUBSTITUTION_ROLES = frozenset({Role.PROJECT_LEAD, Role.DESIGNER, Role.PROCUREMENT})


class LineOrigin(str, Enum):
    FROM_STOCK = "FromStock"
    SUBSTITUTED_FROM_STOCK = "SubstitutedFromStock"
    NEW_PURCHASE = "NewPurchase"


STOCK_ORIGINS = frozenset({LineOrigin.FROM_STOCK, LineOrigin.SUBSTITUTED_FROM_STOCK})


@dataclass(slots=True)
class ListLine:
    line_no: int
    item_label: str
    quantity_requested: int
    origin: LineOrigin = LineOrigin.FROM_STOCK
    quantity_dispatched: int = 0
    dispositions: dict[Disposition, int] = field(default_factory=dict)

    @property
    def dispositioned(self) -> int:
        return sum(self.dispositions.values())

    @property
    def undispositioned(self) -> int:
        return self.quantity_dispatched - self.dispositioned

    def to_dict(self) -> dict[str, Any]:
        return {
            "line_no": self.line_no,
            "item_label": self.item_label,
            "quantity_requested": self.quantity_requested,
            "origin": self.origin.value,
            "quantity_dispatched": self.quantity_dispatched,
            "dispositions": {d.value: q for d, q in sorted(self.dispositions.items())},
        }


@dataclass(slots=True)
class Milestone:
    milestone: ListState
    actor_role: Role
    actor_id: str
    timestamp: str
    idempotency_key: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "milestone": self.milestone.value,
            "actor_role": self.actor_role.value,
            "actor_id": self.actor_id,
            "timestamp": self.timestamp,
        }


@dataclass(slots=True)
class Notification:
    notification_id: str
    recipient_role: Role
    list_id: str
    required_action: ListState
    created: str
    acknowledged: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "notification_id": self.notification_id,
            "recipient_role": self.recipient_role.value,
            "list_id": self.list_id,
            "required_action": self.required_action.value,
            "created": self.created,
            "acknowledged": self.acknowledged,
        }


@dataclass(slots=True)
class MaterialLink:
    material_id: str
    note: str
    linked_by: str
    timestamp: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "material_id": self.material_id,
            "note": self.note,
            "linked_by": self.linked_by,
            "timestamp": self.timestamp,
        }


@dataclass
class ProjectList:
    """An outbound list that becomes the inbound list when the event ends."""

    list_id: str
    project_name: str
    client: str
    created_by: str
    created_at: str
    state: ListState = ListState.DRAFT
    lines: list[ListLine] = field(default_factory=list)
    milestones: list[Milestone] = field(default_factory=list)
    high_value: bool = False
    reconciled_at: Optional[str] = None
    notifications: list[Notification] = field(default_factory=list)
    material_links: list[MaterialLink] = field(default_factory=list)
    frozen_report: Optional[dict[str, Any]] = None
    disposition_keys: dict[str, int] = field(default_factory=dict)

    def line(self, line_no: int) -> ListLine:
        for ln in self.lines:
            if ln.line_no == line_no:
                return ln
        raise ValidationError(
            f"list {self.list_id!r} has no line {line_no}", line_no=line_no
        )

    def has_milestone(self, state: ListState) -> bool:
        return any(m.milestone is state for m in self.milestones)

    def open_notification(self) -> Optional[Notification]:
        for n in self.notifications:
            if not n.acknowledged:
                return n
        return None

    def refuse_count(self) -> int:
        return sum(
            1 for ln in self.lines if ln.origin is LineOrigin.SUBSTITUTED_FROM_STOCK
        )

    def to_dict(self) -> dict[str, Any]:
        """Export document; stable field names, schema version 1."""
        return {
            "schema": 1,
            "list_id": self.list_id,
            "project_name": self.project_name,
            "client": self.client,
            "created_by": self.created_by,
            "created_at": self.created_at,
            "state": self.state.value,
            "high_value": self.high_value,
            "reconciled_at": self.reconciled_at,
            "lines": [ln.to_dict() for ln in self.lines],
            "milestones": [m.to_dict() for m in self.milestones],
            "material_links": [ml.to_dict() for ml in self.material_links],
            "notifications": [n.to_dict() for n in self.notifications],
            "frozen_report": self.frozen_report,
        }


def to_storage_doc(plist: ProjectList) -> dict[str, Any]:
    """Persistence form: the export document plus idempotency bookkeeping."""
    doc = plist.to_dict()
    doc["_idempotency"] = {
        "dispositions": dict(plist.disposition_keys),
        "milestones": [m.idempotency_key for m in plist.milestones],
    }
    return doc


def from_storage_doc(doc: dict[str, Any]) -> ProjectList:
    plist = ProjectList(
        list_id=doc["list_id"],
        project_name=doc["project_name"],
        client=doc["client"],
        created_by=doc["created_by"],
        created_at=doc["created_at"],
        state=ListState(doc["state"]),
        high_value=bool(doc["high_value"]),
        reconciled_at=doc.get("reconciled_at"),
        frozen_report=doc.get("frozen_report"),
    )
    plist.lines = [
        ListLine(
            line_no=raw["line_no"],
            item_label=raw["item_label"],
            quantity_requested=raw["quantity_requested"],
            origin=LineOrigin(raw["origin"]),
            quantity_dispatched=raw["quantity_dispatched"],
            dispositions={
                Disposition(d): q for d, q in raw.get("dispositions", {}).items()
            },
        )
        for raw in doc["lines"]
    ]
    idem = doc.get("_idempotency", {})
    keys = idem.get("milestones", [None] * len(doc["milestones"]))
    plist.milestones = [
        Milestone(
            milestone=ListState(raw["milestone"]),
            actor_role=Role(raw["actor_role"]),
            actor_id=raw["actor_id"],
            timestamp=raw["timestamp"],
            idempotency_key=keys[i] if i < len(keys) else None,
        )
        for i, raw in enumerate(doc["milestones"])
    ]
    plist.material_links = [
        MaterialLink(
            material_id=raw["material_id"],
            note=raw["note"],
            linked_by=raw["linked_by"],
            timestamp=raw["timestamp"],
        )
        for raw in doc.get("material_links", [])
    ]
    plist.notifications = [
        Notification(
            notification_id=raw["notification_id"],
            recipient_role=Role(raw["recipient_role"]),
            list_id=raw["list_id"],
            required_action=ListState(raw["required_action"]),
            created=raw["created"],
            acknowledged=bool(raw["acknowledged"]),
        )
        for raw in doc.get("notifications", [])
    ]
    plist.disposition_keys = dict(idem.get("dispositions", {}))
    return plist


class PermissionMatrix:
    """(transition, role) -> allowed, plus event-kind permissions. Default deny."""

    def __init__(
        self,
        transitions: dict[tuple[ListState, ListState], frozenset[Role]],
        event_kinds: dict[EventKind, frozenset[Role]],
    ):
        self.transitions = transitions
        self.event_kinds = event_kinds

    def allows_transition(self, source: ListState, target: ListState, role: Role) -> bool:
        return role in self.transitions.get((source, target), frozenset())

    def allows_event(self, kind: EventKind, role: Role) -> bool:
        return role in self.event_kinds.get(kind, frozenset())

    @classmethod
    def from_text(cls, text: str) -> "PermissionMatrix":
        """Parse the matrix config: ``From->To = Role, Role`` per line; lines
        prefixed ``event:`` grant direct movement-event permissions. Unknown
        roles or states abort with the first violation.
        """
        transitions: dict[tuple[ListState, ListState], frozenset[Role]] = {}
        event_kinds: dict[EventKind, frozenset[Role]] = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(
                    f"permission matrix line {line_no}: expected 'key = roles'",
                    line=line_no,
                )
            key, _, roles_str = line.partition("=")
            key = key.strip()
            roles: set[Role] = set()
            for name in roles_str.split(","):
                name = name.strip()
                if not name:
                    continue
                try:
                    roles.add(Role(name))
                except ValueError:
                    raise ConfigError(
                        f"permission matrix line {line_no}: unknown role {name!r}",
                        line=line_no,
                    ) from None
            if key.startswith("event:"):
                kind_name = key[len("event:") :].strip()
                try:
                    kind = EventKind(kind_name)
                except ValueError:
                    raise ConfigError(
                        f"permission matrix line {line_no}: unknown event kind "
                        f"{kind_name!r}",
                        line=line_no,
                    ) from None
                event_kinds[kind] = frozenset(roles)
            else:
                if "->" not in key:
                    raise ConfigError(
                        f"permission matrix line {line_no}: expected "
                        f"'StateFrom->StateTo'",
                        line=line_no,
                    )
                from_name, _, to_name = key.partition("->")
                try:
                    source = ListState(from_name.strip())
                    target = ListState(to_name.strip())
                except ValueError as exc:
                    raise ConfigError(
                        f"permission matrix line {line_no}: unknown state: {exc}",
                        line=line_no,
                    ) from None
                if (source, target) not in EDGES:
                    raise ConfigError(
                        f"permission matrix line {line_no}: "
                        f"{source.value}->{target.value} is not a declared edge",
                        line=line_no,
                    )
                transitions[(source, target)] = frozenset(roles)
        return cls(transitions, event_kinds)

    @classmethod
    def from_file(cls, path: Path) -> "PermissionMatrix":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


@dataclass(slots=True)
class LineRequest:
    item_label: str
    quantity: int
    origin: LineOrigin = LineOrigin.FROM_STOCK


class WorkflowService:
    """Drives project lists against a warehouse, enforcing the matrix."""

    def __init__(
        self,
        warehouse: Warehouse,
        matrix: PermissionMatrix,
        high_value_threshold: float = 50.0,
        clock: Callable[[], datetime] = utc_now,
        on_change: Optional[Callable[["ProjectList"], None]] = None,
        report_builder: Optional[Callable[[ProjectList], dict[str, Any]]] = None,
    ):
        self.warehouse = warehouse
        self.matrix = matrix
        self.high_value_threshold = high_value_threshold
        self.clock = clock
        self._lists: dict[str, ProjectList] = {}
        self._lock = threading.RLock()
        self._on_change = on_change
        # Assigned by the service shell once indicators are wired up; computes
        # the report frozen onto a list at reconciliation.
        self.report_builder = report_builder

    # -- helpers ---------------------------------------------------------

    def _now(self) -> str:
        return format_timestamp(self.clock())

    def _notify(self, plist: ProjectList) -> None:
        """Close the open notification and emit one for the next milestone."""
        current = plist.open_notification()
        if current is not None:
            current.acknowledged = True
        action = NEXT_ACTION.get(plist.state)
        if action is None:
            return
        target, recipient = action
        if target is ListState.APPROVED and plist.high_value:
            recipient = Role.FINANCE_REVIEWER
        plist.notifications.append(
            Notification(
                notification_id=uuid.uuid4().hex,
                recipient_role=recipient,
                list_id=plist.list_id,
                required_action=target,
                created=self._now(),
            )
        )

    def _changed(self, plist: ProjectList) -> None:
        if self._on_change is not None:
            self._on_change(plist)

    def _recompute_high_value(self, plist: ProjectList) -> None:
        flagged = False
        for ln in plist.lines:
            item = self.warehouse.get_item(ln.item_label)
            if item.embodied_carbon_per_unit >= self.high_value_threshold:
                flagged = True
                break
        plist.high_value = flagged

    def get_list(self, list_id: str) -> ProjectList:
        plist = self._lists.get(list_id)
        if plist is None:
            raise UnknownList(f"unknown list {list_id!r}", list_id=list_id)
        return plist

    def lists(self) -> list[ProjectList]:
        with self._lock:
            return sorted(self._lists.values(), key=lambda p: p.created_at)

    def restore(self, plist: ProjectList) -> None:
        """Re-attach a persisted list document (service restart path)."""
        with self._lock:
            self._lists[plist.list_id] = plist

    # -- operations --------------------------------------------------------

    def create_outbound(
        self,
        project_name: str,
        client: str,
        lines: list[LineRequest],
        actor_id: str,
        role: Role,
        list_id: Optional[str] = None,
    ) -> ProjectList:
        if role is not Role.PROJECT_LEAD:
            raise Forbidden(
                f"role {role.value} may not create outbound lists", role=role.value
            )
        if not lines:
            raise EmptyList("an outbound list needs at least one line")
        with self._lock:
            list_id = list_id or f"pl-{uuid.uuid4().hex[:12]}"
            if list_id in self._lists:
                raise ValidationError(f"list id {list_id!r} already exists")
            built: list[ListLine] = []
            for idx, req in enumerate(lines, start=1):
                if not self.warehouse.has_item(req.item_label):
                    raise UnknownItem(
                        f"line {idx}: unknown item {req.item_label!r}",
                        label=req.item_label,
                        line_no=idx,
                    )
                if req.quantity <= 0:
                    raise InvalidQuantity(
                        f"line {idx}: quantity must be positive", line_no=idx
                    )
                if req.origin in STOCK_ORIGINS:
                    available = self.warehouse.available_units(req.item_label)
                    if req.quantity > available:
                        raise InsufficientStock(
                            f"line {idx}: requested {req.quantity} of "
                            f"{req.item_label!r} but only {available} available",
                            line_no=idx,
                            label=req.item_label,
                            available=available,
                        )
                built.append(
                    ListLine(
                        line_no=idx,
                        item_label=req.item_label,
                        quantity_requested=req.quantity,
                        origin=req.origin,
                    )
                )
            now = self._now()
            plist = ProjectList(
                list_id=list_id,
                project_name=project_name,
                client=client,
                created_by=actor_id,
                created_at=now,
            )
            plist.lines = built
            plist.milestones.append(
                Milestone(ListState.DRAFT, role, actor_id, now)
            )
            self._recompute_high_value(plist)
            self._lists[list_id] = plist
            self._notify(plist)
            self._changed(plist)
            return plist

    def transition(
        self,
        list_id: str,
        target: ListState,
        actor_id: str,
        role: Role,
        dispatch_quantities: Optional[dict[int, int]] = None,
        idempotency_key: Optional[str] = None,
    ) -> ProjectList:
        """Advance the list one milestone, firing inventory side effects once.

        A retried request (same idempotency key) returns the committed state
        without firing anything again.
        """
        with self._lock:
            plist = self.get_list(list_id)
            for past in plist.milestones:
                if past.milestone is target:
                    if (
                        idempotency_key is not None
                        and past.idempotency_key == idempotency_key
                    ):
                        return plist
                    raise IllegalTransition(
                        f"list {list_id!r} already passed milestone {target.value}",
                        list_id=list_id,
                        state=plist.state.value,
                    )
            if (plist.state, target) not in EDGES:
                raise IllegalTransition(
                    f"no edge {plist.state.value} -> {target.value}",
                    list_id=list_id,
                    state=plist.state.value,
                    target=target.value,
                )
            if not self.matrix.allows_transition(plist.state, target, role):
                raise Forbidden(
                    f"role {role.value} may not confirm "
                    f"{plist.state.value} -> {target.value}",
                    role=role.value,
                    transition=f"{plist.state.value}->{target.value}",
                )
            if target is ListState.APPROVED and plist.high_value:
                if role is not Role.FINANCE_REVIEWER:
                    raise Forbidden(
                        "high-value lists require FinanceReviewer approval",
                        role=role.value,
                        transition="Submitted->Approved",
                    )
            if target is ListState.RECONCILED:
                short = [
                    {"line_no": ln.line_no, "item_label": ln.item_label,
                     "undispositioned": ln.undispositioned}
                    for ln in plist.lines
                    if ln.undispositioned != 0
                ]
                if short:
                    raise IncompleteDispositions(
                        f"{len(short)} line(s) still have undispositioned units",
                        lines=short,
                    )

            self._fire_side_effects(plist, target, actor_id, dispatch_quantities)
            plist.state = target
            now = self._now()
            plist.milestones.append(
                Milestone(target, role, actor_id, now, idempotency_key)
            )
            if target is ListState.RECONCILED:
                plist.reconciled_at = now
                if self.report_builder is not None:
                    plist.frozen_report = self.report_builder(plist)
            self._notify(plist)
            self._changed(plist)
            return plist

    def _fire_side_effects(
        self,
        plist: ProjectList,
        target: ListState,
        actor_id: str,
        dispatch_quantities: Optional[dict[int, int]],
    ) -> None:
        wh = self.warehouse
        if target is ListState.APPROVED:
            # Validate the whole list first so a failure reserves nothing.
            for ln in plist.lines:
                available = wh.available_units(ln.item_label)
                if ln.quantity_requested > available:
                    raise InsufficientStock(
                        f"line {ln.line_no}: cannot reserve {ln.quantity_requested} "
                        f"of {ln.item_label!r}; only {available} available",
                        line_no=ln.line_no,
                        label=ln.item_label,
                        available=available,
                    )
            for ln in plist.lines:
                wh.apply_event(
                    EventKind.RESERVE,
                    ln.item_label,
                    ln.quantity_requested,
                    actor_id,
                    list_ref=plist.list_id,
                )
        elif target is ListState.PICKING:
            for ln in plist.lines:
                wh.apply_event(
                    EventKind.PICK,
                    ln.item_label,
                    ln.quantity_requested,
                    actor_id,
                    list_ref=plist.list_id,
                )
        elif target is ListState.PACKED:
            for ln in plist.lines:
                wh.apply_event(
                    EventKind.PACK,
                    ln.item_label,
                    ln.quantity_requested,
                    actor_id,
                    list_ref=plist.list_id,
                )
        elif target is ListState.DISPATCHED:
            quantities: dict[int, int] = {}
            for ln in plist.lines:
                qty = (dispatch_quantities or {}).get(ln.line_no, ln.quantity_requested)
                if qty < 0 or qty > ln.quantity_requested:
                    raise InvalidQuantity(
                        f"line {ln.line_no}: dispatch quantity {qty} outside "
                        f"0..{ln.quantity_requested}",
                        line_no=ln.line_no,
                    )
                quantities[ln.line_no] = qty
            for ln in plist.lines:
                qty = quantities[ln.line_no]
                if qty > 0:
                    wh.apply_event(
                        EventKind.DISPATCH,
                        ln.item_label,
                        qty,
                        actor_id,
                        list_ref=plist.list_id,
                    )
                shortfall = ln.quantity_requested - qty
                if shortfall > 0:
                    wh.apply_event(
                        EventKind.RELEASE_RESERVATION,
                        ln.item_label,
                        shortfall,
                        actor_id,
                        list_ref=plist.list_id,
                        note="partial dispatch remainder",
                    )
                ln.quantity_dispatched = qty
        elif target is ListState.RECEIVED_ON_SITE:
            for ln in plist.lines:
                if ln.quantity_dispatched > 0:
                    wh.apply_event(
                        EventKind.RECEIVE,
                        ln.item_label,
                        ln.quantity_dispatched,
                        actor_id,
                        list_ref=plist.list_id,
                    )

    def open_inbound(self, list_id: str, actor_id: str, role: Role,
                     idempotency_key: Optional[str] = None) -> ProjectList:
        """When the event ends, the same list becomes the inbound list."""
        return self.transition(
            list_id, ListState.INBOUND_OPEN, actor_id, role,
            idempotency_key=idempotency_key,
        )

    def set_disposition(
        self,
        list_id: str,
        line_no: int,
        disposition: Disposition,
        quantity: int,
        actor_id: str,
        role: Role,
        idempotency_key: Optional[str] = None,
    ) -> ListLine:
        with self._lock:
            plist = self.get_list(list_id)
            if idempotency_key is not None and idempotency_key in plist.disposition_keys:
                return plist.line(plist.disposition_keys[idempotency_key])
            if plist.state is not ListState.INBOUND_OPEN:
                raise IllegalState(
                    f"list {list_id!r} is {plist.state.value}; dispositions need "
                    f"InboundOpen",
                    list_id=list_id,
                    state=plist.state.value,
                )
            if role not in DISPOSITION_ROLES:
                raise Forbidden(
                    f"role {role.value} may not record dispositions", role=role.value
                )
            if quantity <= 0:
                raise InvalidQuantity("disposition quantity must be positive")
            line = plist.line(line_no)
            if quantity > line.undispositioned:
                raise OverDisposition(
                    f"line {line_no}: {quantity} exceeds the {line.undispositioned} "
                    f"undispositioned units",
                    line_no=line_no,
                    undispositioned=line.undispositioned,
                )
            self.warehouse.apply_event(
                DISPOSITION_EVENT[disposition],
                line.item_label,
                quantity,
                actor_id,
                list_ref=plist.list_id,
            )
            line.dispositions[disposition] = (
                line.dispositions.get(disposition, 0) + quantity
            )
            if idempotency_key is not None:
                plist.disposition_keys[idempotency_key] = line_no
            self._changed(plist)
            return line

    def reconcile(
        self,
        list_id: str,
        actor_id: str,
        role: Role,
        idempotency_key: Optional[str] = None,
    ) -> ProjectList:
        """Close the inbound list: every dispatched unit must be dispositioned.

        On success the indicator report (if a builder is wired) is computed
        and frozen onto the list; stock already reflects the dispositions.
        """
        return self.transition(
            list_id, ListState.RECONCILED, actor_id, role,
            idempotency_key=idempotency_key,
        )

    def substitute_line(
        self,
        list_id: str,
        line_no: int,
        stock_item_label: str,
        actor_id: str,
        role: Role,
    ) -> ListLine:
        """Swap a purchase line for an in-stock equivalent (the refuse move)."""
        with self._lock:
            plist = self.get_list(list_id)
            if plist.state not in MUTABLE_STATES:
                raise IllegalState(
                    f"list {list_id!r} is {plist.state.value}; lines are frozen",
                    list_id=list_id,
                    state=plist.state.value,
                )
            if role not in SUBSTITUTION_ROLES:
                raise Forbidden(
                    f"role {role.value} may not substitute lines", role=role.value
                )
            line = plist.line(line_no)
            if line.origin is not LineOrigin.NEW_PURCHASE:
                raise PreconditionFailed(
                    f"line {line_no} is not a purchase line", line_no=line_no
                )
            if not self.warehouse.has_item(stock_item_label):
                raise UnknownItem(
                    f"unknown item {stock_item_label!r}", label=stock_item_label
                )
            available = self.warehouse.available_units(stock_item_label)
            if line.quantity_requested > available:
                raise InsufficientStock(
                    f"only {available} of {stock_item_label!r} available",
                    label=stock_item_label,
                    available=available,
                )
            line.item_label = stock_item_label
            line.origin = LineOrigin.SUBSTITUTED_FROM_STOCK
            self._recompute_high_value(plist)
            self._changed(plist)
            return line

    def add_line(self, list_id: str, request: LineRequest, actor_id: str,
                 role: Role) -> ListLine:
        """Append a line while the list is still mutable; frozen afterwards."""
        with self._lock:
            plist = self.get_list(list_id)
            if plist.state not in MUTABLE_STATES:
                raise LinesFrozen(
                    f"list {list_id!r} is {plist.state.value}; no new lines",
                    list_id=list_id,
                    state=plist.state.value,
                )
            if role is not Role.PROJECT_LEAD:
                raise Forbidden(
                    f"role {role.value} may not add lines", role=role.value
                )
            if request.quantity <= 0:
                raise InvalidQuantity("quantity must be positive")
            if not self.warehouse.has_item(request.item_label):
                raise UnknownItem(
                    f"unknown item {request.item_label!r}", label=request.item_label
                )
            if request.origin in STOCK_ORIGINS:
                available = self.warehouse.available_units(request.item_label)
                if request.quantity > available:
                    raise InsufficientStock(
                        f"only {available} of {request.item_label!r} available",
                        label=request.item_label,
                        available=available,
                    )
            line = ListLine(
                line_no=max((ln.line_no for ln in plist.lines), default=0) + 1,
                item_label=request.item_label,
                quantity_requested=request.quantity,
                origin=request.origin,
            )
            plist.lines.append(line)
            self._recompute_high_value(plist)
            self._changed(plist)
            return line

    def link_material(
        self, list_id: str, material_id: str, note: str, actor_id: str, role: Role
    ) -> MaterialLink:
        """Record a materials-library selection against a not-yet-picked list."""
        linkable = (ListState.DRAFT, ListState.SUBMITTED, ListState.APPROVED)
        with self._lock:
            plist = self.get_list(list_id)
            if plist.state not in linkable:
                raise IllegalState(
                    f"list {list_id!r} is {plist.state.value}; material links "
                    f"close at Approved",
                    list_id=list_id,
                    state=plist.state.value,
                )
            if role not in (Role.DESIGNER, Role.PROJECT_LEAD):
                raise Forbidden(
                    f"role {role.value} may not link materials", role=role.value
                )
            link = MaterialLink(
                material_id=material_id,
                note=note,
                linked_by=actor_id,
                timestamp=self._now(),
            )
            plist.material_links.append(link)
            self._changed(plist)
            return link

    def pending_actions(self, role: Role) -> list[Notification]:
        """Open notifications addressed to this role, oldest first."""
        with self._lock:
            open_notes = [
                n
                for plist in self._lists.values()
                for n in plist.notifications
                if not n.acknowledged and n.recipient_role is role
            ]
        return sorted(open_notes, key=lambda n: (n.created, n.list_id))

    def all_open_notifications(self) -> list[Notification]:
        with self._lock:
            return [
                n
                for plist in self._lists.values()
                for n in plist.notifications
                if not n.acknowledged
            ]
