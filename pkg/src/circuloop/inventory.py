"""Event-sourced digital warehouse.

The warehouse is the authoritative, replayable record of every item: identity,
quantities, condition, and location. All mutation goes through movement events
appended to the ledger; the in-memory item map and stock snapshot are folds of
that log and can be rebuilt from it at any time (see :func:`replay`).
"""

from __future__ import annotations

import csv
import io
import itertools
import threading
import uuid
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from enum import Enum
from typing import Any, Callable, Iterable, Optional

from .errors import (
    CorruptLog,
    DuplicateLabel,
    IllegalTransition,
    InvalidQuantity,
    ParseError,
    QuantityOverflow,
    StaleVersion,
    UnknownItem,
    ValidationError,
)
from .ledger import (
    ZERO_QUANTITY_KINDS,
    EventKind,
    EventLedger,
    ItemTally,
    ListProgress,
    MovementEvent,
    StockSnapshot,
    check_sequences,
)

Clock = Callable[[], datetime]


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    """UTC instant at millisecond precision; total ledger order is append order."""
    return dt.astimezone(timezone.utc).isoformat(timespec="milliseconds")


class Category(str, Enum):
    EVENT_PROPS = "EventProps"
    MEDICAL_SUPPLIES = "MedicalSupplies"
    ELECTRONICS_ELECTRICAL = "ElectronicsElectrical"
    OFFICE_SUPPLIES = "OfficeSupplies"
    BEVERAGES_FOOD = "BeveragesFood"
    APPAREL_FOOTWEAR = "ApparelFootwear"
    TABLEWARE_GLASSWARE = "TablewareGlassware"


class ConditionGrade(str, Enum):
    A = "A"  # like-new
    B = "B"  # serviceable
    C = "C"  # usable with visible wear
    D = "D"  # below reuse threshold; routes to recycling


class ItemStatus(str, Enum):
    ACTIVE = "Active"
    END_OF_LIFE = "EndOfLife"  # remaining_lifespan exhausted, still queryable
    RETIRED = "Retired"  # all units retired from the warehouse


# Metadata fields update_metadata may patch.
PATCHABLE_FIELDS = frozenset(
    {
        "condition",
        "remaining_lifespan",
        "location",
        "expiry_date",
        "embodied_carbon_per_unit",
    }
)


@dataclass(slots=True)
class ItemDraft:
    """Registration input: an ItemRecord without version or derived state."""

    label: str
    name: str
    category: Category
    material: str
    quantity_on_hand: int
    condition: ConditionGrade = ConditionGrade.B
    remaining_lifespan: int = 1
    expiry_date: Optional[date] = None
    embodied_carbon_per_unit: float = 0.0
    location: str = ""

    def to_payload(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "name": self.name,
            "category": self.category.value,
            "material": self.material,
            "quantity_on_hand": self.quantity_on_hand,
            "condition": self.condition.value,
            "remaining_lifespan": self.remaining_lifespan,
            "expiry_date": self.expiry_date.isoformat() if self.expiry_date else None,
            "embodied_carbon_per_unit": self.embodied_carbon_per_unit,
            "location": self.location,
        }

    @classmethod
    def from_payload(cls, raw: dict[str, Any]) -> "ItemDraft":
        return cls(
            label=raw["label"],
            name=raw["name"],
            category=Category(raw["category"]),
            material=raw["material"],
            quantity_on_hand=int(raw["quantity_on_hand"]),
            condition=ConditionGrade(raw.get("condition", "B")),
            remaining_lifespan=int(raw.get("remaining_lifespan", 1)),
            expiry_date=(
                date.fromisoformat(raw["expiry_date"]) if raw.get("expiry_date") else None
            ),
            embodied_carbon_per_unit=float(raw.get("embodied_carbon_per_unit", 0.0)),
            location=raw.get("location", ""),
        )


@dataclass(slots=True)
class ItemRecord:
    """A uniquely labelled warehouse asset. ``label`` is immutable and never reassigned."""

    label: str
    name: str
    category: Category
    material: str
    quantity_on_hand: int
    quantity_reserved: int
    condition: ConditionGrade
    remaining_lifespan: int
    expiry_date: Optional[date]
    embodied_carbon_per_unit: float
    status: ItemStatus
    location: str
    version: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "name": self.name,
            "category": self.category.value,
            "material": self.material,
            "quantity_on_hand": self.quantity_on_hand,
            "quantity_reserved": self.quantity_reserved,
            "condition": self.condition.value,
            "remaining_lifespan": self.remaining_lifespan,
            "expiry_date": self.expiry_date.isoformat() if self.expiry_date else None,
            "embodied_carbon_per_unit": self.embodied_carbon_per_unit,
            "status": self.status.value,
            "location": self.location,
            "version": self.version,
        }


@dataclass(slots=True)
class QueryFilter:
    text: Optional[str] = None
    category: Optional[Category] = None
    status: Optional[ItemStatus] = None
    condition: Optional[ConditionGrade] = None
    available_only: bool = False


@dataclass(slots=True)
class ApplyResult:
    """Outcome of one applied event: the event plus the item's tally delta."""

    event: MovementEvent
    tally: ItemTally
    delta: dict[str, int]
    version: int


# Kinds that operate inside a project list context.
_LIST_SCOPED = frozenset(
    {
        EventKind.RESERVE,
        EventKind.RELEASE_RESERVATION,
        EventKind.PICK,
        EventKind.PACK,
        EventKind.DISPATCH,
        EventKind.RECEIVE,
        EventKind.RETURN_RESTOCK,
        EventKind.TEMP_STORE,
    }
)


class Warehouse:
    """The live digital warehouse, backed by an append-only event ledger.

    Writes to a single item are serialised via per-item optimistic versioning;
    a stale ``expected_version`` raises StaleVersion and leaves no trace in
    the ledger. Reads see the latest committed snapshot.
    """

    def __init__(self, ledger: Optional[EventLedger] = None, clock: Clock = utc_now):
        self.ledger = ledger if ledger is not None else EventLedger()
        self.clock = clock
        self._lock = threading.RLock()
        self._items: dict[str, ItemRecord] = {}
        self._snapshot = StockSnapshot()
        self._sequences: dict[str, int] = {}
        # Event ids: one random 128-bit run prefix plus a counter keeps ids
        # globally unique without an entropy read per event.
        self._run_id = uuid.uuid4().hex
        self._event_counter = itertools.count(1)
        events = self.ledger.events()
        check_sequences(events)  # refuse to fold a gapped or reordered log
        for event in events:
            self._fold(event)

    # -- event construction ----------------------------------------------

    def _next_event(
        self,
        kind: EventKind,
        item_label: str,
        quantity: int,
        actor: str,
        list_ref: Optional[str],
        note: Optional[str],
        payload: Optional[dict[str, Any]] = None,
    ) -> MovementEvent:
        sequence = self._sequences.get(item_label, 0) + 1
        return MovementEvent(
            event_id=f"{self._run_id}-{next(self._event_counter):x}",
            sequence=sequence,
            timestamp=format_timestamp(self.clock()),
            actor=actor,
            item_label=item_label,
            kind=kind,
            quantity=quantity,
            list_ref=list_ref,
            note=note,
            payload=payload,
        )

    # -- operations --------------------------------------------------------

    def register_item(self, draft: ItemDraft, actor: str) -> ItemRecord:
        """Register a new item; appends a Register event, version becomes 1."""
        with self._lock:
            if draft.label in self._items:
                raise DuplicateLabel(
                    f"item label {draft.label!r} already registered", label=draft.label
                )
            if draft.quantity_on_hand < 0:
                raise InvalidQuantity("quantity_on_hand must be >= 0")
            if draft.remaining_lifespan < 0:
                raise InvalidQuantity("remaining_lifespan must be >= 0")
            if draft.embodied_carbon_per_unit < 0:
                raise InvalidQuantity("embodied_carbon_per_unit must be >= 0")
            event = self._next_event(
                EventKind.REGISTER,
                draft.label,
                draft.quantity_on_hand,
                actor,
                list_ref=None,
                note=None,
                payload=draft.to_payload(),
            )
            self.ledger.append([event])
            self._fold(event)
            return replace(self._items[draft.label])

    def import_items_csv(self, content: str, actor: str) -> int:
        """Bootstrap import. Header: label,name,category,material,quantity,
        condition,remaining_lifespan,expiry_date,embodied_carbon_per_unit,location.
        Empty field means absent; dates are ISO-8601. Returns rows registered.
        """
        drafts = parse_items_csv(content)
        with self._lock:
            events = []
            for draft in drafts:
                if draft.label in self._items:
                    raise DuplicateLabel(
                        f"item label {draft.label!r} already registered",
                        label=draft.label,
                    )
                events.append(
                    self._next_event(
                        EventKind.REGISTER,
                        draft.label,
                        draft.quantity_on_hand,
                        actor,
                        list_ref=None,
                        note=None,
                        payload=draft.to_payload(),
                    )
                )
            self.ledger.append(events)
            for event in events:
                self._fold(event)
            return len(events)

    def apply_event(
        self,
        kind: EventKind,
        item_label: str,
        quantity: int,
        actor: str,
        list_ref: Optional[str] = None,
        note: Optional[str] = None,
        expected_version: Optional[int] = None,
    ) -> ApplyResult:
        """Validate, durably append, and fold one movement event.

        The event is appended before the new state is observable; on any
        validation failure the ledger is untouched.
        """
        if kind in (EventKind.REGISTER, EventKind.UPDATE_METADATA):
            raise ValidationError(
                f"{kind.value} events go through their dedicated operation"
            )
        with self._lock:
            item = self._items.get(item_label)
            if item is None:
                raise UnknownItem(f"unknown item {item_label!r}", label=item_label)
            if expected_version is not None and expected_version != item.version:
                raise StaleVersion(
                    f"item {item_label!r} is at version {item.version}, "
                    f"expected {expected_version}",
                    label=item_label,
                    current_version=item.version,
                )
            self._check_event(kind, item, quantity, list_ref)
            before = self._snapshot.tally(item_label).to_dict()
            event = self._next_event(kind, item_label, quantity, actor, list_ref, note)
            self.ledger.append([event])
            self._fold(event)
            tally = self._snapshot.tally(item_label)
            after = tally.to_dict()
            delta = {k: after[k] - before[k] for k in after if after[k] != before[k]}
            return ApplyResult(
                event=event, tally=tally.copy(), delta=delta,
                version=self._items[item_label].version,
            )

    def update_metadata(
        self,
        label: str,
        patch: dict[str, Any],
        actor: str,
        expected_version: Optional[int] = None,
    ) -> ItemRecord:
        """Patch condition/lifespan/location/expiry/carbon; appends UpdateMetadata."""
        with self._lock:
            item = self._items.get(label)
            if item is None:
                raise UnknownItem(f"unknown item {label!r}", label=label)
            if expected_version is not None and expected_version != item.version:
                raise StaleVersion(
                    f"item {label!r} is at version {item.version}, "
                    f"expected {expected_version}",
                    label=label,
                    current_version=item.version,
                )
            unknown = set(patch) - PATCHABLE_FIELDS
            if unknown:
                raise ValidationError(
                    f"non-patchable fields: {sorted(unknown)}", fields=sorted(unknown)
                )
            payload = _normalise_patch(patch)
            event = self._next_event(
                EventKind.UPDATE_METADATA, label, 0, actor, None, None, payload=payload
            )
            self.ledger.append([event])
            self._fold(event)
            return replace(self._items[label])

    def get_item(self, label: str) -> ItemRecord:
        with self._lock:
            item = self._items.get(label)
            if item is None:
                raise UnknownItem(f"unknown item {label!r}", label=label)
            return replace(item)

    def has_item(self, label: str) -> bool:
        return label in self._items

    def available_units(self, label: str) -> int:
        """Units reservable right now: 0 for grade D or end-of-life items."""
        item = self.get_item(label)
        if item.condition is ConditionGrade.D or item.remaining_lifespan == 0:
            return 0
        return item.quantity_on_hand - item.quantity_reserved

    def query_items(
        self,
        query: Optional[QueryFilter] = None,
        page: int = 1,
        page_size: int = 100,
    ) -> tuple[list[ItemRecord], int]:
        """Filtered listing, label ascending; returns (page of records, total)."""
        query = query or QueryFilter()
        if page < 1 or page_size < 1:
            raise ValidationError("page and page_size must be >= 1")
        with self._lock:
            matches = [
                replace(item)
                for label, item in sorted(self._items.items())
                if self._matches(item, query)
            ]
        total = len(matches)
        start = (page - 1) * page_size
        return matches[start : start + page_size], total

    def _matches(self, item: ItemRecord, query: QueryFilter) -> bool:
        if query.category is not None and item.category is not query.category:
            return False
        if query.status is not None and item.status is not query.status:
            return False
        if query.condition is not None and item.condition is not query.condition:
            return False
        if query.available_only:
            if item.condition is ConditionGrade.D:
                return False
            if item.remaining_lifespan == 0:
                return False
            if item.quantity_on_hand - item.quantity_reserved <= 0:
                return False
        if query.text:
            haystack = " ".join(
                (item.label, item.name, item.material, item.location)
            ).lower()
            if query.text.lower() not in haystack:
                return False
        return True

    # -- snapshot / replay ---------------------------------------------------

    def snapshot(self) -> StockSnapshot:
        with self._lock:
            snap = StockSnapshot(as_of=self._snapshot.as_of)
            snap.tallies = {k: t.copy() for k, t in self._snapshot.tallies.items()}
            snap.progress = {
                k: _copy_progress(p) for k, p in self._snapshot.progress.items()
            }
            return snap

    def tally(self, label: str) -> ItemTally:
        """Copy of one item's live tally (cheaper than a full snapshot)."""
        with self._lock:
            if label not in self._snapshot.tallies:
                raise UnknownItem(f"unknown item {label!r}", label=label)
            return self._snapshot.tallies[label].copy()

    def items(self) -> list[ItemRecord]:
        with self._lock:
            return [replace(i) for _, i in sorted(self._items.items())]

    # -- validation -----------------------------------------------------------

    def _check_event(
        self,
        kind: EventKind,
        item: ItemRecord,
        quantity: int,
        list_ref: Optional[str],
    ) -> None:
        if kind in ZERO_QUANTITY_KINDS:
            if quantity < 0:
                raise InvalidQuantity("quantity must be >= 0")
        elif quantity <= 0:
            raise InvalidQuantity(
                f"{kind.value} requires a positive quantity", kind=kind.value
            )
        if kind in _LIST_SCOPED and not list_ref:
            raise ValidationError(f"{kind.value} requires a list_ref", kind=kind.value)

        tally = self._snapshot.tally(item.label)
        progress = (
            self._snapshot.list_progress(list_ref, item.label) if list_ref else None
        )

        def overflow(msg: str) -> QuantityOverflow:
            return QuantityOverflow(msg, label=item.label, quantity=quantity)

        if kind is EventKind.RESERVE:
            if item.condition is ConditionGrade.D:
                raise IllegalTransition(
                    f"grade-D item {item.label!r} is ineligible for reservation",
                    label=item.label,
                )
            if item.remaining_lifespan == 0:
                raise IllegalTransition(
                    f"end-of-life item {item.label!r} is ineligible for reservation",
                    label=item.label,
                )
            if tally.on_hand - tally.reserved < quantity:
                raise overflow(
                    f"cannot reserve {quantity} of {item.label!r}: only "
                    f"{tally.on_hand - tally.reserved} available"
                )
        elif kind is EventKind.RELEASE_RESERVATION:
            assert progress is not None
            if progress.outstanding_reservation < quantity:
                raise overflow(
                    f"cannot release {quantity}: outstanding reservation is "
                    f"{progress.outstanding_reservation}"
                )
        elif kind is EventKind.PICK:
            assert progress is not None
            if progress.picked + quantity > progress.reserved - progress.released:
                raise IllegalTransition(
                    f"pick of {quantity} exceeds reservation for list {list_ref!r}",
                    label=item.label,
                    list_ref=list_ref,
                )
        elif kind is EventKind.PACK:
            assert progress is not None
            if progress.packed + quantity > progress.picked:
                raise IllegalTransition(
                    f"pack of {quantity} exceeds picked units for list {list_ref!r}",
                    label=item.label,
                    list_ref=list_ref,
                )
        elif kind is EventKind.DISPATCH:
            assert progress is not None
            if progress.dispatched + quantity > progress.packed:
                raise IllegalTransition(
                    f"dispatch of {quantity} exceeds packed units for list {list_ref!r}",
                    label=item.label,
                    list_ref=list_ref,
                )
            if quantity > progress.outstanding_reservation:
                raise QuantityOverflow(
                    f"dispatch of {quantity} exceeds the outstanding reservation "
                    f"of {progress.outstanding_reservation} for list {list_ref!r}",
                    label=item.label,
                    quantity=quantity,
                )
        elif kind is EventKind.RECEIVE:
            assert progress is not None
            if progress.received + quantity > progress.dispatched:
                raise IllegalTransition(
                    f"receive of {quantity} exceeds dispatched units for list {list_ref!r}",
                    label=item.label,
                    list_ref=list_ref,
                )
        elif kind in (
            EventKind.RETURN_RESTOCK,
            EventKind.TEMP_STORE,
        ):
            assert progress is not None
            remaining = progress.received - progress.dispositioned
            if quantity > remaining:
                raise overflow(
                    f"{kind.value} of {quantity} exceeds the {remaining} "
                    f"undispositioned on-site units for list {list_ref!r}"
                )
        elif kind is EventKind.MARK_CONSUMED_OR_DAMAGED:
            if list_ref:
                assert progress is not None
                remaining = progress.received - progress.dispositioned
                if quantity > remaining:
                    raise overflow(
                        f"{kind.value} of {quantity} exceeds the {remaining} "
                        f"undispositioned on-site units for list {list_ref!r}"
                    )
            else:
                if tally.on_hand - tally.reserved < quantity:
                    raise overflow(
                        f"write-off of {quantity} exceeds unreserved stock of "
                        f"{item.label!r}"
                    )
        elif kind in (EventKind.ROUTE_RECYCLE, EventKind.RETIRE):
            if tally.on_hand - tally.reserved < quantity:
                raise overflow(
                    f"{kind.value} of {quantity} exceeds unreserved stock of "
                    f"{item.label!r}"
                )
        elif kind is EventKind.INSPECT:
            pass  # audit-only; no tally change
        elif kind is EventKind.ADJUST_QUANTITY:
            pass  # additive restock; outbound corrections use explicit sinks

    # -- fold -------------------------------------------------------------

    def _fold(self, event: MovementEvent) -> None:
        fold_event(event, self._items, self._snapshot)
        self._sequences[event.item_label] = event.sequence
        self._snapshot.as_of += 1


def _copy_progress(p: ListProgress) -> ListProgress:
    return ListProgress(
        reserved=p.reserved,
        released=p.released,
        picked=p.picked,
        packed=p.packed,
        dispatched=p.dispatched,
        received=p.received,
        returned=p.returned,
        consumed=p.consumed,
        temp_stored=p.temp_stored,
    )


def fold_event(
    event: MovementEvent,
    items: dict[str, ItemRecord],
    snapshot: StockSnapshot,
) -> None:
    """Apply one already-validated event to the item map and snapshot."""
    kind = event.kind
    label = event.item_label
    qty = event.quantity

    if kind is EventKind.REGISTER:
        draft = ItemDraft.from_payload(event.payload or {})
        items[label] = ItemRecord(
            label=draft.label,
            name=draft.name,
            category=draft.category,
            material=draft.material,
            quantity_on_hand=draft.quantity_on_hand,
            quantity_reserved=0,
            condition=draft.condition,
            remaining_lifespan=draft.remaining_lifespan,
            expiry_date=draft.expiry_date,
            embodied_carbon_per_unit=draft.embodied_carbon_per_unit,
            status=(
                ItemStatus.END_OF_LIFE if draft.remaining_lifespan == 0 else ItemStatus.ACTIVE
            ),
            location=draft.location,
            version=1,
        )
        tally = snapshot.tally(label)
        tally.on_hand += qty
        tally.registered_in += qty
        return

    item = items[label]
    tally = snapshot.tally(label)
    progress = (
        snapshot.list_progress(event.list_ref, label) if event.list_ref else None
    )

    if kind is EventKind.UPDATE_METADATA:
        patch = event.payload or {}
        if "condition" in patch:
            item.condition = ConditionGrade(patch["condition"])
        if "remaining_lifespan" in patch:
            item.remaining_lifespan = int(patch["remaining_lifespan"])
            if item.remaining_lifespan == 0 and item.status is ItemStatus.ACTIVE:
                item.status = ItemStatus.END_OF_LIFE
            elif item.remaining_lifespan > 0 and item.status is ItemStatus.END_OF_LIFE:
                item.status = ItemStatus.ACTIVE
        if "location" in patch:
            item.location = patch["location"]
        if "expiry_date" in patch:
            raw = patch["expiry_date"]
            item.expiry_date = date.fromisoformat(raw) if raw else None
        if "embodied_carbon_per_unit" in patch:
            item.embodied_carbon_per_unit = float(patch["embodied_carbon_per_unit"])
    elif kind is EventKind.ADJUST_QUANTITY:
        tally.on_hand += qty
        tally.adjusted_in += qty
    elif kind is EventKind.RESERVE:
        tally.reserved += qty
        progress.reserved += qty
    elif kind is EventKind.RELEASE_RESERVATION:
        tally.reserved -= qty
        progress.released += qty
    elif kind is EventKind.PICK:
        progress.picked += qty
    elif kind is EventKind.PACK:
        progress.packed += qty
    elif kind is EventKind.DISPATCH:
        tally.on_hand -= qty
        tally.reserved -= qty
        tally.dispatched += qty
        progress.dispatched += qty
    elif kind is EventKind.RECEIVE:
        tally.dispatched -= qty
        tally.on_site += qty
        progress.received += qty
    elif kind is EventKind.INSPECT:
        pass
    elif kind is EventKind.RETURN_RESTOCK:
        tally.on_site -= qty
        tally.on_hand += qty
        progress.returned += qty
    elif kind is EventKind.MARK_CONSUMED_OR_DAMAGED:
        if progress is not None:
            tally.on_site -= qty
            progress.consumed += qty
        else:
            tally.on_hand -= qty
        tally.consumed_or_damaged += qty
    elif kind is EventKind.TEMP_STORE:
        tally.on_site -= qty
        tally.temporarily_stored += qty
        progress.temp_stored += qty
    elif kind is EventKind.ROUTE_RECYCLE:
        tally.on_hand -= qty
        tally.recycled += qty
    elif kind is EventKind.RETIRE:
        tally.on_hand -= qty
        tally.retired += qty
        if tally.on_hand == 0:
            item.status = ItemStatus.RETIRED

    item.quantity_on_hand = tally.on_hand
    item.quantity_reserved = tally.reserved
    item.version += 1


def replay(events: Iterable[MovementEvent]) -> StockSnapshot:
    """Fold a complete, ordered ledger into a snapshot.

    Deterministic for a given log; raises CorruptLog (with the offending
    sequence number) on a per-item gap or out-of-order sequence.
    """
    events = list(events)
    check_sequences(events)
    items: dict[str, ItemRecord] = {}
    snapshot = StockSnapshot()
    for event in events:
        if event.kind is not EventKind.REGISTER and event.item_label not in items:
            raise CorruptLog(
                f"event {event.event_id} references unregistered item "
                f"{event.item_label!r}",
                sequence=event.sequence,
            )
        fold_event(event, items, snapshot)
        snapshot.as_of += 1
    return snapshot


def replay_items(events: Iterable[MovementEvent]) -> dict[str, ItemRecord]:
    """Rebuild the item map (metadata and versions) from the log."""
    events = list(events)
    check_sequences(events)
    items: dict[str, ItemRecord] = {}
    snapshot = StockSnapshot()
    for event in events:
        fold_event(event, items, snapshot)
    return items


def _normalise_patch(patch: dict[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in patch.items():
        if key == "condition":
            out[key] = ConditionGrade(value).value
        elif key == "remaining_lifespan":
            iv = int(value)
            if iv < 0:
                raise InvalidQuantity("remaining_lifespan must be >= 0")
            out[key] = iv
        elif key == "embodied_carbon_per_unit":
            fv = float(value)
            if fv < 0:
                raise InvalidQuantity("embodied_carbon_per_unit must be >= 0")
            out[key] = fv
        elif key == "expiry_date":
            if value is None or value == "":
                out[key] = None
            elif isinstance(value, date):
                out[key] = value.isoformat()
            else:
                out[key] = date.fromisoformat(str(value)).isoformat()
        else:
            out[key] = value
    return out


ITEMS_CSV_HEADER = [
    "label",
    "name",
    "category",
    "material",
    "quantity",
    "condition",
    "remaining_lifespan",
    "expiry_date",
    "embodied_carbon_per_unit",
    "location",
]


def parse_items_csv(content: str) -> list[ItemDraft]:
    """Parse the bootstrap CSV; raises ParseError naming the offending line."""
    reader = csv.DictReader(io.StringIO(content))
    if reader.fieldnames != ITEMS_CSV_HEADER:
        raise ParseError(
            f"expected header {','.join(ITEMS_CSV_HEADER)}",
            expected=ITEMS_CSV_HEADER,
            found=reader.fieldnames,
        )
    drafts = []
    seen: set[str] = set()
    for line_no, row in enumerate(reader, start=2):
        try:
            label = (row["label"] or "").strip()
            if not label:
                raise ValueError("empty label")
            if label in seen:
                raise DuplicateInFileMarker(label)
            seen.add(label)
            drafts.append(
                ItemDraft(
                    label=label,
                    name=(row["name"] or "").strip(),
                    category=Category(row["category"].strip()),
                    material=(row["material"] or "").strip(),
                    quantity_on_hand=int(row["quantity"]),
                    condition=ConditionGrade(row["condition"].strip())
                    if row["condition"]
                    else ConditionGrade.B,
                    remaining_lifespan=int(row["remaining_lifespan"])
                    if row["remaining_lifespan"]
                    else 1,
                    expiry_date=date.fromisoformat(row["expiry_date"])
                    if row["expiry_date"]
                    else None,
                    embodied_carbon_per_unit=float(row["embodied_carbon_per_unit"])
                    if row["embodied_carbon_per_unit"]
                    else 0.0,
                    location=(row["location"] or "").strip(),
                )
            )
            if drafts[-1].quantity_on_hand < 0:
                raise ValueError("negative quantity")
            if drafts[-1].embodied_carbon_per_unit < 0:
                raise ValueError("negative embodied carbon")
            if drafts[-1].remaining_lifespan < 0:
                raise ValueError("negative remaining lifespan")
        except DuplicateInFileMarker as dup:
            raise ParseError(
                f"line {line_no}: duplicate label {dup.label!r} in file",
                line=line_no,
                label=dup.label,
            ) from None
        except (ValueError, KeyError) as exc:
            raise ParseError(f"line {line_no}: {exc}", line=line_no) from exc
    return drafts


class DuplicateInFileMarker(Exception):
    def __init__(self, label: str):
        self.label = label
