"""Append-only movement-event ledger.

Every stock mutation is one immutable :class:`MovementEvent`. The on-disk form
is line-delimited JSON, one event per line, canonical field order, fsync'd per
append batch so an acknowledged write survives a crash. Current warehouse
state is always a deterministic fold of this log.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional

from .errors import CorruptLog


class EventKind(str, Enum):
    REGISTER = "Register"
    ADJUST_QUANTITY = "AdjustQuantity"
    UPDATE_METADATA = "UpdateMetadata"
    RESERVE = "Reserve"
    RELEASE_RESERVATION = "ReleaseReservation"
    PICK = "Pick"
    PACK = "Pack"
    DISPATCH = "Dispatch"
    RECEIVE = "Receive"
    INSPECT = "Inspect"
    RETURN_RESTOCK = "ReturnRestock"
    MARK_CONSUMED_OR_DAMAGED = "MarkConsumedOrDamaged"
    TEMP_STORE = "TempStore"
    ROUTE_RECYCLE = "RouteRecycle"
    RETIRE = "Retire"


# Kinds that carry no unit count; all others require quantity > 0 except
# Register, which may legally record a zero-stock item.
ZERO_QUANTITY_KINDS = frozenset({EventKind.UPDATE_METADATA, EventKind.INSPECT})

# Canonical serialization order for the on-disk JSONL records.
_FIELD_ORDER = (
    "event_id",
    "sequence",
    "timestamp",
    "actor",
    "item_label",
    "kind",
    "quantity",
    "list_ref",
    "note",
    "payload",
)


@dataclass(frozen=True, slots=True)
class MovementEvent:
    """One append-only ledger entry; the sole mutator of stock.

    ``sequence`` is per-item, gapless and strictly increasing. ``timestamp``
    is assigned server-side at append time (UTC, millisecond precision).
    ``payload`` carries the item draft for Register and the patch for
    UpdateMetadata so the full warehouse state folds from the log alone.
    """

    event_id: str
    sequence: int
    timestamp: str
    actor: str
    item_label: str
    kind: EventKind
    quantity: int
    list_ref: Optional[str] = None
    note: Optional[str] = None
    payload: Optional[dict[str, Any]] = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for name in _FIELD_ORDER:
            value = getattr(self, name)
            if name == "kind":
                value = value.value
            if value is None and name in ("list_ref", "note", "payload"):
                continue
            out[name] = value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "MovementEvent":
        try:
            return cls(
                event_id=raw["event_id"],
                sequence=int(raw["sequence"]),
                timestamp=raw["timestamp"],
                actor=raw["actor"],
                item_label=raw["item_label"],
                kind=EventKind(raw["kind"]),
                quantity=int(raw["quantity"]),
                list_ref=raw.get("list_ref"),
                note=raw.get("note"),
                payload=raw.get("payload"),
            )
        except (KeyError, ValueError) as exc:
            raise CorruptLog(f"unreadable event record: {exc}") from exc


def parse_event_line(line: str, line_no: int) -> MovementEvent:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorruptLog(f"line {line_no}: invalid JSON: {exc}", line=line_no) from exc
    return MovementEvent.from_dict(raw)


def check_sequences(events: Iterable[MovementEvent]) -> None:
    """Verify per-item sequences are gapless and strictly increasing.

    Raises CorruptLog naming the first offending sequence number.
    """
    last: dict[str, int] = {}
    for ev in events:
        expected = last.get(ev.item_label, 0) + 1
        if ev.sequence != expected:
            raise CorruptLog(
                f"ledger gap for item {ev.item_label!r}: expected sequence "
                f"{expected}, found {ev.sequence}",
                item_label=ev.item_label,
                sequence=ev.sequence,
                expected=expected,
            )
        last[ev.item_label] = ev.sequence


class EventLedger:
    """Total-ordered, append-only event store.

    With a path the ledger is durable: appends are written and fsync'd before
    the call returns. Without one it is an in-memory log with the same
    interface, used by tests and ephemeral tooling.
    """

    def __init__(self, path: Optional[Path] = None):
        self._path = Path(path) if path is not None else None
        self._events: list[MovementEvent] = []
        self._lock = threading.Lock()
        self._fh = None
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            if self._path.exists():
                self._events = list(self._read_all())
            self._fh = open(self._path, "a", encoding="utf-8")

    @property
    def path(self) -> Optional[Path]:
        return self._path

    def _read_all(self) -> Iterator[MovementEvent]:
        assert self._path is not None
        with open(self._path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                yield parse_event_line(line, line_no)

    def append(self, events: list[MovementEvent]) -> None:
        """Durably append a batch; one fsync per call."""
        with self._lock:
            if self._fh is not None:
                for ev in events:
                    self._fh.write(ev.to_json() + "\n")
                self._fh.flush()
                os.fsync(self._fh.fileno())
            self._events.extend(events)

    def events(self) -> list[MovementEvent]:
        with self._lock:
            return list(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[MovementEvent]:
        return iter(self.events())

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


@dataclass(slots=True)
class ItemTally:
    """Per-item stock position plus inflow counters for the conservation check."""

    on_hand: int = 0
    reserved: int = 0
    dispatched: int = 0
    on_site: int = 0
    temporarily_stored: int = 0
    consumed_or_damaged: int = 0
    recycled: int = 0
    retired: int = 0
    registered_in: int = 0
    adjusted_in: int = 0

    TALLY_FIELDS = (
        "on_hand",
        "reserved",
        "dispatched",
        "on_site",
        "temporarily_stored",
        "consumed_or_damaged",
        "recycled",
        "retired",
    )

    def to_dict(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in self.TALLY_FIELDS}

    def copy(self) -> "ItemTally":
        return ItemTally(
            on_hand=self.on_hand,
            reserved=self.reserved,
            dispatched=self.dispatched,
            on_site=self.on_site,
            temporarily_stored=self.temporarily_stored,
            consumed_or_damaged=self.consumed_or_damaged,
            recycled=self.recycled,
            retired=self.retired,
            registered_in=self.registered_in,
            adjusted_in=self.adjusted_in,
        )

    def conservation_holds(self) -> bool:
        # Every unit that ever entered must sit in exactly one bucket; reserved
        # units stay inside on_hand so they do not appear on the right side.
        inflow = self.registered_in + self.adjusted_in
        located = (
            self.on_hand
            + self.dispatched
            + self.on_site
            + self.temporarily_stored
            + self.consumed_or_damaged
            + self.recycled
            + self.retired
        )
        return inflow == located and 0 <= self.reserved <= self.on_hand


@dataclass(slots=True)
class ListProgress:
    """Cumulative per-(list, item) counters used for kind-legality checks."""

    reserved: int = 0
    released: int = 0
    picked: int = 0
    packed: int = 0
    dispatched: int = 0
    received: int = 0
    returned: int = 0
    consumed: int = 0
    temp_stored: int = 0

    @property
    def outstanding_reservation(self) -> int:
        return self.reserved - self.released - self.dispatched

    @property
    def dispositioned(self) -> int:
        return self.returned + self.consumed + self.temp_stored


@dataclass
class StockSnapshot:
    """Materialised view of the ledger: fold of all events up to ``as_of``."""

    as_of: int = 0
    tallies: dict[str, ItemTally] = field(default_factory=dict)
    progress: dict[tuple[str, str], ListProgress] = field(default_factory=dict)

    def tally(self, label: str) -> ItemTally:
        return self.tallies.setdefault(label, ItemTally())

    def list_progress(self, list_ref: str, label: str) -> ListProgress:
        return self.progress.setdefault((list_ref, label), ListProgress())

    def to_dict(self) -> dict[str, Any]:
        return {
            "as_of": self.as_of,
            "items": {
                label: tally.to_dict() for label, tally in sorted(self.tallies.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True)
