"""Shared test machinery: independent oracles and deterministic drivers.

The oracles here deliberately re-derive results from first principles (plain
dict arithmetic over the raw event log) so they stay independent of the
production fold they are checking.
"""

from __future__ import annotations

import random
from datetime import datetime, timedelta, timezone
from typing import Callable, Optional

from circuloop.config import ServiceConfig
from circuloop.inventory import Category, ConditionGrade, ItemDraft, Warehouse
from circuloop.ledger import EventKind, MovementEvent
from circuloop.service import CirculoopService


def make_service(
    clock: Optional[Callable[[], datetime]] = None,
    data_dir=None,
    **config_kwargs,
) -> CirculoopService:
    """In-memory service unless a data_dir is given."""
    config = ServiceConfig(**config_kwargs)
    if data_dir is not None:
        config.data_dir = data_dir
        return CirculoopService(config, durable=True, **(
            {"clock": clock} if clock else {}))
    return CirculoopService(config, durable=False, **(
        {"clock": clock} if clock else {}))

TALLY_KEYS = (
    "on_hand",
    "reserved",
    "dispatched",
    "on_site",
    "temporarily_stored",
    "consumed_or_damaged",
    "recycled",
    "retired",
)


class TickClock:
    """Deterministic clock advancing a fixed step per call."""

    def __init__(self, start: str = "2026-03-01T08:00:00+00:00", step_seconds: float = 60.0):
        self.now = datetime.fromisoformat(start)
        self.step = timedelta(seconds=step_seconds)

    def __call__(self) -> datetime:
        current = self.now
        self.now = self.now + self.step
        return current


def brute_force_fold(events: list[MovementEvent]) -> dict[str, dict[str, int]]:
    """Independent re-derivation of per-item tallies from the raw log."""
    tallies: dict[str, dict[str, int]] = {}

    def t(label: str) -> dict[str, int]:
        return tallies.setdefault(label, {k: 0 for k in TALLY_KEYS})

    for ev in events:
        k, q, tally = ev.kind, ev.quantity, t(ev.item_label)
        if k == EventKind.REGISTER:
            tally["on_hand"] += q
        elif k == EventKind.ADJUST_QUANTITY:
            tally["on_hand"] += q
        elif k == EventKind.RESERVE:
            tally["reserved"] += q
        elif k == EventKind.RELEASE_RESERVATION:
            tally["reserved"] -= q
        elif k == EventKind.DISPATCH:
            tally["on_hand"] -= q
            tally["reserved"] -= q
            tally["dispatched"] += q
        elif k == EventKind.RECEIVE:
            tally["dispatched"] -= q
            tally["on_site"] += q
        elif k == EventKind.RETURN_RESTOCK:
            tally["on_site"] -= q
            tally["on_hand"] += q
        elif k == EventKind.MARK_CONSUMED_OR_DAMAGED:
            if ev.list_ref:
                tally["on_site"] -= q
            else:
                tally["on_hand"] -= q
            tally["consumed_or_damaged"] += q
        elif k == EventKind.TEMP_STORE:
            tally["on_site"] -= q
            tally["temporarily_stored"] += q
        elif k == EventKind.ROUTE_RECYCLE:
            tally["on_hand"] -= q
            tally["recycled"] += q
        elif k == EventKind.RETIRE:
            tally["on_hand"] -= q
            tally["retired"] += q
        # Pick/Pack/Inspect/UpdateMetadata leave the tallies untouched.
    return tallies


def snapshot_tallies(warehouse: Warehouse) -> dict[str, dict[str, int]]:
    return {
        label: tally.to_dict()
        for label, tally in warehouse.snapshot().tallies.items()
    }


MATERIALS = ["wood-based", "metal", "plastic", "textile", "glass", "electronic", "mixed"]


def make_draft(rng: random.Random, label: str) -> ItemDraft:
    return ItemDraft(
        label=label,
        name=f"Prop {label}",
        category=rng.choice(list(Category)),
        material=rng.choice(MATERIALS),
        quantity_on_hand=rng.randint(0, 80),
        condition=ConditionGrade(rng.choice("AABBC")),
        remaining_lifespan=rng.randint(1, 10),
        embodied_carbon_per_unit=round(rng.uniform(0.1, 45.0), 2),
        location=f"R{rng.randint(1, 5)}-B{rng.randint(1, 20)}",
    )


def ensure_pool(service: CirculoopService, rng: random.Random, size: int = 15) -> list[str]:
    """Register a shared pool of well-stocked items (idempotent)."""
    labels = []
    for i in range(size):
        label = f"POOL-{i:03d}"
        if not service.warehouse.has_item(label):
            draft = make_draft(rng, label)
            draft.quantity_on_hand = rng.randint(200, 400)
            draft.condition = ConditionGrade(rng.choice("AAB"))
            draft.remaining_lifespan = rng.randint(2, 12)
            service.warehouse.register_item(draft, "admin")
        labels.append(label)
    return labels


def build_random_project(service: CirculoopService, rng: random.Random,
                         list_id: str) -> object:
    """Drive one randomized project to Reconciled through the real workflow."""
    from circuloop.workflow import Disposition, LineRequest, ListState, Role

    labels = ensure_pool(service, rng)
    wf = service.workflow
    chosen = rng.sample(labels, rng.randint(1, 6))
    lines = []
    for label in chosen:
        if service.warehouse.available_units(label) < 25:
            service.warehouse.apply_event(
                EventKind.ADJUST_QUANTITY, label, 200, "admin"
            )
        available = service.warehouse.available_units(label)
        lines.append(LineRequest(label, rng.randint(1, min(20, available))))
    plist = wf.create_outbound(
        f"Random {list_id}", "Client", lines, "lead", Role.PROJECT_LEAD,
        list_id=list_id,
    )
    wf.transition(list_id, ListState.SUBMITTED, "lead", Role.PROJECT_LEAD)
    wf.transition(list_id, ListState.APPROVED, "lead", Role.PROJECT_LEAD)
    wf.transition(list_id, ListState.PICKING, "admin", Role.WAREHOUSE_ADMINISTRATOR)
    wf.transition(list_id, ListState.PACKED, "admin", Role.WAREHOUSE_ADMINISTRATOR)
    dispatch = {
        ln.line_no: rng.randint(1, ln.quantity_requested) for ln in plist.lines
    }
    wf.transition(
        list_id, ListState.DISPATCHED, "admin", Role.WAREHOUSE_ADMINISTRATOR,
        dispatch_quantities=dispatch,
    )
    wf.transition(list_id, ListState.RECEIVED_ON_SITE, "lead", Role.PROJECT_LEAD)
    wf.transition(list_id, ListState.EVENT_ENDED, "lead", Role.PROJECT_LEAD)
    wf.transition(list_id, ListState.INBOUND_OPEN, "admin",
                  Role.WAREHOUSE_ADMINISTRATOR)
    for ln in plist.lines:
        remaining = ln.quantity_dispatched
        returned = rng.randint(0, remaining)
        remaining -= returned
        consumed = rng.randint(0, remaining)
        stored = remaining - consumed
        for disposition, qty in (
            (Disposition.RETURNED_RESTOCKED, returned),
            (Disposition.CONSUMED_OR_DAMAGED, consumed),
            (Disposition.TEMPORARILY_STORED, stored),
        ):
            if qty > 0:
                wf.set_disposition(
                    list_id, ln.line_no, disposition, qty, "admin",
                    Role.WAREHOUSE_ADMINISTRATOR,
                )
    return wf.reconcile(list_id, "admin", Role.WAREHOUSE_ADMINISTRATOR)


class RandomEventDriver:
    """Feeds a warehouse random *legal* events while mirroring the expected
    tallies with plain dict arithmetic (the conservation/fold oracle)."""

    def __init__(self, warehouse: Warehouse, rng: random.Random, n_items: int = 8,
                 n_lists: int = 3, actor: str = "admin"):
        self.wh = warehouse
        self.rng = rng
        self.actor = actor
        self.labels: list[str] = []
        self.lists = [f"list-{i}" for i in range(1, n_lists + 1)]
        self.mirror: dict[str, dict[str, int]] = {}
        # (list, label) -> cumulative progress counters
        self.progress: dict[tuple[str, str], dict[str, int]] = {}
        for i in range(n_items):
            label = f"RI-{i:03d}"
            draft = make_draft(rng, label)
            draft.condition = ConditionGrade(rng.choice("AABB"))  # keep reservable
            warehouse.register_item(draft, actor)
            self.labels.append(label)
            self.mirror[label] = {k: 0 for k in TALLY_KEYS}
            self.mirror[label]["on_hand"] = draft.quantity_on_hand

    def _prog(self, list_ref: str, label: str) -> dict[str, int]:
        return self.progress.setdefault(
            (list_ref, label),
            {"reserved": 0, "released": 0, "picked": 0, "packed": 0,
             "dispatched": 0, "received": 0, "disposed": 0},
        )

    def _legal_moves(self, label: str, list_ref: str) -> list[tuple]:
        moves: list[tuple] = [("adjust", label)]
        m = self.mirror[label]
        if m["on_hand"] - m["reserved"] > 0:
            moves += [("reserve", label), ("writeoff", label),
                      ("recycle", label), ("retire", label)]
        p = self._prog(list_ref, label)
        if p["reserved"] - p["released"] - p["dispatched"] > 0:
            moves.append(("release", label, list_ref))
        if p["picked"] < p["reserved"] - p["released"]:
            moves.append(("pick", label, list_ref))
        if p["packed"] < p["picked"]:
            moves.append(("pack", label, list_ref))
        if min(p["packed"], p["reserved"] - p["released"]) - p["dispatched"] > 0:
            moves.append(("dispatch", label, list_ref))
        if p["received"] < p["dispatched"]:
            moves.append(("receive", label, list_ref))
        if p["disposed"] < p["received"]:
            moves.append(("dispose", label, list_ref))
        return moves

    def step(self) -> MovementEvent | None:
        """Apply one random legal event; returns it (None if no move legal)."""
        rng = self.rng
        # Sample an (item, list) pair first and enumerate just its legal moves;
        # an adjust is always legal so the move set is never empty.
        label = rng.choice(self.labels)
        list_ref = rng.choice(self.lists)
        moves = self._legal_moves(label, list_ref)
        move = rng.choice(moves)
        kind, label = move[0], move[1]
        m = self.mirror[label]
        if kind == "adjust":
            q = rng.randint(1, 20)
            ev = self.wh.apply_event(EventKind.ADJUST_QUANTITY, label, q, self.actor).event
            m["on_hand"] += q
            return ev
        if kind == "reserve":
            list_ref = rng.choice(self.lists)
            q = rng.randint(1, m["on_hand"] - m["reserved"])
            ev = self.wh.apply_event(
                EventKind.RESERVE, label, q, self.actor, list_ref=list_ref
            ).event
            m["reserved"] += q
            self._prog(list_ref, label)["reserved"] += q
            return ev
        if kind == "writeoff":
            q = rng.randint(1, m["on_hand"] - m["reserved"])
            ev = self.wh.apply_event(
                EventKind.MARK_CONSUMED_OR_DAMAGED, label, q, self.actor
            ).event
            m["on_hand"] -= q
            m["consumed_or_damaged"] += q
            return ev
        if kind == "recycle":
            q = rng.randint(1, m["on_hand"] - m["reserved"])
            ev = self.wh.apply_event(EventKind.ROUTE_RECYCLE, label, q, self.actor).event
            m["on_hand"] -= q
            m["recycled"] += q
            return ev
        if kind == "retire":
            q = rng.randint(1, m["on_hand"] - m["reserved"])
            ev = self.wh.apply_event(EventKind.RETIRE, label, q, self.actor).event
            m["on_hand"] -= q
            m["retired"] += q
            return ev

        list_ref = move[2]
        p = self._prog(list_ref, label)
        if kind == "release":
            q = rng.randint(1, p["reserved"] - p["released"] - p["dispatched"])
            ev = self.wh.apply_event(
                EventKind.RELEASE_RESERVATION, label, q, self.actor, list_ref=list_ref
            ).event
            m["reserved"] -= q
            p["released"] += q
            return ev
        if kind == "pick":
            q = rng.randint(1, p["reserved"] - p["released"] - p["picked"])
            ev = self.wh.apply_event(
                EventKind.PICK, label, q, self.actor, list_ref=list_ref
            ).event
            p["picked"] += q
            return ev
        if kind == "pack":
            q = rng.randint(1, p["picked"] - p["packed"])
            ev = self.wh.apply_event(
                EventKind.PACK, label, q, self.actor, list_ref=list_ref
            ).event
            p["packed"] += q
            return ev
        if kind == "dispatch":
            q = rng.randint(
                1, min(p["packed"], p["reserved"] - p["released"]) - p["dispatched"]
            )
            ev = self.wh.apply_event(
                EventKind.DISPATCH, label, q, self.actor, list_ref=list_ref
            ).event
            m["on_hand"] -= q
            m["reserved"] -= q
            m["dispatched"] += q
            p["dispatched"] += q
            return ev
        if kind == "receive":
            q = rng.randint(1, p["dispatched"] - p["received"])
            ev = self.wh.apply_event(
                EventKind.RECEIVE, label, q, self.actor, list_ref=list_ref
            ).event
            m["dispatched"] -= q
            m["on_site"] += q
            p["received"] += q
            return ev
        if kind == "dispose":
            q = rng.randint(1, p["received"] - p["disposed"])
            dkind = rng.choice(
                [EventKind.RETURN_RESTOCK, EventKind.MARK_CONSUMED_OR_DAMAGED,
                 EventKind.TEMP_STORE]
            )
            ev = self.wh.apply_event(dkind, label, q, self.actor, list_ref=list_ref).event
            m["on_site"] -= q
            if dkind is EventKind.RETURN_RESTOCK:
                m["on_hand"] += q
            elif dkind is EventKind.MARK_CONSUMED_OR_DAMAGED:
                m["consumed_or_damaged"] += q
            else:
                m["temporarily_stored"] += q
            p["disposed"] += q
            return ev
        raise AssertionError(f"unhandled move {kind}")

    def run(self, n: int) -> int:
        applied = 0
        for _ in range(n):
            if self.step() is not None:
                applied += 1
        return applied
