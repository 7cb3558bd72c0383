"""Project logistics state machine, permission matrix, and dispositions."""

import random

import pytest

from circuloop.errors import (
    EmptyList,
    Forbidden,
    IllegalState,
    IllegalTransition,
    IncompleteDispositions,
    InsufficientStock,
    InvalidQuantity,
    LinesFrozen,
    OverDisposition,
    UnknownItem,
)
from circuloop.fixtures import (
    DEMO_DISPOSITIONS,
    DEMO_LINES,
    DEMO_LIST_ID,
    run_demo_journey,
    seed_demo_items,
)
from circuloop.inventory import Category, ConditionGrade, ItemDraft
from circuloop.ledger import EventKind
from circuloop.workflow import (
    EDGES,
    Disposition,
    LineOrigin,
    LineRequest,
    ListState,
    PermissionMatrix,
    Role,
)

from helpers import TickClock, brute_force_fold, make_service, snapshot_tallies

LEAD = ("lead", Role.PROJECT_LEAD)
ADMIN = ("admin", Role.WAREHOUSE_ADMINISTRATOR)
DESIGNER = ("designer", Role.DESIGNER)
FINANCE = ("finance", Role.FINANCE_REVIEWER)

# The documented matrix, restated independently of the shipped config file.
EXPECTED_MATRIX = {
    ("Draft", "Submitted"): {"ProjectLead"},
    ("Submitted", "Approved"): {"ProjectLead", "FinanceReviewer"},
    ("Submitted", "Rejected"): {"ProjectLead", "FinanceReviewer"},
    ("Approved", "Picking"): {"WarehouseAdministrator"},
    ("Picking", "Packed"): {"WarehouseAdministrator"},
    ("Packed", "Dispatched"): {"WarehouseAdministrator"},
    ("Dispatched", "ReceivedOnSite"): {"ProjectLead"},
    ("ReceivedOnSite", "EventEnded"): {"ProjectLead", "WarehouseAdministrator"},
    ("EventEnded", "InboundOpen"): {"ProjectLead", "WarehouseAdministrator"},
    ("InboundOpen", "Reconciled"): {"WarehouseAdministrator"},
}


def stocked_service(**kwargs):
    svc = make_service(**kwargs)
    seed_demo_items(svc)
    return svc


class TestCreateOutbound:
    def test_fixture_list_has_zero_purchase_lines(self):
        svc = stocked_service()
        plist = svc.workflow.create_outbound(
            "Showcase", "Client", list(DEMO_LINES), "lead", Role.PROJECT_LEAD
        )
        assert plist.state is ListState.DRAFT
        assert sum(1 for ln in plist.lines if ln.origin.value == "NewPurchase") == 0
        assert sum(ln.quantity_requested for ln in plist.lines) == 394

    def test_empty_line_set_rejected(self):
        svc = stocked_service()
        with pytest.raises(EmptyList):
            svc.workflow.create_outbound("P", "C", [], "lead", Role.PROJECT_LEAD)

    def test_insufficient_stock_names_the_line(self):
        svc = make_service()
        svc.warehouse.register_item(
            ItemDraft("SCARCE-01", "Scarce", Category.EVENT_PROPS, "metal", 6),
            "admin",
        )
        with pytest.raises(InsufficientStock) as err:
            svc.workflow.create_outbound(
                "P", "C", [LineRequest("SCARCE-01", 10)], "lead", Role.PROJECT_LEAD
            )
        assert err.value.details["line_no"] == 1
        assert err.value.details["available"] == 6

    def test_only_project_lead_creates(self):
        svc = stocked_service()
        with pytest.raises(Forbidden):
            svc.workflow.create_outbound(
                "P", "C", [LineRequest("EP-DECK-01", 1)], "designer", Role.DESIGNER
            )

    def test_reservation_deferred_until_approval(self):
        svc = stocked_service()
        svc.workflow.create_outbound(
            "P", "C", [LineRequest("EP-DECK-01", 5)], "lead", Role.PROJECT_LEAD
        )
        assert svc.warehouse.get_item("EP-DECK-01").quantity_reserved == 0


class TestTransition:
    def test_designer_cannot_approve(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.SUBMITTED)
        with pytest.raises(Forbidden):
            svc.workflow.transition(
                plist.list_id, ListState.APPROVED, "designer", Role.DESIGNER
            )

    def test_draft_to_dispatched_is_not_an_edge(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.DRAFT)
        with pytest.raises(IllegalTransition):
            svc.workflow.transition(
                plist.list_id, ListState.DISPATCHED, "admin",
                Role.WAREHOUSE_ADMINISTRATOR,
            )

    def test_approval_fires_reserve_events_per_line(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.APPROVED)
        reserves = [
            e for e in svc.ledger.events()
            if e.kind is EventKind.RESERVE and e.list_ref == plist.list_id
        ]
        assert len(reserves) == len(DEMO_LINES)
        assert svc.warehouse.get_item("EP-DECK-01").quantity_reserved == 100

    def test_dispatch_milestone_moves_394_units(self):
        svc = stocked_service()
        before = snapshot_tallies(svc.warehouse)
        run_demo_journey(svc, stop_at=ListState.DISPATCHED)
        after = snapshot_tallies(svc.warehouse)
        moved = sum(
            before[label]["on_hand"] - after[label]["on_hand"] for label in before
        )
        dispatched = sum(after[label]["dispatched"] for label in after)
        assert moved == 394 and dispatched == 394

    def test_milestone_log_replays_to_current_state(self):
        svc = stocked_service()
        plist = run_demo_journey(svc)
        chain = [m.milestone for m in plist.milestones]
        assert chain[0] is ListState.DRAFT
        for source, target in zip(chain, chain[1:]):
            assert (source, target) in EDGES
        assert chain[-1] is plist.state
        assert ListState.INBOUND_OPEN in chain  # never Reconciled without it

    def test_retried_transition_with_same_key_is_idempotent(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.DRAFT)
        events_before = len(svc.ledger)
        svc.workflow.transition(
            plist.list_id, ListState.SUBMITTED, "lead", Role.PROJECT_LEAD,
            idempotency_key="retry-1",
        )
        again = svc.workflow.transition(
            plist.list_id, ListState.SUBMITTED, "lead", Role.PROJECT_LEAD,
            idempotency_key="retry-1",
        )
        assert again.state is ListState.SUBMITTED
        assert sum(1 for m in again.milestones
                   if m.milestone is ListState.SUBMITTED) == 1
        assert len(svc.ledger) == events_before  # no inventory side effects here

    def test_fresh_duplicate_transition_rejected(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.SUBMITTED)
        with pytest.raises(IllegalTransition):
            svc.workflow.transition(
                plist.list_id, ListState.SUBMITTED, "lead", Role.PROJECT_LEAD
            )

    def test_rejected_is_terminal(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.SUBMITTED)
        svc.workflow.transition(
            plist.list_id, ListState.REJECTED, "finance", Role.FINANCE_REVIEWER
        )
        with pytest.raises(IllegalTransition):
            svc.workflow.transition(
                plist.list_id, ListState.APPROVED, "finance", Role.FINANCE_REVIEWER
            )

    def test_exhaustive_matrix_agrees_with_documented_table(self):
        svc = make_service()
        matrix = svc.matrix
        states = [s for s in ListState]
        for source in states:
            for target in states:
                for role in Role:
                    allowed = matrix.allows_transition(source, target, role)
                    expected = role.value in EXPECTED_MATRIX.get(
                        (source.value, target.value), set()
                    )
                    assert allowed == expected, (source, target, role)


class TestHighValueGate:
    def _high_value_service(self):
        svc = make_service()
        svc.warehouse.register_item(
            ItemDraft("LUX-01", "Crystal chandelier", Category.EVENT_PROPS,
                      "glass", 10, ConditionGrade.A, 10, None, 120.0, "R1-B1"),
            "admin",
        )
        plist = svc.workflow.create_outbound(
            "Gala", "House", [LineRequest("LUX-01", 2)], "lead", Role.PROJECT_LEAD
        )
        svc.workflow.transition(
            plist.list_id, ListState.SUBMITTED, "lead", Role.PROJECT_LEAD
        )
        return svc, plist

    def test_flagged_list_requires_finance_reviewer(self):
        svc, plist = self._high_value_service()
        assert plist.high_value is True
        with pytest.raises(Forbidden):
            svc.workflow.transition(
                plist.list_id, ListState.APPROVED, "lead", Role.PROJECT_LEAD
            )
        approved = svc.workflow.transition(
            plist.list_id, ListState.APPROVED, "finance", Role.FINANCE_REVIEWER
        )
        assert approved.state is ListState.APPROVED

    def test_non_flagged_list_approvable_by_lead(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.SUBMITTED)
        assert plist.high_value is False
        approved = svc.workflow.transition(
            plist.list_id, ListState.APPROVED, "lead", Role.PROJECT_LEAD
        )
        assert approved.state is ListState.APPROVED


class TestInbound:
    def test_open_inbound_exposes_394_units_awaiting_disposition(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.INBOUND_OPEN)
        assert sum(ln.undispositioned for ln in plist.lines) == 394

    def test_open_inbound_twice_rejected(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.INBOUND_OPEN)
        with pytest.raises(IllegalTransition):
            svc.workflow.open_inbound(plist.list_id, "admin",
                                      Role.WAREHOUSE_ADMINISTRATOR)

    def test_no_new_lines_once_inbound_open(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.INBOUND_OPEN)
        with pytest.raises(LinesFrozen):
            svc.workflow.add_line(
                plist.list_id, LineRequest("EP-DECK-01", 1), "lead", Role.PROJECT_LEAD
            )

    def test_requires_event_ended(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.RECEIVED_ON_SITE)
        with pytest.raises(IllegalTransition):
            svc.workflow.open_inbound(plist.list_id, "admin",
                                      Role.WAREHOUSE_ADMINISTRATOR)


class TestDispositions:
    def test_fixture_consumed_tally_is_190(self):
        svc = stocked_service()
        run_demo_journey(svc)
        consumed = sum(
            t["consumed_or_damaged"] for t in snapshot_tallies(svc.warehouse).values()
        )
        assert consumed == 190

    def test_zero_quantity_rejected(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.INBOUND_OPEN)
        with pytest.raises(InvalidQuantity):
            svc.workflow.set_disposition(
                plist.list_id, 1, Disposition.RETURNED_RESTOCKED, 0,
                "admin", Role.WAREHOUSE_ADMINISTRATOR,
            )

    def test_over_disposition_rejected(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.INBOUND_OPEN)
        line = plist.line(1)  # 100 dispatched
        svc.workflow.set_disposition(
            plist.list_id, 1, Disposition.CONSUMED_OR_DAMAGED, 99,
            "admin", Role.WAREHOUSE_ADMINISTRATOR,
        )
        with pytest.raises(OverDisposition):
            svc.workflow.set_disposition(
                plist.list_id, 1, Disposition.RETURNED_RESTOCKED, 2,
                "admin", Role.WAREHOUSE_ADMINISTRATOR,
            )
        assert line.undispositioned == 1

    def test_designer_cannot_disposition(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.INBOUND_OPEN)
        with pytest.raises(Forbidden):
            svc.workflow.set_disposition(
                plist.list_id, 1, Disposition.RETURNED_RESTOCKED, 1,
                "designer", Role.DESIGNER,
            )

    def test_disposition_before_inbound_open_rejected(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.EVENT_ENDED)
        with pytest.raises(IllegalState):
            svc.workflow.set_disposition(
                plist.list_id, 1, Disposition.RETURNED_RESTOCKED, 1,
                "admin", Role.WAREHOUSE_ADMINISTRATOR,
            )

    def test_retried_disposition_with_same_key_fires_once(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.INBOUND_OPEN)
        svc.workflow.set_disposition(
            plist.list_id, 1, Disposition.RETURNED_RESTOCKED, 10,
            "admin", Role.WAREHOUSE_ADMINISTRATOR, idempotency_key="d-1",
        )
        events_before = len(svc.ledger)
        line = svc.workflow.set_disposition(
            plist.list_id, 1, Disposition.RETURNED_RESTOCKED, 10,
            "admin", Role.WAREHOUSE_ADMINISTRATOR, idempotency_key="d-1",
        )
        assert len(svc.ledger) == events_before
        assert line.dispositions[Disposition.RETURNED_RESTOCKED] == 10


class TestReconcile:
    def test_fixture_reconciles_and_restocks_198(self):
        svc = stocked_service()
        before = sum(t["on_hand"] for t in snapshot_tallies(svc.warehouse).values())
        plist = run_demo_journey(svc)
        after = sum(t["on_hand"] for t in snapshot_tallies(svc.warehouse).values())
        assert plist.state is ListState.RECONCILED
        assert after == before - 394 + 198

    def test_one_undispositioned_unit_blocks_reconcile(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.INBOUND_OPEN)
        for line_no, entries in DEMO_DISPOSITIONS.items():
            for disposition, quantity in entries.items():
                if line_no == 4:
                    quantity -= 1  # leave one unit hanging on line 4
                if quantity:
                    svc.workflow.set_disposition(
                        plist.list_id, line_no, disposition, quantity,
                        "admin", Role.WAREHOUSE_ADMINISTRATOR,
                    )
        with pytest.raises(IncompleteDispositions) as err:
            svc.workflow.reconcile(plist.list_id, "admin",
                                   Role.WAREHOUSE_ADMINISTRATOR)
        assert err.value.details["lines"][0]["line_no"] == 4

    def test_disposition_partition_sums_to_dispatched(self):
        svc = stocked_service()
        plist = run_demo_journey(svc)
        for ln in plist.lines:
            assert ln.dispositioned == ln.quantity_dispatched

    def test_all_returned_list_restores_pre_dispatch_snapshot(self):
        # Synthetic all-returned project: ledger fold must equal the
        # pre-dispatch fold exactly once everything is restocked.
        svc = stocked_service()
        plist = svc.workflow.create_outbound(
            "Round trip", "C", [LineRequest("EP-DECK-01", 30)],
            "lead", Role.PROJECT_LEAD,
        )
        lid = plist.list_id
        pre_dispatch = brute_force_fold(svc.ledger.events())
        for target, actor in [
            (ListState.SUBMITTED, LEAD), (ListState.APPROVED, LEAD),
            (ListState.PICKING, ADMIN), (ListState.PACKED, ADMIN),
            (ListState.DISPATCHED, ADMIN), (ListState.RECEIVED_ON_SITE, LEAD),
            (ListState.EVENT_ENDED, LEAD), (ListState.INBOUND_OPEN, ADMIN),
        ]:
            svc.workflow.transition(lid, target, actor[0], actor[1])
        svc.workflow.set_disposition(
            lid, 1, Disposition.RETURNED_RESTOCKED, 30, "admin",
            Role.WAREHOUSE_ADMINISTRATOR,
        )
        svc.workflow.reconcile(lid, "admin", Role.WAREHOUSE_ADMINISTRATOR)
        post = brute_force_fold(svc.ledger.events())
        assert post == pre_dispatch

    def test_reconcile_blocked_for_project_lead(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.INBOUND_OPEN)
        for line_no, entries in DEMO_DISPOSITIONS.items():
            for disposition, quantity in entries.items():
                svc.workflow.set_disposition(
                    plist.list_id, line_no, disposition, quantity,
                    "admin", Role.WAREHOUSE_ADMINISTRATOR,
                )
        with pytest.raises(Forbidden):
            svc.workflow.reconcile(plist.list_id, "lead", Role.PROJECT_LEAD)


class TestNotifications:
    def test_packed_list_notifies_admin_not_lead(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.PACKED)
        admin_actions = svc.workflow.pending_actions(Role.WAREHOUSE_ADMINISTRATOR)
        lead_actions = svc.workflow.pending_actions(Role.PROJECT_LEAD)
        assert [n.list_id for n in admin_actions] == [plist.list_id]
        assert admin_actions[0].required_action is ListState.DISPATCHED
        assert lead_actions == []

    def test_no_active_lists_no_actions(self):
        svc = make_service()
        for role in Role:
            assert svc.workflow.pending_actions(role) == []

    def test_union_over_roles_equals_open_set_without_duplicates(self):
        svc = stocked_service()
        run_demo_journey(svc, list_id="j1", stop_at=ListState.SUBMITTED)
        svc.workflow.create_outbound(
            "Second", "C", [LineRequest("TG-GLASS-04", 2)], "lead",
            Role.PROJECT_LEAD, list_id="j2",
        )
        union = []
        for role in Role:
            union.extend(n.notification_id for n in svc.workflow.pending_actions(role))
        open_ids = [n.notification_id for n in svc.workflow.all_open_notifications()]
        assert sorted(union) == sorted(open_ids)
        assert len(union) == len(set(union))

    def test_exactly_one_open_notification_per_list(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.PICKING)
        open_for_list = [
            n for n in svc.workflow.all_open_notifications()
            if n.list_id == plist.list_id
        ]
        assert len(open_for_list) == 1

    def test_reconciled_list_has_no_open_notification(self):
        svc = stocked_service()
        plist = run_demo_journey(svc)
        assert plist.open_notification() is None


class TestSubstitution:
    def _with_purchase_line(self):
        svc = stocked_service()
        plist = svc.workflow.create_outbound(
            "P", "C",
            [LineRequest("EP-DECK-01", 5),
             LineRequest("EP-FRAME-02", 4, origin=LineOrigin.NEW_PURCHASE)],
            "lead", Role.PROJECT_LEAD,
        )
        return svc, plist

    def test_substitution_increments_refuse_count(self):
        svc, plist = self._with_purchase_line()
        assert plist.refuse_count() == 0
        svc.workflow.substitute_line(
            plist.list_id, 2, "EP-FRAME-02", "designer", Role.DESIGNER
        )
        assert plist.refuse_count() == 1

    def test_substitute_on_approved_list_rejected(self):
        svc = stocked_service()
        plist = run_demo_journey(svc, stop_at=ListState.APPROVED)
        with pytest.raises(IllegalState):
            svc.workflow.substitute_line(
                plist.list_id, 1, "EP-FRAME-02", "lead", Role.PROJECT_LEAD
            )

    def test_refuse_count_equals_recount_from_origins(self):
        svc, plist = self._with_purchase_line()
        svc.workflow.substitute_line(
            plist.list_id, 2, "EP-FRAME-02", "procure", Role.PROCUREMENT
        )
        recount = sum(
            1 for ln in plist.lines
            if ln.origin is LineOrigin.SUBSTITUTED_FROM_STOCK
        )
        assert plist.refuse_count() == recount == 1

    def test_substitution_requires_available_stock(self):
        svc = stocked_service()
        plist = svc.workflow.create_outbound(
            "P", "C",
            [LineRequest("EP-DECK-01", 10_000, origin=LineOrigin.NEW_PURCHASE)],
            "lead", Role.PROJECT_LEAD,
        )
        with pytest.raises(InsufficientStock):
            svc.workflow.substitute_line(
                plist.list_id, 1, "EP-DECK-01", "lead", Role.PROJECT_LEAD
            )


class TestTraceability:
    def test_every_list_ref_event_maps_to_milestone_or_disposition(self):
        svc = stocked_service()
        plist = run_demo_journey(svc)
        milestone_states = {m.milestone for m in plist.milestones}
        side_effect_kinds = {
            EventKind.RESERVE: ListState.APPROVED,
            EventKind.PICK: ListState.PICKING,
            EventKind.PACK: ListState.PACKED,
            EventKind.DISPATCH: ListState.DISPATCHED,
            EventKind.RECEIVE: ListState.RECEIVED_ON_SITE,
        }
        disposition_kinds = {
            EventKind.RETURN_RESTOCK,
            EventKind.MARK_CONSUMED_OR_DAMAGED,
            EventKind.TEMP_STORE,
        }
        for ev in svc.ledger.events():
            if ev.list_ref != plist.list_id:
                continue
            if ev.kind in side_effect_kinds:
                assert side_effect_kinds[ev.kind] in milestone_states
            else:
                assert ev.kind in disposition_kinds
                line_labels = {ln.item_label for ln in plist.lines if ln.dispositions}
                assert ev.item_label in line_labels
