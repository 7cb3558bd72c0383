"""Demo data: the canonical short-cycle project fixture and a synthetic
bootstrap catalogue.

The demo journey dispatches 394 units across six lines with no purchase
lines, then dispositions 198 returned, 190 consumed, and 6 temporarily
stored, which pins the regression numbers the reports must reproduce.
"""

from __future__ import annotations

import random

from .inventory import Category, ConditionGrade, ItemDraft
from .service import CirculoopService
from .workflow import Disposition, LineRequest, ListState, ProjectList

DEMO_LIST_ID = "demo-4_3"

DEMO_ITEMS = [
    ItemDraft("EP-DECK-01", "Modular stage deck", Category.EVENT_PROPS,
              "wood-based", 140, ConditionGrade.B, 10, None, 15.0, "R1-B2"),
    ItemDraft("EP-FRAME-02", "Steel display frame", Category.EVENT_PROPS,
              "metal", 80, ConditionGrade.A, 20, None, 14.0, "R1-B3"),
    ItemDraft("EE-SCREEN-03", "LED screen tile", Category.ELECTRONICS_ELECTRICAL,
              "electronic", 30, ConditionGrade.B, 15, None, 40.0, "R2-B1"),
    ItemDraft("TG-GLASS-04", "Champagne coupe set", Category.TABLEWARE_GLASSWARE,
              "glass", 40, ConditionGrade.A, 8, None, 6.5, "R3-B1"),
    ItemDraft("BF-KIT-05", "Beverage service kit", Category.BEVERAGES_FOOD,
              "mixed", 200, ConditionGrade.B, 1, None, 0.8, "R4-B1"),
    ItemDraft("OS-PRINT-06", "Printed brochure pack", Category.OFFICE_SUPPLIES,
              "plastic", 60, ConditionGrade.C, 1, None, 1.2, "R4-B2"),
]

DEMO_LINES = [
    LineRequest("EP-DECK-01", 100),
    LineRequest("EP-FRAME-02", 60),
    LineRequest("EE-SCREEN-03", 24),
    LineRequest("TG-GLASS-04", 20),
    LineRequest("BF-KIT-05", 150),
    LineRequest("OS-PRINT-06", 40),
]

# line_no -> {disposition: quantity}; totals: 198 returned / 190 consumed / 6 stored.
DEMO_DISPOSITIONS: dict[int, dict[Disposition, int]] = {
    1: {Disposition.RETURNED_RESTOCKED: 100},
    2: {Disposition.RETURNED_RESTOCKED: 58, Disposition.TEMPORARILY_STORED: 2},
    3: {Disposition.RETURNED_RESTOCKED: 20, Disposition.TEMPORARILY_STORED: 4},
    4: {Disposition.RETURNED_RESTOCKED: 20},
    5: {Disposition.CONSUMED_OR_DAMAGED: 150},
    6: {Disposition.CONSUMED_OR_DAMAGED: 40},
}


def seed_demo_items(service: CirculoopService, actor_id: str = "admin") -> int:
    count = 0
    for draft in DEMO_ITEMS:
        if not service.warehouse.has_item(draft.label):
            service.warehouse.register_item(draft, actor_id)
            count += 1
    return count


def run_demo_journey(
    service: CirculoopService,
    list_id: str = DEMO_LIST_ID,
    lead: str = "lead",
    admin: str = "admin",
    stop_at: ListState = ListState.RECONCILED,
) -> ProjectList:
    """Drive the demo project end to end (or up to ``stop_at``)."""
    seed_demo_items(service, admin)
    wf = service.workflow
    lead_user = service.resolve_actor(lead)
    admin_user = service.resolve_actor(admin)

    plist = wf.create_outbound(
        project_name="Interactive tech showcase",
        client="Global tech client",
        lines=list(DEMO_LINES),
        actor_id=lead_user.actor_id,
        role=lead_user.role,
        list_id=list_id,
    )
    if plist.state is stop_at:
        return plist
    steps = [
        (ListState.SUBMITTED, lead_user),
        (ListState.APPROVED, lead_user),
        (ListState.PICKING, admin_user),
        (ListState.PACKED, admin_user),
        (ListState.DISPATCHED, admin_user),
        (ListState.RECEIVED_ON_SITE, lead_user),
        (ListState.EVENT_ENDED, lead_user),
        (ListState.INBOUND_OPEN, admin_user),
    ]
    for target, user in steps:
        plist = wf.transition(list_id, target, user.actor_id, user.role)
        if plist.state is stop_at:
            return plist
    for line_no, entries in DEMO_DISPOSITIONS.items():
        for disposition, quantity in entries.items():
            wf.set_disposition(
                list_id, line_no, disposition, quantity,
                admin_user.actor_id, admin_user.role,
            )
    return wf.reconcile(list_id, admin_user.actor_id, admin_user.role)


_BOOTSTRAP_NOUNS = [
    "podium", "plinth", "arch", "counter", "stool", "banner frame", "riser",
    "vitrine", "screen mount", "rail", "canopy", "divider", "pedestal",
    "backdrop", "lightbox", "shelf unit", "floor tile", "column wrap",
]

_MATERIALS = ["wood-based", "metal", "plastic", "textile", "glass",
              "electronic", "mixed"]


def make_bootstrap_csv(n: int = 1380, seed: int = 7) -> str:
    """Deterministic synthetic bootstrap catalogue of ``n`` distinct items."""
    rng = random.Random(seed)
    categories = list(Category)
    rows = ["label,name,category,material,quantity,condition,remaining_lifespan,"
            "expiry_date,embodied_carbon_per_unit,location"]
    for i in range(1, n + 1):
        category = categories[i % len(categories)]
        material = rng.choice(_MATERIALS)
        noun = rng.choice(_BOOTSTRAP_NOUNS)
        condition = rng.choice("AABBBCC")
        rows.append(
            ",".join(
                [
                    f"ITM-{i:05d}",
                    f"{noun.title()} {i:05d}",
                    category.value,
                    material,
                    str(rng.randint(0, 60)),
                    condition,
                    str(rng.randint(0, 12)),
                    "",
                    f"{rng.uniform(0.2, 45.0):.2f}",
                    f"R{rng.randint(1, 9)}-B{rng.randint(1, 30)}",
                ]
            )
        )
    return "\n".join(rows) + "\n"
