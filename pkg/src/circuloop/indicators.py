"""Circularity, operational, and carbon indicators.

All computations are pure functions over immutable ledger views and reconciled
lists. Rates are exact rationals rounded half-up at their stated precision; a
rate whose denominator is zero is reported as None, never 0 or 1.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Optional

from .errors import (
    EmptyBatch,
    EmptyScope,
    InvalidCounts,
    MissingFactor,
    NotReconciled,
    OutOfRangeRating,
    ParseError,
    UndefinedRate,
    UnknownItem,
    ValidationError,
)
from .inventory import Category, Warehouse
from .ledger import EventKind, MovementEvent
from .workflow import Disposition, LineOrigin, ListState, ProjectList

REPORT_SCHEMA_VERSION = 1


def _round_ratio(value: Fraction, places: int) -> float:
    """Exact rational -> decimal rounded half-up at ``places``."""
    quant = Decimal(1).scaleb(-places)
    dec = Decimal(value.numerator) / Decimal(value.denominator)
    return float(dec.quantize(quant, rounding=ROUND_HALF_UP))


def recovery_rate(returned: int, intended_for_reuse: int) -> float:
    """Returned-and-restocked units over units intended for reuse, 4 dp.

    Raises UndefinedRate for a consumables-only scope (denominator zero); the
    caller reports the field as null in that case.
    """
    if intended_for_reuse == 0:
        raise UndefinedRate(
            "no units intended for reuse; recovery rate is undefined"
        )
    if intended_for_reuse < 0 or returned < 0 or returned > intended_for_reuse:
        raise InvalidCounts(
            f"returned={returned} must lie in 0..intended={intended_for_reuse}"
        )
    return _round_ratio(Fraction(returned, intended_for_reuse), 4)


def improvement_ratio(ratings: list[int]) -> float:
    """Mean of 1-5 improvement ratings divided by 5, reported to 2 dp."""
    if not ratings:
        raise EmptyBatch("survey batch has no ratings")
    for r in ratings:
        if r not in (1, 2, 3, 4, 5):
            raise OutOfRangeRating(f"rating {r} outside 1..5", rating=r)
    mean = Fraction(sum(ratings), len(ratings))
    return _round_ratio(mean / 5, 2)


def selection_share(selected: int, n: int) -> float:
    """Share of respondents selecting an option, as a percentage to 1 dp."""
    if n <= 0 or selected < 0 or selected > n:
        raise InvalidCounts(f"need 0 <= selected <= n with n > 0; got {selected}/{n}")
    return _round_ratio(Fraction(selected * 100, n), 1)


@dataclass(slots=True)
class SurveyBatch:
    indicator: str
    ratings: list[int]

    @property
    def n(self) -> int:
        return len(self.ratings)

    def improvement_ratio(self) -> float:
        return improvement_ratio(self.ratings)


class EmissionFactorTable:
    """(category, material) -> kg CO2e per unit, with per-category ``*`` defaults.

    File format: CSV ``category,material,kg_co2e_per_unit``; comment lines
    starting ``#`` may set ``# source: ...`` and ``# version: ...`` metadata.
    """

    def __init__(
        self,
        factors: dict[tuple[str, str], float],
        source: str = "unspecified",
        version: str = "0",
    ):
        for key, value in factors.items():
            if value < 0:
                raise ParseError(
                    f"factor for {key} is negative", category=key[0], material=key[1]
                )
        self.factors = factors
        self.source = source
        self.version = version

    def lookup(self, category: Category | str, material: str) -> float:
        cat = category.value if isinstance(category, Category) else category
        mat = material.strip().lower()
        if (cat, mat) in self.factors:
            return self.factors[(cat, mat)]
        if (cat, "*") in self.factors:
            return self.factors[(cat, "*")]
        raise MissingFactor(
            f"no emission factor for category {cat!r} material {mat!r} and no "
            f"category default",
            category=cat,
            material=mat,
        )

    @classmethod
    def from_text(cls, text: str, source: str = "unspecified") -> "EmissionFactorTable":
        meta = {"source": source, "version": "0"}
        rows: list[str] = []
        for raw in text.splitlines():
            line = raw.strip()
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    key = key.strip().lower()
                    if key in ("source", "version"):
                        meta[key] = value.strip()
                continue
            if line:
                rows.append(line)
        factors: dict[tuple[str, str], float] = {}
        reader = csv.reader(io.StringIO("\n".join(rows)))
        header = next(reader, None)
        if header != ["category", "material", "kg_co2e_per_unit"]:
            raise ParseError(
                "expected header category,material,kg_co2e_per_unit", found=header
            )
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ParseError(f"factor row {line_no}: expected 3 columns", line=line_no)
            cat_name, material, value_str = (c.strip() for c in row)
            try:
                category = Category(cat_name)
                value = float(value_str)
            except ValueError as exc:
                raise ParseError(f"factor row {line_no}: {exc}", line=line_no) from exc
            if value < 0:
                raise ParseError(
                    f"factor row {line_no}: negative factor", line=line_no
                )
            factors[(category.value, material.lower())] = value
        return cls(factors, source=meta["source"], version=meta["version"])

    @classmethod
    def from_file(cls, path: Path) -> "EmissionFactorTable":
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), source=path.stem)


@dataclass(slots=True)
class ReturnedLine:
    """One returned-and-restocked line resolved to its factor-table key."""

    category: Category
    material: str
    quantity: int


@dataclass(slots=True)
class CarbonReport:
    total_kg: float
    by_category: dict[str, float]
    factor_source: str
    factor_version: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "total_kg": self.total_kg,
            "by_category": dict(sorted(self.by_category.items())),
            "factor_source": self.factor_source,
            "factor_version": self.factor_version,
        }


def carbon_avoided(
    returned_lines: Iterable[ReturnedLine], factors: EmissionFactorTable
) -> CarbonReport:
    """Sum of quantity x factor over returned lines; linear in quantities and
    invariant under line order (exact summation)."""
    per_category: dict[str, list[float]] = {}
    for line in returned_lines:
        if line.quantity < 0:
            raise ValidationError("returned quantity must be >= 0")
        factor = factors.lookup(line.category, line.material)
        per_category.setdefault(line.category.value, []).append(
            line.quantity * factor
        )
    by_category = {cat: math.fsum(parts) for cat, parts in per_category.items()}
    total = math.fsum(by_category[cat] for cat in sorted(by_category))
    return CarbonReport(
        total_kg=total,
        by_category=by_category,
        factor_source=factors.source,
        factor_version=factors.version,
    )


def cycle_time_hours(plist: ProjectList) -> float:
    """Creation to reconciliation, in hours to 1 dp."""
    if plist.state is not ListState.RECONCILED or plist.reconciled_at is None:
        raise NotReconciled(
            f"list {plist.list_id!r} is {plist.state.value}", list_id=plist.list_id
        )
    start = datetime.fromisoformat(plist.created_at)
    end = datetime.fromisoformat(plist.reconciled_at)
    seconds = (end - start).total_seconds()
    hours = Decimal(str(seconds)) / Decimal(3600)
    return float(hours.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass(slots=True)
class AuditLine:
    label: str
    counted: int


@dataclass(slots=True)
class AuditResult:
    accuracy: float
    audited: int
    matched: int
    discrepancies: list[dict[str, Any]]

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "audited": self.audited,
            "matched": self.matched,
            "discrepancies": self.discrepancies,
        }


def inventory_accuracy(audit: list[AuditLine], warehouse: Warehouse) -> AuditResult:
    """Matching lines over audited lines; mismatches are reported, never
    auto-corrected."""
    if not audit:
        raise ValidationError("audit must contain at least one line")
    matched = 0
    discrepancies = []
    for line in audit:
        if line.counted < 0:
            raise ValidationError(f"counted for {line.label!r} must be >= 0")
        item = warehouse.get_item(line.label)  # raises UnknownItem
        if item.quantity_on_hand == line.counted:
            matched += 1
        else:
            discrepancies.append(
                {
                    "label": line.label,
                    "counted": line.counted,
                    "on_hand": item.quantity_on_hand,
                }
            )
    return AuditResult(
        accuracy=_round_ratio(Fraction(matched, len(audit)), 4),
        audited=len(audit),
        matched=matched,
        discrepancies=discrepancies,
    )


def _disposition_units(plist: ProjectList, disposition: Disposition) -> int:
    return sum(ln.dispositions.get(disposition, 0) for ln in plist.lines)


def redeployment_count(
    events: Iterable[MovementEvent], reconciled_ids: set[str]
) -> int:
    """Item labels dispatched in two or more distinct reconciled lists."""
    seen: dict[str, set[str]] = {}
    for ev in events:
        if ev.kind is EventKind.DISPATCH and ev.list_ref in reconciled_ids:
            seen.setdefault(ev.item_label, set()).add(ev.list_ref)
    return sum(1 for lists in seen.values() if len(lists) >= 2)


@dataclass
class IndicatorReport:
    """Frozen metrics for a project list or a period."""

    scope: dict[str, Any]
    dispatched_units: int
    consumed_units: int
    returned_units: int
    temp_stored_units: int
    intended_for_reuse: int
    recovery_rate: Optional[float]
    reuse_sourcing_rate: Optional[float]
    refuse_count: int
    loss_damage_rate: Optional[float]
    recycle_rate: Optional[float]
    cycle_time_hours: Optional[float]
    inventory_accuracy: Optional[float]
    carbon_avoided_kg: float
    carbon: CarbonReport
    four_r: dict[str, Any]

    CSV_COLUMNS = (
        "schema",
        "scope_type",
        "scope_ref",
        "dispatched_units",
        "consumed_units",
        "returned_units",
        "temp_stored_units",
        "intended_for_reuse",
        "recovery_rate",
        "reuse_sourcing_rate",
        "refuse_count",
        "loss_damage_rate",
        "recycle_rate",
        "cycle_time_hours",
        "inventory_accuracy",
        "carbon_avoided_kg",
        "carbon_factor_version",
    )

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": REPORT_SCHEMA_VERSION,
            "scope": self.scope,
            "dispatched_units": self.dispatched_units,
            "consumed_units": self.consumed_units,
            "returned_units": self.returned_units,
            "temp_stored_units": self.temp_stored_units,
            "intended_for_reuse": self.intended_for_reuse,
            "recovery_rate": self.recovery_rate,
            "reuse_sourcing_rate": self.reuse_sourcing_rate,
            "refuse_count": self.refuse_count,
            "loss_damage_rate": self.loss_damage_rate,
            "recycle_rate": self.recycle_rate,
            "cycle_time_hours": self.cycle_time_hours,
            "inventory_accuracy": self.inventory_accuracy,
            "carbon_avoided_kg": self.carbon_avoided_kg,
            "carbon": self.carbon.to_dict(),
            "four_r": self.four_r,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_COLUMNS)
        writer.writerow(
            [
                REPORT_SCHEMA_VERSION,
                self.scope.get("type"),
                self.scope.get("ref"),
                self.dispatched_units,
                self.consumed_units,
                self.returned_units,
                self.temp_stored_units,
                self.intended_for_reuse,
                _csv_cell(self.recovery_rate),
                _csv_cell(self.reuse_sourcing_rate),
                self.refuse_count,
                _csv_cell(self.loss_damage_rate),
                _csv_cell(self.recycle_rate),
                _csv_cell(self.cycle_time_hours),
                _csv_cell(self.inventory_accuracy),
                self.carbon_avoided_kg,
                self.carbon.factor_version,
            ]
        )
        return buf.getvalue()


def _csv_cell(value: Optional[float]) -> str:
    return "" if value is None else repr(value)


def report_csv_from_dict(report: dict[str, Any]) -> str:
    """CSV form of a (frozen) report dict; same column order as to_csv()."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(IndicatorReport.CSV_COLUMNS)
    scope = report.get("scope", {})
    writer.writerow(
        [
            report.get("schema", REPORT_SCHEMA_VERSION),
            scope.get("type"),
            scope.get("ref"),
            report["dispatched_units"],
            report["consumed_units"],
            report["returned_units"],
            report["temp_stored_units"],
            report["intended_for_reuse"],
            _csv_cell(report["recovery_rate"]),
            _csv_cell(report["reuse_sourcing_rate"]),
            report["refuse_count"],
            _csv_cell(report["loss_damage_rate"]),
            _csv_cell(report["recycle_rate"]),
            _csv_cell(report["cycle_time_hours"]),
            _csv_cell(report["inventory_accuracy"]),
            report["carbon_avoided_kg"],
            report["carbon"]["factor_version"],
        ]
    )
    return buf.getvalue()


def _safe_ratio(numerator: int, denominator: int, places: int) -> Optional[float]:
    if denominator == 0:
        return None
    return _round_ratio(Fraction(numerator, denominator), places)


def returned_lines_for(plist: ProjectList, warehouse: Warehouse) -> list[ReturnedLine]:
    lines = []
    for ln in plist.lines:
        qty = ln.dispositions.get(Disposition.RETURNED_RESTOCKED, 0)
        if qty > 0:
            item = warehouse.get_item(ln.item_label)
            lines.append(ReturnedLine(item.category, item.material, qty))
    return lines


def _four_r(
    lists: list[ProjectList],
    dispatched: int,
    consumed: int,
    returned: int,
    intended: int,
    redeployed: int,
    recycled_units: int,
    retired_units: int,
) -> dict[str, Any]:
    substituted = sum(p.refuse_count() for p in lists)
    purchase_lines = sum(
        1
        for p in lists
        for ln in p.lines
        if ln.origin is LineOrigin.NEW_PURCHASE
    )
    stock_units = sum(
        ln.quantity_dispatched
        for p in lists
        for ln in p.lines
        if ln.origin in (LineOrigin.FROM_STOCK, LineOrigin.SUBSTITUTED_FROM_STOCK)
    )
    purchase_units = sum(
        ln.quantity_dispatched
        for p in lists
        for ln in p.lines
        if ln.origin is LineOrigin.NEW_PURCHASE
    )
    return {
        "refuse": {
            "substituted_lines": substituted,
            "purchase_lines": purchase_lines,
            "purchase_units": purchase_units,
            "from_stock_units": stock_units,
            "total_units": dispatched,
            "purchase_lines_avoided_ratio": _safe_ratio(
                substituted, substituted + purchase_lines, 4
            ),
        },
        "reduce": {
            "loss_damage_rate": _safe_ratio(consumed, dispatched, 4),
            "direction": "lower_is_better",
        },
        "reuse": {
            "recovery_rate": _safe_ratio(returned, intended, 4),
            "redeployment_count": redeployed,
        },
        "recycle": {
            "recycled_units": recycled_units,
            "retired_units": retired_units,
            "recycle_rate": _safe_ratio(
                recycled_units, recycled_units + retired_units, 4
            ),
        },
    }


class IndicatorService:
    """Builds project and period reports from the ledger and reconciled lists."""

    def __init__(self, warehouse: Warehouse, factors: EmissionFactorTable):
        self.warehouse = warehouse
        self.factors = factors
        self.latest_audit: Optional[AuditResult] = None

    def record_audit(self, audit: list[AuditLine]) -> AuditResult:
        result = inventory_accuracy(audit, self.warehouse)
        self.latest_audit = result
        return result

    def _recycle_tallies(
        self, since: Optional[str] = None, until: Optional[str] = None
    ) -> tuple[int, int]:
        recycled = retired = 0
        for ev in self.warehouse.ledger.events():
            if since is not None and ev.timestamp < since:
                continue
            if until is not None and ev.timestamp > until:
                continue
            if ev.kind is EventKind.ROUTE_RECYCLE:
                recycled += ev.quantity
            elif ev.kind is EventKind.RETIRE:
                retired += ev.quantity
        return recycled, retired

    def project_report(
        self, plist: ProjectList, all_reconciled_ids: Optional[set[str]] = None
    ) -> IndicatorReport:
        """Metrics for one reconciled list; frozen at reconciliation time."""
        if plist.state is not ListState.RECONCILED:
            raise NotReconciled(
                f"list {plist.list_id!r} is {plist.state.value}",
                list_id=plist.list_id,
            )
        dispatched = sum(ln.quantity_dispatched for ln in plist.lines)
        consumed = _disposition_units(plist, Disposition.CONSUMED_OR_DAMAGED)
        returned = _disposition_units(plist, Disposition.RETURNED_RESTOCKED)
        temp = _disposition_units(plist, Disposition.TEMPORARILY_STORED)
        intended = dispatched - consumed
        if all_reconciled_ids is None:
            all_reconciled_ids = {plist.list_id}
        redeployed = redeployment_count(
            self.warehouse.ledger.events(), all_reconciled_ids
        )
        carbon = carbon_avoided(returned_lines_for(plist, self.warehouse), self.factors)
        stock_units = sum(
            ln.quantity_dispatched
            for ln in plist.lines
            if ln.origin in (LineOrigin.FROM_STOCK, LineOrigin.SUBSTITUTED_FROM_STOCK)
        )
        return IndicatorReport(
            scope={"type": "project", "ref": plist.list_id},
            dispatched_units=dispatched,
            consumed_units=consumed,
            returned_units=returned,
            temp_stored_units=temp,
            intended_for_reuse=intended,
            recovery_rate=_safe_ratio(returned, intended, 4),
            reuse_sourcing_rate=_safe_ratio(stock_units, dispatched, 4),
            refuse_count=plist.refuse_count(),
            loss_damage_rate=_safe_ratio(consumed, dispatched, 4),
            recycle_rate=None,  # recycling is routed warehouse-side, not per list
            cycle_time_hours=cycle_time_hours(plist),
            inventory_accuracy=(
                self.latest_audit.accuracy if self.latest_audit else None
            ),
            carbon_avoided_kg=carbon.total_kg,
            carbon=carbon,
            four_r=_four_r(
                [plist], dispatched, consumed, returned, intended, redeployed, 0, 0
            ),
        )

    def period_report(
        self,
        lists: list[ProjectList],
        period_from: str,
        period_to: str,
    ) -> IndicatorReport:
        """Aggregate metrics over every list reconciled inside the window."""
        in_scope = [
            p
            for p in lists
            if p.state is ListState.RECONCILED
            and p.reconciled_at is not None
            and period_from <= p.reconciled_at <= period_to
        ]
        if not in_scope:
            raise EmptyScope(
                f"no reconciled lists between {period_from} and {period_to}",
                period_from=period_from,
                period_to=period_to,
            )
        dispatched = sum(
            ln.quantity_dispatched for p in in_scope for ln in p.lines
        )
        consumed = sum(
            _disposition_units(p, Disposition.CONSUMED_OR_DAMAGED) for p in in_scope
        )
        returned = sum(
            _disposition_units(p, Disposition.RETURNED_RESTOCKED) for p in in_scope
        )
        temp = sum(
            _disposition_units(p, Disposition.TEMPORARILY_STORED) for p in in_scope
        )
        intended = dispatched - consumed
        ids = {p.list_id for p in in_scope}
        redeployed = redeployment_count(self.warehouse.ledger.events(), ids)
        recycled_units, retired_units = self._recycle_tallies(period_from, period_to)
        returned_lines: list[ReturnedLine] = []
        for p in in_scope:
            returned_lines.extend(returned_lines_for(p, self.warehouse))
        carbon = carbon_avoided(returned_lines, self.factors)
        stock_units = sum(
            ln.quantity_dispatched
            for p in in_scope
            for ln in p.lines
            if ln.origin in (LineOrigin.FROM_STOCK, LineOrigin.SUBSTITUTED_FROM_STOCK)
        )
        cycle_times = [cycle_time_hours(p) for p in in_scope]
        mean_cycle = (
            _round_ratio(
                Fraction(sum(Fraction(str(c)) for c in cycle_times), len(cycle_times)),
                1,
            )
            if cycle_times
            else None
        )
        return IndicatorReport(
            scope={"type": "period", "ref": f"{period_from}..{period_to}",
                   "lists": sorted(ids)},
            dispatched_units=dispatched,
            consumed_units=consumed,
            returned_units=returned,
            temp_stored_units=temp,
            intended_for_reuse=intended,
            recovery_rate=_safe_ratio(returned, intended, 4),
            reuse_sourcing_rate=_safe_ratio(stock_units, dispatched, 4),
            refuse_count=sum(p.refuse_count() for p in in_scope),
            loss_damage_rate=_safe_ratio(consumed, dispatched, 4),
            recycle_rate=_safe_ratio(
                recycled_units, recycled_units + retired_units, 4
            ),
            cycle_time_hours=mean_cycle,
            inventory_accuracy=(
                self.latest_audit.accuracy if self.latest_audit else None
            ),
            carbon_avoided_kg=carbon.total_kg,
            carbon=carbon,
            four_r=_four_r(
                in_scope, dispatched, consumed, returned, intended, redeployed,
                recycled_units, retired_units,
            ),
        )

    def four_r_report(self, lists: list[ProjectList]) -> dict[str, Any]:
        """4R breakdown over every reconciled list currently in scope."""
        in_scope = [p for p in lists if p.state is ListState.RECONCILED]
        if not in_scope:
            raise EmptyScope("no reconciled lists in scope")
        dispatched = sum(ln.quantity_dispatched for p in in_scope for ln in p.lines)
        consumed = sum(
            _disposition_units(p, Disposition.CONSUMED_OR_DAMAGED) for p in in_scope
        )
        returned = sum(
            _disposition_units(p, Disposition.RETURNED_RESTOCKED) for p in in_scope
        )
        intended = dispatched - consumed
        ids = {p.list_id for p in in_scope}
        redeployed = redeployment_count(self.warehouse.ledger.events(), ids)
        recycled_units, retired_units = self._recycle_tallies()
        return _four_r(
            in_scope, dispatched, consumed, returned, intended, redeployed,
            recycled_units, retired_units,
        )
