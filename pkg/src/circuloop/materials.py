"""Sustainable materials catalogue.

Deterministic search in place of a conversational agent: a published scoring
function over term matches, hard constraint filters, and a sustainability
bonus, with ties broken by material_id ascending. Identical query, catalogue,
and weights always yield identical ordering.
"""

from __future__ import annotations

import csv
import io
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .errors import DuplicateInFile, EmptyQuery, ParseError, UnknownMaterial

CATALOGUE_CSV_HEADER = [
    "material_id",
    "name",
    "category",
    "recyclable",
    "certified",
    "embodied_carbon_per_kg",
    "reusable_cycles",
    "fire_rating",
    "tags",
    "guidance",
]


@dataclass(slots=True)
class Material:
    material_id: str
    name: str
    category: str
    recyclable: bool
    certified: Optional[str]
    embodied_carbon_per_kg: float
    reusable_cycles: int
    fire_rating: str
    tags: list[str]
    guidance: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "material_id": self.material_id,
            "name": self.name,
            "category": self.category,
            "recyclable": self.recyclable,
            "certified": self.certified,
            "embodied_carbon_per_kg": self.embodied_carbon_per_kg,
            "reusable_cycles": self.reusable_cycles,
            "fire_rating": self.fire_rating,
            "tags": list(self.tags),
            "guidance": self.guidance,
        }

    def search_text(self) -> str:
        return " ".join(
            [self.material_id, self.name, self.category, *self.tags, self.guidance]
        ).lower()


@dataclass(slots=True)
class MaterialQuery:
    """At least one of text / category / constraint must be present."""

    text: Optional[str] = None
    category: Optional[str] = None
    recyclable: Optional[bool] = None
    certified_only: bool = False
    max_carbon_per_kg: Optional[float] = None
    min_reusable_cycles: Optional[int] = None
    fire_rating: Optional[str] = None

    def is_empty(self) -> bool:
        return not (
            (self.text and self.text.strip())
            or self.category
            or self.recyclable is not None
            or self.certified_only
            or self.max_carbon_per_kg is not None
            or self.min_reusable_cycles is not None
            or self.fire_rating
        )

    def terms(self) -> list[str]:
        return [t for t in (self.text or "").lower().split() if t]


@dataclass(slots=True)
class ScoringWeights:
    """Published defaults; tests pin these values."""

    term_weight: float = 1.0
    recyclable_bonus: float = 0.5
    certified_bonus: float = 0.5
    low_carbon_bonus: float = 0.5
    low_carbon_max_kg: float = 2.0


def passes_constraints(material: Material, query: MaterialQuery) -> bool:
    """Hard filters: every result must satisfy every present constraint."""
    if query.category and material.category.lower() != query.category.lower():
        return False
    if query.recyclable is not None and material.recyclable != query.recyclable:
        return False
    if query.certified_only and not material.certified:
        return False
    if (
        query.max_carbon_per_kg is not None
        and material.embodied_carbon_per_kg > query.max_carbon_per_kg
    ):
        return False
    if (
        query.min_reusable_cycles is not None
        and material.reusable_cycles < query.min_reusable_cycles
    ):
        return False
    if query.fire_rating and material.fire_rating.lower() != query.fire_rating.lower():
        return False
    return True


def term_matches(material: Material, query: MaterialQuery) -> int:
    text = material.search_text()
    return sum(1 for term in query.terms() if term in text)


def score_material(
    material: Material, query: MaterialQuery, weights: ScoringWeights
) -> float:
    """Term-match count times term weight, plus the sustainability bonuses."""
    score = term_matches(material, query) * weights.term_weight
    if material.recyclable:
        score += weights.recyclable_bonus
    if material.certified:
        score += weights.certified_bonus
    if material.embodied_carbon_per_kg <= weights.low_carbon_max_kg:
        score += weights.low_carbon_bonus
    return score


class MaterialsLibrary:
    """Catalogue with deterministic ranked retrieval and idempotent import."""

    def __init__(self, weights: Optional[ScoringWeights] = None):
        self.weights = weights or ScoringWeights()
        self._materials: dict[str, Material] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._materials)

    def get(self, material_id: str) -> Material:
        material = self._materials.get(material_id)
        if material is None:
            raise UnknownMaterial(
                f"unknown material {material_id!r}", material_id=material_id
            )
        return material

    def has(self, material_id: str) -> bool:
        return material_id in self._materials

    def all_materials(self) -> list[Material]:
        with self._lock:
            return [m for _, m in sorted(self._materials.items())]

    def upsert(self, material: Material) -> None:
        with self._lock:
            self._materials[material.material_id] = material

    def search(self, query: MaterialQuery) -> list[tuple[Material, float]]:
        """Ranked results: score descending, material_id ascending on ties.

        When the query carries free text, a material matching none of the
        terms is not a result at all, regardless of bonuses.
        """
        if query.is_empty():
            raise EmptyQuery("query needs text, a category, or a constraint")
        terms = query.terms()
        with self._lock:
            candidates = [
                m
                for m in self._materials.values()
                if passes_constraints(m, query)
                and (not terms or term_matches(m, query) > 0)
            ]
        scored = [(m, score_material(m, query, self.weights)) for m in candidates]
        scored.sort(key=lambda pair: (-pair[1], pair[0].material_id))
        return scored

    def import_csv(self, content: str) -> int:
        """Upsert rows by material_id; returns inserted+updated count.

        Imports are serialised; a file containing the same id twice or any
        invalid row aborts the whole import.
        """
        rows = parse_materials_csv(content)
        with self._lock:
            for material in rows:
                self._materials[material.material_id] = material
        return len(rows)

    def export_csv(self) -> str:
        """Canonical catalogue dump, importable by import_csv."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CATALOGUE_CSV_HEADER)
        for material in self.all_materials():
            writer.writerow(
                [
                    material.material_id,
                    material.name,
                    material.category,
                    "true" if material.recyclable else "false",
                    material.certified or "",
                    material.embodied_carbon_per_kg,
                    material.reusable_cycles,
                    material.fire_rating,
                    ";".join(material.tags),
                    material.guidance,
                ]
            )
        return buf.getvalue()


def parse_materials_csv(content: str) -> list[Material]:
    reader = csv.DictReader(io.StringIO(content))
    if reader.fieldnames != CATALOGUE_CSV_HEADER:
        raise ParseError(
            f"expected header {','.join(CATALOGUE_CSV_HEADER)}",
            expected=CATALOGUE_CSV_HEADER,
            found=reader.fieldnames,
        )
    out: list[Material] = []
    seen: set[str] = set()
    for line_no, row in enumerate(reader, start=2):
        material_id = (row["material_id"] or "").strip()
        if not material_id:
            raise ParseError(f"line {line_no}: empty material_id", line=line_no)
        if material_id in seen:
            raise DuplicateInFile(
                f"line {line_no}: material_id {material_id!r} appears twice",
                line=line_no,
                material_id=material_id,
            )
        seen.add(material_id)
        try:
            recyclable_raw = (row["recyclable"] or "").strip().lower()
            if recyclable_raw not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(f"recyclable must be boolean, got {recyclable_raw!r}")
            carbon = float(row["embodied_carbon_per_kg"]) if row[
                "embodied_carbon_per_kg"
            ] else 0.0
            if carbon < 0:
                raise ValueError("embodied_carbon_per_kg must be >= 0")
            cycles = int(row["reusable_cycles"]) if row["reusable_cycles"] else 0
            if cycles < 0:
                raise ValueError("reusable_cycles must be >= 0")
            out.append(
                Material(
                    material_id=material_id,
                    name=(row["name"] or "").strip(),
                    category=(row["category"] or "").strip(),
                    recyclable=recyclable_raw in ("true", "yes", "1"),
                    certified=(row["certified"] or "").strip() or None,
                    embodied_carbon_per_kg=carbon,
                    reusable_cycles=cycles,
                    fire_rating=(row["fire_rating"] or "").strip(),
                    tags=[
                        t.strip()
                        for t in (row["tags"] or "").split(";")
                        if t.strip()
                    ],
                    guidance=(row["guidance"] or "").strip(),
                )
            )
        except (ValueError, KeyError) as exc:
            raise ParseError(f"line {line_no}: {exc}", line=line_no) from exc
    return out
