"""HTTP surface: JSON over HTTP, versioned under /v1.

Every mutation requires an ``Idempotency-Key`` header; a replayed key returns
the first response verbatim and never duplicates an event. Domain errors map
onto the closed taxonomy (400/401/403/404/409/422) and never surface as 500s.
"""

from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Any, Callable, Optional

from fastapi import Depends, FastAPI, Header, Query, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.routing import APIRouter, APIRoute
from pydantic import BaseModel, Field

from . import __version__
from .errors import CirculoopError, Unauthenticated, ValidationError
from .indicators import AuditLine, report_csv_from_dict
from .inventory import Category, ConditionGrade, ItemDraft, ItemStatus, QueryFilter
from .ledger import EventKind
from .materials import MaterialQuery
from .service import CirculoopService, User
from .workflow import Disposition, LineOrigin, LineRequest, ListState, Role

MUTATING_METHODS = frozenset({"POST", "PATCH", "PUT", "DELETE"})
IDEMPOTENCY_EXEMPT_SUFFIXES = ("/login",)


@dataclass(slots=True)
class Session:
    token: str
    actor_id: str
    role: Role
    expires_at: datetime


class SessionStore:
    def __init__(self, service: CirculoopService):
        self._service = service
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, user: User) -> Session:
        ttl = timedelta(minutes=self._service.config.session_ttl_minutes)
        session = Session(
            token=secrets.token_hex(16),
            actor_id=user.actor_id,
            role=user.role,
            expires_at=self._service.clock() + ttl,
        )
        with self._lock:
            self._sessions[session.token] = session
        return session

    def resolve(self, token: str) -> Session:
        with self._lock:
            session = self._sessions.get(token)
        if session is None:
            raise Unauthenticated("unknown or revoked token")
        if self._service.clock() >= session.expires_at:
            raise Unauthenticated("session expired")
        return session


class IdempotentRoute(APIRoute):
    """Requires and honours Idempotency-Key on every mutating route."""

    def get_route_handler(self) -> Callable:
        original = super().get_route_handler()

        async def handler(request: Request) -> Response:
            if request.method not in MUTATING_METHODS or request.url.path.endswith(
                IDEMPOTENCY_EXEMPT_SUFFIXES
            ):
                return await original(request)
            key = request.headers.get("Idempotency-Key")
            if not key:
                return JSONResponse(
                    status_code=400,
                    content={
                        "error": {
                            "code": "VALIDATION",
                            "message": "Idempotency-Key header is required for "
                            "mutating requests",
                            "details": {},
                        }
                    },
                )
            store: dict[str, tuple[int, bytes]] = request.app.state.idempotency
            lock: threading.Lock = request.app.state.idempotency_lock
            with lock:
                cached = store.get(key)
            if cached is not None:
                status, body = cached
                return Response(
                    content=body,
                    status_code=status,
                    media_type="application/json",
                    headers={"Idempotency-Replayed": "true"},
                )
            response = await original(request)
            body = bytes(response.body) if hasattr(response, "body") else b""
            with lock:
                store[key] = (response.status_code, body)
            return response

        return handler


def _get_idempotency_key(request: Request) -> Optional[str]:
    return request.headers.get("Idempotency-Key")


# -- request bodies -----------------------------------------------------------

class LoginBody(BaseModel):
    actor_id: str
    password: str


class ItemBody(BaseModel):
    label: str
    name: str
    category: Category
    material: str
    quantity_on_hand: int
    condition: ConditionGrade = ConditionGrade.B
    remaining_lifespan: int = 1
    expiry_date: Optional[str] = None
    embodied_carbon_per_unit: float = 0.0
    location: str = ""


class ItemPatchBody(BaseModel):
    condition: Optional[ConditionGrade] = None
    remaining_lifespan: Optional[int] = None
    location: Optional[str] = None
    expiry_date: Optional[str] = None
    embodied_carbon_per_unit: Optional[float] = None
    expected_version: Optional[int] = None


class EventBody(BaseModel):
    kind: EventKind
    item_label: str
    quantity: int
    list_ref: Optional[str] = None
    note: Optional[str] = None
    expected_version: Optional[int] = None


class LineBody(BaseModel):
    item_label: str
    quantity: int
    origin: LineOrigin = LineOrigin.FROM_STOCK


class ListBody(BaseModel):
    project_name: str
    client: str
    lines: list[LineBody]
    list_id: Optional[str] = None


class TransitionBody(BaseModel):
    target: ListState
    dispatch_quantities: Optional[dict[int, int]] = None


class DispositionBody(BaseModel):
    line_no: int
    disposition: Disposition
    quantity: int


class SubstitutionBody(BaseModel):
    line_no: int
    stock_item_label: str


class MaterialLinkBody(BaseModel):
    material_id: str
    note: str = ""


class AuditBody(BaseModel):
    lines: list[dict[str, Any]] = Field(min_length=1)


def create_app(service: CirculoopService) -> FastAPI:
    app = FastAPI(title="circuloop", version=__version__)
    app.state.service = service
    app.state.sessions = SessionStore(service)
    app.state.idempotency = {}
    app.state.idempotency_lock = threading.Lock()
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def current_session(
        authorization: Optional[str] = Header(default=None),
    ) -> Session:
        if not authorization or not authorization.startswith("Bearer "):
            raise Unauthenticated("missing bearer token")
        return app.state.sessions.resolve(authorization[len("Bearer ") :])

    @app.exception_handler(CirculoopError)
    async def domain_error_handler(request: Request, exc: CirculoopError):
        return JSONResponse(
            status_code=exc.http_status, content={"error": exc.to_dict()}
        )

    @app.exception_handler(RequestValidationError)
    async def validation_error_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={
                "error": {
                    "code": "VALIDATION",
                    "message": "request body or parameters failed validation",
                    "details": {"errors": exc.errors()},
                }
            },
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    router = APIRouter(prefix="/v1", route_class=IdempotentRoute)

    @router.post("/login")
    def login(body: LoginBody):
        user = service.authenticate(body.actor_id, body.password)
        session = app.state.sessions.create(user)
        return {
            "token": session.token,
            "actor_id": session.actor_id,
            "role": session.role.value,
            "expires_at": session.expires_at.isoformat(),
        }

    # -- warehouse ---------------------------------------------------------

    @router.get("/items")
    def list_items(
        session: Session = Depends(current_session),
        text: Optional[str] = None,
        category: Optional[Category] = None,
        status: Optional[ItemStatus] = None,
        condition: Optional[ConditionGrade] = None,
        available_only: bool = False,
        page: int = Query(default=1, ge=1),
        page_size: int = Query(default=100, ge=1, le=1000),
    ):
        records, total = service.warehouse.query_items(
            QueryFilter(
                text=text,
                category=category,
                status=status,
                condition=condition,
                available_only=available_only,
            ),
            page=page,
            page_size=page_size,
        )
        return {
            "items": [r.to_dict() for r in records],
            "total": total,
            "page": page,
            "page_size": page_size,
        }

    @router.get("/items/{label}")
    def get_item(label: str, session: Session = Depends(current_session)):
        return service.warehouse.get_item(label).to_dict()

    @router.post("/items", status_code=201)
    def register_item(body: ItemBody, session: Session = Depends(current_session)):
        from datetime import date

        draft = ItemDraft(
            label=body.label,
            name=body.name,
            category=body.category,
            material=body.material,
            quantity_on_hand=body.quantity_on_hand,
            condition=body.condition,
            remaining_lifespan=body.remaining_lifespan,
            expiry_date=date.fromisoformat(body.expiry_date)
            if body.expiry_date
            else None,
            embodied_carbon_per_unit=body.embodied_carbon_per_unit,
            location=body.location,
        )
        return service.register_item_as(session.actor_id, draft).to_dict()

    @router.patch("/items/{label}")
    def patch_item(
        label: str, body: ItemPatchBody, session: Session = Depends(current_session)
    ):
        patch = {
            k: v
            for k, v in body.model_dump().items()
            if v is not None and k != "expected_version"
        }
        if not patch:
            raise ValidationError("empty metadata patch")
        record = service.update_metadata_as(
            session.actor_id, label, patch, expected_version=body.expected_version
        )
        return record.to_dict()

    @router.post("/events", status_code=201)
    def post_event(body: EventBody, session: Session = Depends(current_session)):
        result = service.apply_event_as(
            session.actor_id,
            body.kind,
            body.item_label,
            body.quantity,
            list_ref=body.list_ref,
            note=body.note,
            expected_version=body.expected_version,
        )
        return {
            "event": result.event.to_dict(),
            "tally": result.tally.to_dict(),
            "delta": result.delta,
            "version": result.version,
        }

    @router.post("/items/import")
    async def import_items(
        request: Request, session: Session = Depends(current_session)
    ):
        csv_text = (await request.body()).decode("utf-8")
        return {"imported": service.import_items_as(session.actor_id, csv_text)}

    # -- workflow ---------------------------------------------------------

    @router.get("/lists")
    def get_lists(session: Session = Depends(current_session)):
        return {
            "lists": [
                {
                    "list_id": p.list_id,
                    "project_name": p.project_name,
                    "client": p.client,
                    "state": p.state.value,
                    "high_value": p.high_value,
                    "created_at": p.created_at,
                    "line_count": len(p.lines),
                }
                for p in service.workflow.lists()
            ]
        }

    @router.get("/lists/{list_id}")
    def get_list(list_id: str, session: Session = Depends(current_session)):
        return service.workflow.get_list(list_id).to_dict()

    @router.post("/lists", status_code=201)
    def create_list(body: ListBody, session: Session = Depends(current_session)):
        plist = service.workflow.create_outbound(
            body.project_name,
            body.client,
            [LineRequest(l.item_label, l.quantity, l.origin) for l in body.lines],
            session.actor_id,
            session.role,
            list_id=body.list_id,
        )
        return plist.to_dict()

    @router.post("/lists/{list_id}/transition")
    def transition(
        list_id: str,
        body: TransitionBody,
        request: Request,
        session: Session = Depends(current_session),
    ):
        plist = service.workflow.transition(
            list_id,
            body.target,
            session.actor_id,
            session.role,
            dispatch_quantities=body.dispatch_quantities,
            idempotency_key=_get_idempotency_key(request),
        )
        return plist.to_dict()

    @router.post("/lists/{list_id}/dispositions")
    def set_disposition(
        list_id: str,
        body: DispositionBody,
        request: Request,
        session: Session = Depends(current_session),
    ):
        line = service.workflow.set_disposition(
            list_id,
            body.line_no,
            body.disposition,
            body.quantity,
            session.actor_id,
            session.role,
            idempotency_key=_get_idempotency_key(request),
        )
        return line.to_dict()

    @router.post("/lists/{list_id}/reconcile")
    def reconcile(
        list_id: str, request: Request, session: Session = Depends(current_session)
    ):
        plist = service.workflow.reconcile(
            list_id,
            session.actor_id,
            session.role,
            idempotency_key=_get_idempotency_key(request),
        )
        return plist.to_dict()

    @router.post("/lists/{list_id}/substitutions")
    def substitute(
        list_id: str,
        body: SubstitutionBody,
        session: Session = Depends(current_session),
    ):
        line = service.workflow.substitute_line(
            list_id, body.line_no, body.stock_item_label,
            session.actor_id, session.role,
        )
        return line.to_dict()

    @router.post("/lists/{list_id}/materials", status_code=201)
    def link_material(
        list_id: str,
        body: MaterialLinkBody,
        session: Session = Depends(current_session),
    ):
        link = service.link_material_as(
            session.actor_id, list_id, body.material_id, body.note
        )
        return link.to_dict()

    @router.get("/notifications")
    def notifications(session: Session = Depends(current_session)):
        return {
            "notifications": [
                n.to_dict() for n in service.workflow.pending_actions(session.role)
            ]
        }

    # -- reports ----------------------------------------------------------

    @router.get("/lists/{list_id}/report")
    def list_report(
        list_id: str,
        format: str = "json",
        session: Session = Depends(current_session),
    ):
        report = service.project_report(list_id)
        if format == "csv":
            return PlainTextResponse(
                report_csv_from_dict(report), media_type="text/csv"
            )
        return report

    @router.get("/reports/period")
    def period_report(
        session: Session = Depends(current_session),
        period_from: str = Query(alias="from"),
        period_to: str = Query(alias="to"),
        format: str = "json",
    ):
        report = service.period_report(period_from, period_to)
        if format == "csv":
            return PlainTextResponse(report.to_csv(), media_type="text/csv")
        return report.to_dict()

    @router.post("/audits")
    def post_audit(body: AuditBody, session: Session = Depends(current_session)):
        lines = []
        for raw in body.lines:
            if "label" not in raw or "counted" not in raw:
                raise ValidationError("audit lines need label and counted")
            lines.append(AuditLine(str(raw["label"]), int(raw["counted"])))
        return service.record_audit(lines).to_dict()

    # -- materials ----------------------------------------------------------

    @router.get("/materials")
    def search_materials(
        session: Session = Depends(current_session),
        text: Optional[str] = None,
        category: Optional[str] = None,
        recyclable: Optional[bool] = None,
        certified_only: bool = False,
        max_carbon_per_kg: Optional[float] = None,
        min_reusable_cycles: Optional[int] = None,
        fire_rating: Optional[str] = None,
    ):
        results = service.materials.search(
            MaterialQuery(
                text=text,
                category=category,
                recyclable=recyclable,
                certified_only=certified_only,
                max_carbon_per_kg=max_carbon_per_kg,
                min_reusable_cycles=min_reusable_cycles,
                fire_rating=fire_rating,
            )
        )
        return {
            "materials": [
                {**material.to_dict(), "score": score} for material, score in results
            ]
        }

    @router.get("/materials/{material_id}")
    def get_material(material_id: str, session: Session = Depends(current_session)):
        return service.materials.get(material_id).to_dict()

    @router.post("/materials/import")
    async def import_materials(
        request: Request, session: Session = Depends(current_session)
    ):
        csv_text = (await request.body()).decode("utf-8")
        return {"imported": service.import_materials(csv_text)}

    app.include_router(router)
    return app
