"""Domain error taxonomy.

Every failure a caller can provoke maps to exactly one exception class with a
stable machine-readable ``code`` and an HTTP status used by the API layer.
Domain-rule violations never surface as 500s.
"""

from __future__ import annotations

from typing import Any


class CirculoopError(Exception):
    """Base class for all domain errors."""

    code = "DOMAIN_ERROR"
    http_status = 422

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "details": self.details}


class ValidationError(CirculoopError):
    code = "VALIDATION"
    http_status = 400


class Unauthenticated(CirculoopError):
    code = "UNAUTHENTICATED"
    http_status = 401


class Forbidden(CirculoopError):
    code = "FORBIDDEN_ROLE"
    http_status = 403


# -- inventory-core -----------------------------------------------------------

class DuplicateLabel(CirculoopError):
    code = "DUPLICATE_LABEL"
    http_status = 409


class InvalidQuantity(CirculoopError):
    code = "INVALID_QUANTITY"
    http_status = 422


class UnknownItem(CirculoopError):
    code = "UNKNOWN_ITEM"
    http_status = 404


class IllegalTransition(CirculoopError):
    code = "ILLEGAL_TRANSITION"
    http_status = 409


class QuantityOverflow(CirculoopError):
    code = "QUANTITY_OVERFLOW"
    http_status = 422


class StaleVersion(CirculoopError):
    code = "STALE_VERSION"
    http_status = 409


class CorruptLog(CirculoopError):
    code = "CORRUPT_LOG"
    http_status = 422


# -- workflow -----------------------------------------------------------------

class UnknownList(CirculoopError):
    code = "UNKNOWN_LIST"
    http_status = 404


class InsufficientStock(CirculoopError):
    code = "INSUFFICIENT_STOCK"
    http_status = 422


class EmptyList(CirculoopError):
    code = "EMPTY_LIST"
    http_status = 422


class LinesFrozen(CirculoopError):
    code = "LINES_FROZEN"
    http_status = 422


class OverDisposition(CirculoopError):
    code = "OVER_DISPOSITION"
    http_status = 422


class IllegalState(CirculoopError):
    code = "ILLEGAL_STATE"
    http_status = 422


class IncompleteDispositions(CirculoopError):
    code = "INCOMPLETE_DISPOSITIONS"
    http_status = 422


class PreconditionFailed(CirculoopError):
    code = "PRECONDITION_FAILED"
    http_status = 422


# -- indicators ---------------------------------------------------------------

class UndefinedRate(CirculoopError):
    code = "UNDEFINED_RATE"
    http_status = 422


class EmptyScope(CirculoopError):
    code = "EMPTY_SCOPE"
    http_status = 422


class NotReconciled(CirculoopError):
    code = "NOT_RECONCILED"
    http_status = 422


class EmptyBatch(CirculoopError):
    code = "EMPTY_BATCH"
    http_status = 422


class OutOfRangeRating(CirculoopError):
    code = "OUT_OF_RANGE_RATING"
    http_status = 422


class InvalidCounts(CirculoopError):
    code = "INVALID_COUNTS"
    http_status = 422


class MissingFactor(CirculoopError):
    code = "MISSING_FACTOR"
    http_status = 422


# -- materials-library --------------------------------------------------------

class EmptyQuery(CirculoopError):
    code = "EMPTY_QUERY"
    http_status = 422


class UnknownMaterial(CirculoopError):
    code = "UNKNOWN_MATERIAL"
    http_status = 404


class ParseError(CirculoopError):
    code = "PARSE_ERROR"
    http_status = 422


class DuplicateInFile(CirculoopError):
    code = "DUPLICATE_IN_FILE"
    http_status = 422


# -- service shell ------------------------------------------------------------

class ConfigError(CirculoopError):
    code = "CONFIG"
    http_status = 500
