"""Exception hierarchy shared across the package."""


class GposmcError(Exception):
    """Base class for all package errors."""

    code = "error"


class DomainError(GposmcError, ValueError):
    """A value lies outside the mathematical domain of an operation."""

    code = "domain"


class ConfigurationError(GposmcError, ValueError):
    """Inconsistent or invalid configuration (mismatched components, bad schema)."""

    code = "config"


class StateError(GposmcError, RuntimeError):
    """An object was used before it reached the required state (e.g. unfitted model)."""

    code = "state"


class NumericalError(GposmcError, RuntimeError):
    """A numerical procedure failed beyond repair (e.g. factorisation after max jitter)."""

    code = "numerical"


class ContractViolation(GposmcError, ValueError):
    """A caller-supplied callable or array violated a documented contract."""

    code = "contract"


class IngestError(GposmcError, ValueError):
    """Input data could not be ingested (malformed CSV, bad dates, bad prices)."""

    code = "ingest"
