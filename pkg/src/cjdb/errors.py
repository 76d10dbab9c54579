"""Exception hierarchy. The CLI maps these to exit codes."""


class CjdbError(Exception):
    """Base class for all cjdb errors."""


class DataError(CjdbError):
    """Bad input data or a request the stored data cannot satisfy (exit code 2)."""


class StructuralError(DataError):
    """A CityJSON document violates a structural invariant."""

    def __init__(self, message: str, feature_id: str | None = None, index: int | None = None):
        if feature_id is not None and f"{feature_id!r}" not in message:
            message = f"{message} (feature {feature_id!r})"
        super().__init__(message)
        self.feature_id = feature_id
        self.index = index


class HeaderError(DataError):
    """Missing or invalid CityJSONL header line."""


class FeatureLineError(DataError):
    """A feature line failed to parse or validate."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
        self.reason = message


class IngestError(DataError):
    """A database write was rejected; names the offending city object."""

    def __init__(self, message: str, object_id: str | None = None):
        super().__init__(message)
        self.object_id = object_id


class CycleError(DataError):
    """Parent/child links form a cycle."""

    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__("cycle in city object relationships: " + " -> ".join(map(str, self.ids)))


class TransportError(CjdbError):
    """Database connection or protocol failure (exit code 3)."""
