"""Exception hierarchy shared by the solver, transport and harness."""


class FSPGError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FSPGError, ValueError):
    """A parameter or config document is invalid."""


class ConvexityError(FSPGError, ValueError):
    """Prox step requested with a scale that makes the subproblem non-convex."""

    def __init__(self, message, t=None, sigma=None):
        super().__init__(message)
        self.t = t
        self.sigma = sigma


class ProtocolError(FSPGError):
    """Malformed, unexpected or inconsistent message."""

    def __init__(self, message, offset=None, client_id=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
        self.client_id = client_id


class IncompleteFrame(FSPGError):
    """Not enough bytes buffered to decode a full frame."""

    def __init__(self, needed):
        super().__init__(f"need {needed} more bytes")
        self.needed = needed


class EncodeError(FSPGError, ValueError):
    """Message cannot be serialized (e.g. non-finite float)."""


class RoundTimeout(FSPGError, TimeoutError):
    """A client did not answer within the round deadline."""

    def __init__(self, client_id, timeout):
        super().__init__(f"client {client_id} did not respond within {timeout:g} s")
        self.client_id = client_id
        self.timeout = timeout


class IngestionError(FSPGError, ValueError):
    """CSV input could not be parsed into a numeric dataset."""
