"""Exception types shared across the package."""


class ShadowStreamError(Exception):
    """Base class for package errors."""


class LoadError(ShadowStreamError):
    """An asset file is missing or malformed. Message names the path."""


class ConfigError(ShadowStreamError):
    """A configuration value violates a documented limit."""


class ContractViolation(ShadowStreamError, ValueError):
    """A caller broke a documented precondition (bad index, dimension
    mismatch, non-monotone frame number, degenerate pose)."""


class WireDecodeError(ShadowStreamError, ValueError):
    """A packet or compressed stream could not be decoded. Non-fatal for
    the receive path: the offending frame is discarded."""


class ProtocolError(ShadowStreamError):
    """Peer state is inconsistent (e.g. a visibility frame from the
    future). The offending data is discarded."""


class TransportError(ShadowStreamError, OSError):
    """A real-socket operation failed."""


class EvictedFrameError(ShadowStreamError, KeyError):
    """The requested frame was evicted from the pose history ring."""
