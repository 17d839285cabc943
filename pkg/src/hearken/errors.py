"""Exception taxonomy shared by all hearken modules."""


class HearkenError(Exception):
    """Base class for all package errors."""


class FormatError(HearkenError):
    """Input is a recognized container but an unsupported variant (codec, magic)."""


class ParseError(HearkenError):
    """Input is structurally corrupt or truncated."""


class DomainError(HearkenError):
    """Arguments violate an operation precondition."""


class AllSilentError(DomainError):
    """Silence trimming removed the entire signal."""


class ShapeError(DomainError):
    """Tensor shapes do not chain through the network."""


class ConfigError(HearkenError):
    """Unknown or ill-typed run-configuration key."""


class NumericalError(HearkenError):
    """Numerical failure: divergent loss, failed gradient verification."""
