class MvsegError(Exception):
    """Base class for all package errors."""


class ValidationError(MvsegError):
    """A precondition or configuration constraint was violated."""


class FormatError(MvsegError):
    """An on-disk artifact is malformed, truncated, or unsupported."""
