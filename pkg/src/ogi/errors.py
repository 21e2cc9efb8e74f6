"""Exception types shared across the kernel."""


class KernelError(Exception):
    """Base class for all kernel-raised errors."""


class ValidationError(KernelError):
    """A payload, frame, or scenario document failed validation."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ConfigurationError(KernelError):
    """A component was built or mutated with inconsistent settings."""


class AuthorizationError(KernelError):
    """Caller lacks the capability or role the operation requires."""


class VersionConflictError(KernelError):
    """Program administration did not carry the successor version."""

    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"expected version {expected}, got {got}")


class UnknownModuleError(KernelError):
    """A frame or route referenced an endpoint the fabric has not registered."""


class FrameSequenceError(KernelError):
    """A sender violated the strictly-increasing seq contract for a stream."""


class RestoreError(KernelError):
    """A persisted short-term memory image could not be restored."""
