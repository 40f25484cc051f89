"""Exception hierarchy shared by every layer.

Each class name doubles as the wire-level error code returned by the
wrapper service (``{"error": "<ClassName>"}``).
"""


class RecapError(Exception):
    """Base class for all errors raised by this package."""

    @property
    def code(self) -> str:
        return type(self).__name__


# cloud
class UnknownFlavor(RecapError):
    pass


class UnknownImage(RecapError):
    pass


class NameInUse(RecapError):
    pass


class PoolExhausted(RecapError):
    pass


class UnknownVm(RecapError):
    pass


class AlreadyDestroyed(RecapError):
    pass


class UnknownObject(RecapError):
    pass


# wms
class CyclicDag(RecapError):
    pass


class InvalidDag(RecapError):
    pass


class NoResources(RecapError):
    pass


class VmNotRunning(RecapError):
    pass


class UnknownWorkflow(RecapError):
    pass


class NotRunning(RecapError):
    pass


class UnknownJob(RecapError):
    pass


# store
class DuplicateWmsWfid(RecapError):
    pass


class DuplicateMapping(RecapError):
    pass


class MissingSourceFile(RecapError):
    pass


class InconsistentFlavor(RecapError):
    pass


# mapping / replay / compare
class IncompleteProvenance(RecapError):
    pass


class WorkflowStillRunning(RecapError):
    pass


class MalformedHostLine(RecapError):
    pass


class ConfigError(RecapError):
    pass


def from_code(code: str, message: str = "") -> RecapError:
    """Rebuild an error received over the wire; unknown codes become RecapError."""
    cls = globals().get(code)
    if isinstance(cls, type) and issubclass(cls, RecapError):
        return cls(message)
    return RecapError(f"{code}: {message}")
