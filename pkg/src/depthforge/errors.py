"""Exception hierarchy shared by every depthforge module."""


class DepthForgeError(Exception):
    """Base class; the CLI maps these to exit code 1."""


class ShapeError(DepthForgeError, ValueError):
    pass


class DomainError(DepthForgeError, ValueError):
    """A scalar argument is outside its admissible range."""


class FormatError(DepthForgeError):
    """A file on disk does not match its declared binary or PNG layout."""


class ManifestError(DepthForgeError):
    """Manifest could not be loaded or failed validation."""


class SelectionError(DepthForgeError):
    pass


class PlanningError(DepthForgeError):
    pass
