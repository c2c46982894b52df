"""Exception hierarchy shared by all meshkit modules."""


class MeshkitError(Exception):
    """Base class for every error raised by meshkit."""


class UnsupportedFormat(MeshkitError):
    pass


class MalformedFile(MeshkitError):
    """A mesh or data file could not be parsed.

    ``location`` is a byte offset for binary formats and a 1-based line
    number for text formats (``None`` when not applicable).
    """

    def __init__(self, message, location=None, unit="byte"):
        self.location = location
        self.unit = unit
        if location is not None:
            message = f"{message} (at {unit} {location})"
        super().__init__(message)


class IndexOutOfRange(MalformedFile):
    pass


class InvalidMesh(MeshkitError):
    pass


class DegenerateBounds(MeshkitError):
    pass


class EmptyMesh(MeshkitError):
    pass


class DomainTooSmall(MeshkitError):
    pass


class ZeroArea(MeshkitError):
    pass


class ResolutionTooLow(MeshkitError):
    pass


class NoBoundary(MeshkitError):
    pass


class EmptyIsoSurface(MeshkitError):
    pass


class OutOfDomain(MeshkitError):
    pass


class MissingUVs(MeshkitError):
    pass


class ImageSizeMismatch(MeshkitError):
    pass


class TooManyTriangles(MeshkitError):
    pass


class EmptyIndex(MeshkitError):
    pass


class ConfigError(MeshkitError):
    pass


class CorruptManifest(MeshkitError):
    pass


class IoError(MeshkitError):
    pass
