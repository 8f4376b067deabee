class MaskedFaceError(Exception):
    """Base class for recoverable tool errors."""


class DegenerateGeometryError(MaskedFaceError, ValueError):
    pass


class GenerationFailedError(MaskedFaceError):
    """The warped mask is too distorted to be credible."""


class GalleryError(MaskedFaceError):
    pass
