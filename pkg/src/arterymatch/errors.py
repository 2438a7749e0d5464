"""Exception types shared across the package."""


class ArteryMatchError(ValueError):
    """Base class for all validation and data errors raised by this package."""


class ShapeError(ArteryMatchError):
    """Array or layer dimensions do not compose."""


class GraphValidationError(ArteryMatchError):
    """An individual or association graph violates its structural contract."""


class LabelError(ArteryMatchError):
    """Semantic labels are missing, malformed, or not unique where required."""


class MaskError(ArteryMatchError):
    """A binary mask or intensity plane is empty, malformed, or out of bounds."""


class ModelFormatError(ArteryMatchError):
    """A weight file is corrupt or carries an unsupported format version."""


class NonFiniteGradientError(ArteryMatchError):
    """A gradient contained NaN or infinity; the optimizer refuses to step."""


class TemplateError(ArteryMatchError):
    """No usable template remains for a test graph."""


class FileFormatError(ArteryMatchError):
    """A JSON/PGM artifact is malformed; message names the file and field."""
