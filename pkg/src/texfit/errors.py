"""Exception types raised across the package."""


class TexfitError(Exception):
    """Base class for all texfit errors."""


class DegenerateRotation(TexfitError):
    """6D rotation input whose two vectors are too short or too parallel."""


class ShapeDimMismatch(TexfitError):
    pass


class MalformedModelFile(TexfitError):
    pass


class ConfigOutOfRange(TexfitError):
    pass


class NotRigid(TexfitError):
    pass


class AtlasMismatch(TexfitError):
    pass


class KeypointDimMismatch(TexfitError):
    pass


class VertexCountMismatch(TexfitError):
    pass


class PriorDimMismatch(TexfitError):
    pass


class EmptyBatch(TexfitError):
    pass


class NonFiniteLoss(TexfitError):
    """Loss or gradient became non-finite (exploded parameters)."""


class DimMismatch(TexfitError):
    pass


class DegenerateConfiguration(TexfitError):
    """Joint set too degenerate (collinear) for a unique alignment."""


class MalformedScene(TexfitError):
    pass


class MalformedResults(TexfitError):
    pass
