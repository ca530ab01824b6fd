"""Exception taxonomy. Everything raised by the library derives from CorrGroupError
so the service layer and CLI can map failures uniformly."""


class CorrGroupError(Exception):
    """Base class for all corrgroup errors."""


class InvalidParameterError(CorrGroupError, ValueError):
    """A parameter violates its documented range or shape."""


class TooFewPointsError(CorrGroupError):
    """An operation needs more points than the cloud provides."""


class MissingNormalsError(CorrGroupError):
    """Angle constraints were requested but a cloud carries no normals."""


class MissingScoreError(CorrGroupError):
    """A score-based grouper needs per-correspondence similarity/ratio values."""


class EmptySetError(CorrGroupError):
    """A correspondence set is too small for the requested operation."""


class DimensionMismatchError(CorrGroupError):
    """Array widths do not line up (feature width vs. model input, mask vs. labels)."""


class DegenerateGeometryError(CorrGroupError):
    """Point configuration does not determine a rigid transform (collinear, < 3 pairs)."""


class EstimationFailedError(CorrGroupError):
    """No RANSAC iteration produced a usable model."""


class SingleClassError(CorrGroupError):
    """Training data contains only one class."""


class DivergenceError(CorrGroupError):
    """Training loss became non-finite."""


class SynthesisError(CorrGroupError):
    """Scene synthesis could not satisfy its constraints (rejection sampling exhausted)."""


class FormatError(CorrGroupError):
    """Base class for file parsing/serialization failures."""


class PlyHeaderError(FormatError):
    """Malformed PLY header (carries a line number where possible)."""


class PlyPropertyError(FormatError):
    """PLY vertex properties are of an unsupported type or layout."""


class PlyTruncatedError(FormatError):
    """PLY body ends before the advertised element count."""


class CorrsParseError(FormatError):
    """Correspondence text file could not be parsed (carries a line number)."""


class TransformParseError(FormatError):
    """Transform file is not a 4x4 homogeneous matrix."""


class NonRigidMatrixError(FormatError):
    """A loaded matrix is not a rigid transform (non-orthonormal or det != +1)."""


class LabelsParseError(FormatError):
    """Label file could not be parsed (carries a line number)."""


class FeaturesParseError(FormatError):
    """Feature CSV could not be parsed (carries a line number)."""


class ModelFormatError(FormatError):
    """Base class for model-file failures."""


class ModelCorruptError(ModelFormatError):
    """Model file is truncated or has a bad magic string."""


class ModelVersionError(ModelFormatError):
    """Model file was written with an unsupported format version."""


class ModelShapeError(ModelFormatError):
    """Model file layer shapes are inconsistent."""
