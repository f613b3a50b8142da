"""Exception types shared across the package."""


class TacshapeError(Exception):
    """Base class for all package errors."""


class ParseError(TacshapeError):
    """Malformed input file."""


class NonManifoldError(TacshapeError):
    """Mesh edge sharing violates the two-faces-per-edge requirement."""


class DegenerateMeshError(TacshapeError):
    """Mesh has zero spatial extent."""


class NonWatertightError(TacshapeError):
    """Operation requires a watertight mesh."""


class NoContactError(TacshapeError):
    """Sensor press or cloud extraction found no contact."""


class ShapeMismatchError(TacshapeError):
    """Tensor shapes are incompatible for the requested operation."""


class NotScalarError(TacshapeError):
    """Backward pass requires a scalar output."""


class EmptyDatasetError(TacshapeError):
    """Training requires a non-empty dataset."""


class EmptyObservationError(TacshapeError):
    """Latent inference requires a non-empty observation."""


class MixedShapesError(TacshapeError):
    """Touch records from different shapes where a single shape is required."""


class EmptyCloudError(TacshapeError):
    """Point-cloud metric received an empty cloud."""


class SizeMismatchError(TacshapeError):
    """EMD requires equally sized clouds."""


class ZeroGtAreaError(TacshapeError):
    """Surface error undefined for zero ground-truth area."""


class TessellationFailureError(TacshapeError):
    """Procedural shape generation could not produce a valid mesh."""


class RetriesExhaustedError(TacshapeError):
    """Touch sampling hit the retry limit without contact."""


class ConfigError(TacshapeError):
    """Invalid or unknown configuration entry."""
