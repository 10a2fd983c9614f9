"""Exception hierarchy shared by all pillsort modules."""


class PillsortError(Exception):
    """Base class for every error raised by this package."""


# --- imaging ---------------------------------------------------------------

class ChannelMismatchError(PillsortError):
    """Image does not have the channel count the operation requires."""


class InvalidElementError(PillsortError):
    """Structuring element side is not an odd integer >= 1."""


class DimensionMismatchError(PillsortError):
    """Paired rasters/masks do not share dimensions."""


# --- dataset ---------------------------------------------------------------

class InvalidNdcError(PillsortError):
    """NDC string is not of the form NNNNN-NNNN-NN."""


class UnknownImageError(PillsortError):
    """An image_id was referenced that the manifest does not contain."""


class InvalidSplitError(PillsortError):
    """A split request violates its preconditions (e.g. non-consumer test id)."""


class InvalidFoldCountError(PillsortError):
    """Cross-validation fold count must be >= 2."""


# --- synthgen --------------------------------------------------------------

class NoForegroundError(PillsortError):
    """Cutout extraction found no foreground pixels after cleanup."""


class PlacementFailedError(PillsortError):
    """Rejection sampling could not place a pill without overlap."""


class InvalidAugmentError(PillsortError):
    """Augmentation spec holds an out-of-range value."""


class EmptyResultError(PillsortError):
    """No empty rectangle exists (mask fully set)."""


class MissingSideError(PillsortError):
    """A class lacks the front or back reference image the operation needs."""


# --- detect ----------------------------------------------------------------

class MissingGroundTruthError(PillsortError):
    """Oracle backend has no stored mask for the requested image."""


class InvalidBboxError(PillsortError):
    """Bounding box is empty or falls outside the image."""


class ShapeMismatchError(PillsortError):
    """Array shape differs from what the operation requires."""


# --- classify --------------------------------------------------------------

class MissingClassError(PillsortError):
    """Feature index construction found a class with zero reference crops."""


class NotADistributionError(PillsortError):
    """Probability row is negative or its sum is too far from 1."""


class EmptyEnsembleError(PillsortError):
    """Ensemble of zero probability vectors is undefined."""


class InvalidKError(PillsortError):
    """top-k rank is outside 1..class_count."""


# --- hazard ----------------------------------------------------------------

class UnknownClassError(PillsortError):
    """Hazard catalog entry references an NDC/class the manifest lacks."""


class ConflictingFlagError(PillsortError):
    """Hazard catalog flags the same class both H and N."""


class InvalidThresholdError(PillsortError):
    """Hazard decision threshold must lie in [0, 1]."""


# --- eval ------------------------------------------------------------------

class MissingPredictionError(PillsortError):
    """A labeled image has no prediction row."""


class UndefinedMetricError(PillsortError):
    """Metric is undefined for this input (e.g. single-class AUC)."""


class SetMismatchError(PillsortError):
    """Two collections that must cover the same image ids do not."""


class EmptyConfusionError(PillsortError):
    """Confusion holds zero samples."""
