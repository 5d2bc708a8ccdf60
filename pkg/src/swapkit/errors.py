"""Exception hierarchy shared across the toolkit.

Every error the CLI maps to an exit code lives here so the mapping stays
in one place (see cli.EXIT_CODES).
"""


class SwapkitError(Exception):
    """Base class for all toolkit errors."""


# ---- data / input errors ----------------------------------------------------

class DegenerateLandmarks(SwapkitError):
    """Detected landmarks are coincident or collinear within tolerance."""


class EmptyDataset(SwapkitError):
    """The face store holds no images."""


class InsufficientIdentities(SwapkitError):
    """An operation needs more distinct identities than the store provides."""


class NoData(SwapkitError):
    """An input log or report parsed to nothing plottable."""


class EmptyDistribution(SwapkitError):
    """A score list required to be non-empty was empty."""


class EmptyBlock(SwapkitError):
    """No distance samples were collected for a block."""


class EmptyGallery(SwapkitError):
    """The retrieval gallery holds no identities."""


# ---- contract violations ----------------------------------------------------

class ShapeMismatch(SwapkitError):
    """Tensor shapes disagree where the contract requires them equal."""


class ResolutionMismatch(SwapkitError):
    """Input resolution differs from the adapter's and resampling is off."""


class IndexOutOfRange(SwapkitError):
    """A block index falls outside the backbone's range."""


class ConfigMismatch(SwapkitError):
    """A model config disagrees with the architecture it is applied to."""


class UnknownConfigKey(SwapkitError):
    """A config document or override used a key that does not exist."""


class MissingMargin(SwapkitError):
    """A margins table lacks an entry for a requested block."""


# ---- numerical failures -----------------------------------------------------

class ZeroVector(SwapkitError):
    """Cosine distance is undefined for a zero vector."""


class NonPSDCovariance(SwapkitError):
    """A covariance matrix is asymmetric or indefinite beyond tolerance."""


class NonFiniteLoss(SwapkitError):
    """A training loss turned NaN/Inf; carries the per-term dump."""

    def __init__(self, message, terms=None):
        super().__init__(message)
        self.terms = dict(terms or {})


# ---- artifacts ---------------------------------------------------------------

class CheckpointNotFound(SwapkitError):
    """The requested checkpoint path does not exist."""


class CheckpointCorrupt(SwapkitError):
    """The checkpoint file exists but cannot be decoded."""
