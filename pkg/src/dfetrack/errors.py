"""Exception types shared across the package."""


class DfeError(Exception):
    """Base class for all package-specific errors."""


class UpscaleRequested(DfeError):
    """Area resize asked to produce an image larger than the source."""


class OutOfBounds(DfeError):
    """A crop window would overhang the image border."""


class ShapeMismatch(DfeError):
    """Tensor dimensions incompatible with a layer or loss."""


class ImageTooSmall(DfeError):
    """Image smaller than the crop window."""


class NonFiniteLoss(DfeError):
    """Training loss became NaN or infinite."""

    def __init__(self, epoch, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class VersionMismatch(DfeError):
    """Checkpoint file written by an incompatible format version."""


class CorruptHeader(DfeError):
    """Checkpoint header could not be parsed."""


class TruncatedBlob(DfeError):
    """Checkpoint parameter blob shorter than the header promises."""


class EmptyField(DfeError):
    """SSR field has no valid positions to search."""


class NoNeighborhood(DfeError):
    """3x3 neighborhood around a candidate touches invalid positions."""


class MissingGroundTruth(DfeError):
    """A tracked frame has no ground-truth entry."""

    def __init__(self, frame):
        super().__init__(f"no ground-truth entry for frame {frame}")
        self.frame = frame


class InsufficientSamples(DfeError):
    """Fewer than two relabeling attempts for some frame."""
