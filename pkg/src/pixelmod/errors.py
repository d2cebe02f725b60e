"""Exception types shared across the package."""


class PixelmodError(Exception):
    """Base class for all errors raised by this package."""


class DecodeError(PixelmodError):
    """Image bytes are malformed or in an unsupported format."""


class TooSmall(DecodeError):
    """Decoded image is below the minimum 16x16 size."""


class KindMismatch(PixelmodError):
    """Operation mixed hashes (or indexes) of different kinds."""


class DuplicateId(PixelmodError):
    """An id was inserted twice into the same index."""


class TooFewRecords(PixelmodError):
    """Index holds fewer records than the requested cluster count."""


class SnapshotError(PixelmodError):
    """Base class for snapshot persistence failures."""


class VersionMismatch(SnapshotError):
    """Snapshot format version or hash kind does not match expectations."""


class ChecksumMismatch(SnapshotError):
    """Snapshot payload failed CRC verification (truncated or corrupt)."""


class ProviderUnavailable(PixelmodError):
    """OCR provider failed transiently; the call may be retried."""


class MissingImage(PixelmodError):
    """Ground truth or request references an image absent from the corpus."""


class MissingFlag(PixelmodError):
    """Moderation report input lacks a flag for a story member."""


class AlreadyMember(PixelmodError):
    """Image is already part of the target seed set."""


class UnknownImage(PixelmodError):
    """Image id does not exist in the corpus store."""


class ValidationError(PixelmodError):
    """A request or argument failed validation."""


class VersionConflict(PixelmodError):
    """Compare-and-set on a seed set lost to a concurrent mutation."""
