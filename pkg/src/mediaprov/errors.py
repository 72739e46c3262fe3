"""Exception hierarchy shared across the package."""


class MediaProvError(Exception):
    """Base class for every error raised by mediaprov."""


# container layer
class MalformedBox(MediaProvError):
    pass


class TruncatedInput(MalformedBox):
    pass


class InvariantViolation(MediaProvError):
    pass


class RangeOutOfBounds(MediaProvError):
    pass


# binding
class EmptyLeaves(MediaProvError):
    pass


class IndexOutOfRange(MediaProvError):
    pass


# manifest
class MalformedStore(MediaProvError):
    pass


class UnsupportedVersion(MalformedStore):
    pass


class DuplicateHardBinding(MediaProvError):
    pass


class UnknownDistributor(MediaProvError):
    pass


class MissingAssertion(MediaProvError):
    pass


class MissingProof(MediaProvError):
    pass


# watermark
class CrcMismatch(MediaProvError):
    pass


class BadSync(MediaProvError):
    pass


class InsufficientSamples(MediaProvError):
    pass


class IntervalOverflow(MediaProvError):
    pass


class AnchorAfterSegment(MediaProvError):
    pass


# recovery
class NotFound(MediaProvError):
    pass


class OverlappingRange(MediaProvError):
    pass


class MalformedMultipart(MediaProvError):
    pass


class MissingRootPart(MalformedMultipart):
    pass


class DanglingPartRef(MalformedMultipart):
    pass


class RecoveryFailed(MediaProvError):
    """The recovery server could not be reached or refused the request."""


# pipeline / validator
class ConfigInvariantViolation(MediaProvError):
    pass


class CanonicalValidationError(MediaProvError):
    pass


class CoverageGap(MediaProvError):
    pass


class NoOverlap(MediaProvError):
    pass


class CanonicalUnavailable(MediaProvError):
    pass
