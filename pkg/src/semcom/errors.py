"""Exception hierarchy shared across the package.

Every error name doubles as the machine-readable code carried on the
gateway's error bodies, so the classes stay flat and data-free.
"""


class SemcomError(Exception):
    """Base class; `code` is the wire-visible error identifier."""

    @property
    def code(self) -> str:
        return type(self).__name__


# scene generation
class InvalidSpec(SemcomError):
    pass


# image processing
class ThresholdOrder(SemcomError):
    pass


class ClassOutOfRange(SemcomError):
    pass


class IoFailure(SemcomError):
    pass


class BadMagic(SemcomError):
    pass


# learner
class ShapeMismatch(SemcomError):
    pass


class BadVersion(SemcomError):
    pass


class Diverged(SemcomError):
    pass


# diffusion
class BadRange(SemcomError):
    pass


class StepOutOfRange(SemcomError):
    pass


# attention
class FeedbackUnresolved(SemcomError):
    pass


class DimMismatch(SemcomError):
    pass


class BadThreshold(SemcomError):
    pass


# codec
class PatchGridOverflow(SemcomError):
    pass


class MalformedPayload(SemcomError):
    pass


class IndexOutOfGrid(SemcomError):
    pass


class EmptyLedger(SemcomError):
    pass


# protocol
class FrameCorrupt(SemcomError):
    pass


class UnknownType(SemcomError):
    pass


class ProtocolViolation(SemcomError):
    pass


# metrics
class EmptyInput(SemcomError):
    pass


# gateway
class ModelMissing(SemcomError):
    pass


class UnknownSession(SemcomError):
    pass


class NotReady(SemcomError):
    pass
