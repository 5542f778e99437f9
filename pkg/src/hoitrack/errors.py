"""Exception hierarchy shared across the package."""


class HoitrackError(Exception):
    """Base class for all package errors."""


class NonPositiveDepth(HoitrackError):
    pass


class DimensionMismatch(HoitrackError):
    pass


class LengthMismatch(HoitrackError):
    pass


class NotWatertight(HoitrackError):
    pass


class DegenerateMesh(HoitrackError):
    pass


class TooFewPoints(HoitrackError):
    pass


class DegenerateSource(HoitrackError):
    pass


class DegenerateConfiguration(HoitrackError):
    pass


class BehindCamera(HoitrackError):
    pass


class DegenerateKeypoints(HoitrackError):
    pass


class EmptyObjectMask(HoitrackError):
    pass


class NoOnsetPose(HoitrackError):
    pass


class NonFiniteGradient(HoitrackError):
    pass


class NonFiniteLoss(HoitrackError):
    pass


class NonFiniteValue(HoitrackError):
    pass


class EmptyCloud(HoitrackError):
    pass


class EmptyInput(HoitrackError):
    pass


class MissingFile(HoitrackError):
    pass


class CorruptTensor(HoitrackError):
    pass


class SchemaError(HoitrackError):
    pass


class InvalidConfig(HoitrackError):
    pass


class IoError(HoitrackError):
    pass
