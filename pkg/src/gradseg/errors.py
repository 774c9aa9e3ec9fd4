"""Exception types raised across the toolkit."""


class GradSegError(Exception):
    """Base class for all toolkit errors."""


class NiftiError(GradSegError):
    """A NIfTI file or header was rejected.

    ``field`` names the offending header field (or ``None`` when the problem
    is not tied to one field, e.g. I/O).
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class WrongMagic(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    pass


class CorruptHeader(NiftiError):
    pass


class DataTruncated(NiftiError):
    pass


class ValueOverflow(NiftiError):
    pass


class DegenerateVolume(GradSegError):
    pass


class ZeroVariance(GradSegError):
    pass


class ZeroRange(GradSegError):
    pass


class GeometryMismatch(GradSegError):
    pass


class UnknownComponent(GradSegError):
    pass


class EmptyCohort(GradSegError):
    pass


class AllZeroDifferences(GradSegError):
    pass


class DegenerateInput(GradSegError):
    pass


class EmptyDataset(GradSegError):
    pass


class DuplicateId(GradSegError):
    pass


class TooFewPatients(GradSegError):
    pass


class ConfigError(GradSegError):
    """Invalid user configuration; the CLI maps this to exit code 2."""
