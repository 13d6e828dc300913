"""Exception types raised across the toolkit."""


class SaslError(Exception):
    """Base class for every error raised by this package."""


class DataError(SaslError, ValueError):
    pass


class MissingColumn(DataError):
    pass


class UnparseableValue(DataError):
    pass


class DuplicateKey(DataError):
    pass


class TargetOutOfRange(DataError):
    pass


class ZeroVariance(DataError):
    def __init__(self, feature):
        super().__init__(f"feature {feature!r} has zero variance")
        self.feature = feature


class FewerThanTwoSubjects(DataError):
    pass


class SubjectTooShort(DataError):
    def __init__(self, subject):
        super().__init__(f"subject {subject!r} has fewer than two observations")
        self.subject = subject


class DataNotFound(SaslError, FileNotFoundError):
    pass


class EmptyMatrix(SaslError, ValueError):
    pass


class NonFiniteInput(SaslError, ValueError):
    pass


class NonpositiveDegreesOfFreedom(SaslError, ValueError):
    pass


class DegenerateDf(SaslError, ValueError):
    pass


class LengthMismatch(SaslError, ValueError):
    pass


class SingleClass(SaslError, ValueError):
    pass


class SingleClassFold(SingleClass):
    pass


class DegenerateScores(SaslError, ValueError):
    pass


class ColumnMismatch(SaslError, ValueError):
    pass


class DimensionMismatch(SaslError, ValueError):
    pass


class EmptyData(SaslError, ValueError):
    pass


class ClassTooRare(SaslError, ValueError):
    pass


class KTooLarge(SaslError, ValueError):
    pass


class UnparseableTimestamp(SaslError, ValueError):
    pass


class MissingChannel(SaslError, ValueError):
    def __init__(self, channel):
        super().__init__(f"channel {channel!r} has no records")
        self.channel = channel


class InvalidSpec(SaslError, ValueError):
    pass


class StageError(SaslError):
    """Wraps any failure inside a pipeline stage with the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
