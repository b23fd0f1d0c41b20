class TemporalOTException(Exception):
    pass


class TemporalOTValueError(TemporalOTException, ValueError):
    pass


class ConfigError(TemporalOTValueError):
    pass


class ShapeMismatchError(TemporalOTValueError):
    pass


class NonFiniteValueError(TemporalOTValueError):
    pass


# Token file exceptions

class TokenFileError(TemporalOTValueError):
    pass


class TokenFileBadMagicError(TokenFileError):
    def __init__(self, path, magic):
        msg = f"bad magic {magic!r} in token file {path}; expected b'NRTN'"
        super().__init__(msg)


class TokenFileTruncatedError(TokenFileError):
    pass


class TokenFileOverflowError(TokenFileError):
    pass


class TokenFileCorruptHeaderError(TokenFileError):
    pass


# TokenMatrix exceptions

class TokenMatrixException(TemporalOTException):
    pass


class TokenMatrixZeroRowError(TokenMatrixException, ValueError):
    def __init__(self, row_index):
        msg = f"zero row at index {row_index} cannot be normalized."
        super().__init__(msg)


class DimensionMismatchError(TokenMatrixException, ValueError):
    pass


# Dataset exceptions

class DatasetException(TemporalOTException):
    pass


class ManifestError(DatasetException, ValueError):
    pass


class MissingTokenFileError(DatasetException, FileNotFoundError):
    def __init__(self, path):
        msg = f"missing token file {path}"
        super().__init__(msg)


class TimestampOrderError(DatasetException, ValueError):
    pass


class UnknownVideoIdError(DatasetException, KeyError):
    def __init__(self, video_id):
        self.video_id = video_id
        super().__init__(f"unknown video id {video_id!r}")

    def __str__(self):
        return self.args[0]


# Marginals exceptions

class MarginalsError(TemporalOTValueError):
    pass


# Sinkhorn exceptions

class SinkhornException(TemporalOTException):
    pass


class SolverBreakdownError(SinkhornException, FloatingPointError):
    pass


class NegativePlanEntryError(SinkhornException, ValueError):
    pass


# Bucket exceptions

class BucketException(TemporalOTException):
    pass


class PromptEstimationError(BucketException, ValueError):
    pass


# Loss exceptions

class LossException(TemporalOTException):
    pass


class LossInputError(LossException, ValueError):
    pass


# Temporal alignment exceptions

class TemporalAlignmentException(TemporalOTException):
    pass


class CostMatrixError(TemporalAlignmentException, ValueError):
    pass


# Evaluation exceptions

class EvaluationException(TemporalOTException):
    pass


class RetrievalConfigError(EvaluationException, ValueError):
    pass


class RecallInputError(EvaluationException, ValueError):
    pass


class GroundTruthError(EvaluationException, ValueError):
    pass


# Oracle exceptions

class OracleException(TemporalOTException):
    pass


class OracleSizeError(OracleException, ValueError):
    pass


class OracleConvergenceError(OracleException, ArithmeticError):
    pass


class OracleEvaluationError(OracleException, FloatingPointError):
    pass
