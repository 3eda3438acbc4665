"""Exception hierarchy shared by every module in the package."""


class SparseOracleError(Exception):
    """Base class for all errors raised by sparse_oracle."""


class InvalidInput(SparseOracleError, ValueError):
    pass


class PaddingOverflow(SparseOracleError):
    """A padded format would allocate more slots than the configured cap."""

    def __init__(self, fmt, required, cap):
        self.format = fmt
        self.required = int(required)
        self.cap = int(cap)
        super().__init__(
            f"{getattr(fmt, 'name', fmt)} needs {self.required} padded slots, cap is {self.cap}"
        )


class DimensionMismatch(SparseOracleError, ValueError):
    pass


class EmptyMatrix(SparseOracleError, ValueError):
    pass


class MalformedModel(SparseOracleError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyDataset(SparseOracleError, ValueError):
    pass


class TooFewSamples(SparseOracleError, ValueError):
    pass


class AllFormatsInfeasible(SparseOracleError):
    pass


class UnsupportedFormat(SparseOracleError):
    pass


class ParseError(SparseOracleError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IndexOutOfRange(ParseError):
    pass


class NetworkError(SparseOracleError):
    pass


class ChecksumMismatch(SparseOracleError):
    pass


class JoinError(SparseOracleError):
    def __init__(self, orphans):
        self.orphans = list(orphans)
        super().__init__(f"records without a matching matrix: {', '.join(self.orphans)}")
