"""Exception types shared across the package, each mapped to a CLI exit code."""

EXIT_OK = 0
EXIT_BAD_ARGS = 2
EXIT_MISSING_INPUT = 3
EXIT_MALFORMED_INPUT = 4
EXIT_NUMERICAL_FAILURE = 5


class MorphfitError(Exception):
    """Base class for package errors."""

    exit_code = EXIT_NUMERICAL_FAILURE


class SizingError(MorphfitError):
    """Array shape or coefficient length does not match the model."""

    exit_code = EXIT_MALFORMED_INPUT


class FileFormatError(MorphfitError):
    """A file failed header or payload validation."""

    exit_code = EXIT_MALFORMED_INPUT


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(FileFormatError):
    """Recognized container but unsupported format version."""


class TruncatedFileError(FileFormatError):
    """Payload shorter than the header promises."""


class DegenerateGeometryError(MorphfitError):
    """Geometry too degenerate for the requested operation."""


class RegularizationError(MorphfitError):
    """A solve requires a positive regularization weight to be well posed."""


class MeshTopologyError(MorphfitError):
    """Mesh connectivity violates an operation's precondition."""


class UvLayoutError(MorphfitError):
    """UV triangles overlap; the layout is not an embedding."""

    exit_code = EXIT_MALFORMED_INPUT

    def __init__(self, message, pairs=()):
        super().__init__(message)
        self.pairs = tuple(pairs)  # offending (triangle, triangle) index pairs


class TrainingDivergenceError(MorphfitError):
    """Training produced a non-finite loss; carries diagnostics."""

    def __init__(self, message, epoch=None, batch=None, loss=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
