"""Exception types shared across the package.

Plain ``ValueError`` is used for ordinary bad arguments; the classes here
exist where callers need structured context (which component failed, where
training diverged) or where the CLI maps failures to distinct exit codes.
"""


class SomDagmmError(Exception):
    """Base class for package-specific failures."""


class SingularMatrixError(SomDagmmError):
    """Cholesky factorization failed even after diagonal regularization.

    ``component`` identifies the offending mixture component when the
    failure happens inside energy evaluation, else it is None.
    """

    def __init__(self, message: str, component: int | None = None):
        super().__init__(message)
        self.component = component


class DivergedError(SomDagmmError):
    """Training objective became non-finite.

    ``epoch`` is the index of the last fully completed epoch (-1 when the
    first epoch never finished); ``batch`` is the step index within the
    epoch that produced the non-finite loss.
    """

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class DataError(SomDagmmError):
    """Input data cannot be used: fatal parse failure, arity mismatch,
    empty input, or a split that the dataset cannot support."""


class SchemaMismatchError(DataError):
    """A model and an input disagree on the feature schema."""

    def __init__(self, message: str, expected: str = "", actual: str = ""):
        super().__init__(message)
        self.expected = expected
        self.actual = actual
