"""Exception hierarchy shared across the package."""


class SlamError(Exception):
    """Base class for all errors raised by poseslam2d."""


class EmptyCloud(SlamError):
    """A scan produced too few valid returns to be registered."""


class NoCorrespondences(SlamError):
    """Every correspondence was rejected during registration."""


class SingularInformation(SlamError):
    """A combined point covariance could not be inverted."""


class MissingVariable(SlamError, KeyError):
    """A factor references a variable that has no value."""


class IndefiniteSystem(SlamError):
    """The normal equations are not positive definite (usually an unanchored gauge)."""


class BadConfig(SlamError, ValueError):
    pass


class DegenerateScan(SlamError):
    pass


class MatchFailure(SlamError):
    pass


class NoAssociations(SlamError):
    pass


class NoMatches(SlamError):
    pass


class DegenerateAlignment(SlamError):
    pass


class TooShort(SlamError, ValueError):
    pass


class BadWaypoints(SlamError, ValueError):
    pass


class ParseError(SlamError, ValueError):
    """Malformed input file. Carries the file path and 1-based line number."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class OrderError(ParseError):
    pass
