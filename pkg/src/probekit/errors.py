"""Exception types raised across the toolkit."""


class ProbekitError(Exception):
    """Base class for all toolkit errors."""


class EmptyInput(ProbekitError, ValueError):
    pass


class InvalidConfig(ProbekitError, ValueError):
    pass


class DimMismatch(ProbekitError, ValueError):
    pass


class FormatError(ProbekitError):
    pass


class TruncatedFile(FormatError):
    pass


class DomainError(ProbekitError, ValueError):
    pass


class ZeroWeight(ProbekitError, ValueError):
    pass


class LabelError(ProbekitError, ValueError):
    pass


class ShapeError(ProbekitError, ValueError):
    pass


class InvalidK(ProbekitError, ValueError):
    pass


class ManifestError(ProbekitError, ValueError):
    pass


class TooFewRows(ProbekitError, ValueError):
    pass


class InvalidPerplexity(ProbekitError, ValueError):
    pass
