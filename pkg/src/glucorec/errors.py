"""Exception hierarchy shared across the pipeline."""


class GlucorecError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GlucorecError):
    """Invalid or degenerate configuration (bad scaling params, bad flags)."""


class ParseError(GlucorecError):
    """Malformed input file; message carries a line/record locator."""


class EmptyStreamError(GlucorecError):
    """A stream has too little data to be usable (e.g. <2 real BGL samples)."""


class SplitError(GlucorecError):
    """Stream is too short for the train/valid/test day split."""


class ShapeError(GlucorecError):
    """Tensor shape mismatch; message names the op and the offending shapes."""


class ContractError(GlucorecError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class FitError(GlucorecError):
    """Model fitting failed (e.g. no training events)."""


class QueryError(GlucorecError):
    """Invalid inference query (bad horizon, missing history, ...)."""
