"""Exception types shared across the package."""


class RiglineError(ValueError):
    """Base class for all rigline errors."""


class ParseError(RiglineError):
    """A cell or token that cannot be parsed; message names the location."""


class ArityError(RiglineError):
    """Row width disagrees with the schema, or feature counts mismatch."""


class EmptyDatasetError(RiglineError):
    """A data source with no usable content."""


class MissingLabelsError(RiglineError):
    """An operation that needs class labels got an unlabeled dataset."""


class SingleClassError(RiglineError):
    """An operation that needs both classes got single-class data."""


class ConfigError(RiglineError):
    """Invalid configuration value or combination."""


class ShapeError(RiglineError):
    """Array/model dimensions do not line up."""


class DivergenceError(RuntimeError):
    """Iterative training produced non-finite values and was aborted."""
