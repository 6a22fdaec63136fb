"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A precondition on user-supplied parameters or input data is violated."""


class DegenerateData(ValueError):
    """The data carries no usable geometric information (e.g. all points identical)."""


class DegenerateSpectrum(DegenerateData):
    """An eigenvalue spectrum with zero total variance."""


class InvalidEstimate(RuntimeError):
    """Raised by operations that need a valid estimate but received none."""
