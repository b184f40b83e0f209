"""Exception hierarchy shared across the toolkit."""


class PrivkitError(Exception):
    """Base class for all toolkit errors."""


class ContractViolation(PrivkitError, ValueError):
    """An operation was called with arguments that break its contract."""


class RegistrationError(PrivkitError):
    """Backend registration or lookup failed."""


class SelectionError(PrivkitError):
    """Target or confounder selection had no eligible candidates."""


class ConfigError(PrivkitError):
    """A run configuration is invalid or refers to missing resources."""


class EvaluationError(PrivkitError):
    """An evaluation could not be computed from the given inputs."""


class NumericError(PrivkitError):
    """A backend produced non-finite values or the loss diverged.

    ``backend`` names the offending backend when known; ``trace`` carries
    the partial loss trace accumulated before the failure.
    """

    def __init__(self, message, backend=None, trace=None):
        super().__init__(message)
        self.backend = backend
        self.trace = tuple(trace) if trace is not None else ()
