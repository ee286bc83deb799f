"""Exception types raised across the package."""


class PhononArithError(Exception):
    """Base class for all package errors."""


class TruncationError(PhononArithError, ValueError):
    """Population would reach the top of the truncated Fock space."""

    def __init__(self, message, required_n_max=None):
        super().__init__(message)
        self.required_n_max = required_n_max


class PostSelectionError(PhononArithError):
    """The conditioning measurement outcome has zero probability."""


class IntegrationError(PhononArithError, RuntimeError):
    """A numerical integrator failed its accuracy contract."""


class InferenceError(PhononArithError, ValueError):
    """Population inference is ill-posed for the supplied scan."""


class ContractError(PhononArithError, ValueError):
    """An operation's precondition on its input state is violated."""


class ConfigError(PhononArithError, ValueError):
    """Invalid experiment configuration."""
