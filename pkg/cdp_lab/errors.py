class CdpLabError(Exception):
    """Base class for every error raised by cdp_lab"""


class ContractViolation(CdpLabError):
    """A policy or function was queried outside the context space it covers"""


class ArgumentError(CdpLabError, ValueError):
    """A parameter lies outside the range an operation accepts"""


class CapabilityError(CdpLabError):
    """An exact (oracle) query was made on a sampling-only environment"""


class SizeLimitError(ArgumentError):
    """A generator was asked for an instance larger than the configured caps"""


class UnsupportedModelError(CdpLabError):
    """The requested quantity is not defined for this kind of model"""


class AlgorithmFailure(CdpLabError):
    """The elimination loop lost every candidate function"""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class BudgetExhausted(CdpLabError):
    """An iteration or episode budget ran out before termination"""

    def __init__(self, reason: str, budget: str = "iterations"):
        super().__init__(reason)
        self.reason = reason
        self.budget = budget


class ConfigError(CdpLabError):
    """An experiment config failed validation"""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message
