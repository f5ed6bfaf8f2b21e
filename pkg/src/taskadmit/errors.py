class BudgetExceeded(RuntimeError):
    """A solve or tuning step would exceed its compute-time or memory budget."""

    def __init__(self, message: str, reason: str = "budget"):
        super().__init__(message)
        self.reason = reason


class MemoryBudgetExceeded(BudgetExceeded):
    pass


class ConvergenceError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass
