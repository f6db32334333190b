"""Exception types shared across the package."""


class DomainError(ValueError):
    """Raised when a function is evaluated outside its mathematical domain."""


class SimulationError(RuntimeError):
    """Raised when a simulated mean path leaves the representable range."""


class EstimationError(RuntimeError):
    """Raised when an estimation stage fails irrecoverably."""

    def __init__(self, message: str, stage: str | None = None) -> None:
        super().__init__(message if stage is None else f"[{stage}] {message}")
        self.stage = stage
