"""Exception hierarchy."""


class SubgeoError(Exception):
    """Base class for all package errors."""


class PreconditionError(SubgeoError, ValueError):
    """An argument violates a documented precondition (shape, range, ...)."""


class NumericalError(SubgeoError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy result."""


class ConvergenceError(NumericalError):
    def __init__(self, message: str, iterations: int):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


class DivergenceError(NumericalError):
    """Training loss blew up.  ``task`` is filled in by the sequence runner."""

    def __init__(self, message: str, step: int, task: int | None = None):
        self.step = step
        self.task = task
        self.base_message = message
        super().__init__(self._render())

    def _render(self) -> str:
        where = f"step {self.step}"
        if self.task is not None:
            where = f"task {self.task}, {where}"
        return f"{self.base_message} at {where}"

    def with_task(self, task: int) -> "DivergenceError":
        return DivergenceError(self.base_message, self.step, task)


class ConfigError(SubgeoError):
    """Invalid experiment configuration.  ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)
