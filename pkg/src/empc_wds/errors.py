"""Exception types shared across the package."""


class EmpcWdsError(Exception):
    """Base class for all package errors."""


class InvalidInputError(EmpcWdsError, ValueError):
    """A numeric argument is non-finite or outside its domain."""


class InadmissibleControlError(EmpcWdsError, ValueError):
    """A pump-count vector is not in the station group's combination table."""


class InfeasibleError(EmpcWdsError):
    """No control sequence keeps the tank depth within bounds.

    ``step`` is the first horizon step (0-based) at which every candidate
    sequence has left the depth bounds; ``hour`` is filled in by the
    closed-loop harness with the absolute simulation hour.
    """

    def __init__(self, message, step=None, hour=None):
        super().__init__(message)
        self.step = step
        self.hour = hour


class ScenarioValidationError(EmpcWdsError, ValueError):
    """A scenario document failed schema or invariant validation.

    ``problems`` is a list of ``(field_path, line, message)`` tuples.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = []
        for path, line, msg in self.problems:
            where = f" (line {line})" if line is not None else ""
            lines.append(f"{path}{where}: {msg}")
        super().__init__("; ".join(lines) if lines else "invalid scenario")
