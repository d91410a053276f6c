"""Exception types shared across the package."""

from __future__ import annotations


class ContractError(ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(ValueError):
    """A configuration value or a combination of values is invalid.

    ``fields`` lists the offending field names, when known.
    """

    def __init__(self, message: str, fields: tuple[str, ...] = ()):
        super().__init__(message)
        self.fields = fields


class PlantDomainError(ArithmeticError):
    """The plant vector field is not finite at the requested point."""

    def __init__(self, message: str, component: str):
        super().__init__(message)
        self.component = component


class IntegrationError(RuntimeError):
    """The fixed-step integrator produced a non-finite state."""

    def __init__(self, message: str, substep: int | None = None, time_index: int | None = None):
        super().__init__(message)
        self.substep = substep
        self.time_index = time_index


class SchemaError(ValueError):
    """An artifact file is missing or does not match its expected layout."""
