"""Exception types shared across the package."""


class CopssmError(Exception):
    """Base class for all package-specific errors."""


class DomainError(CopssmError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SchemaError(CopssmError, ValueError):
    """Input data does not match the expected column schema or value ranges."""


class SamplerError(CopssmError, RuntimeError):
    """The sampler could not produce usable draws."""


class ArtifactError(CopssmError, RuntimeError):
    """A persisted model artifact is missing or malformed."""
