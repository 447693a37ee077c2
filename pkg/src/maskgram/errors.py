"""Exception types shared across the package."""


class ContractError(ValueError):
    """A precondition of a public operation was violated."""


class ConfigError(ContractError):
    """Invalid, unknown or conflicting configuration."""


class NumericError(FloatingPointError):
    """A non-finite value showed up where the math requires finite values."""


class ArtifactError(OSError):
    """A serialized artifact is missing, malformed or incompatible."""
