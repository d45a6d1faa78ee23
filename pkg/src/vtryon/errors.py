"""Exception types shared across the package."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but carries no usable content (e.g. an empty mask)."""


class ConfigError(ValueError):
    """Bad configuration: unknown key, missing checkpoint, unusable value."""
