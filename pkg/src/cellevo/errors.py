class ConfigError(ValueError):
    """Invalid configuration or precondition violation (CLI exit code 2)."""
