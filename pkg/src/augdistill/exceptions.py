"""Exception types mapped to the CLI exit codes."""


class ConfigError(ValueError):
    """Invalid configuration or missing prerequisite artifact (exit code 2)."""


class FitFailure(RuntimeError):
    """An optimization failed to reach its configured bound (exit code 3)."""


class TrainingDiverged(RuntimeError):
    """A training stage produced a non-finite loss (exit code 4)."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
