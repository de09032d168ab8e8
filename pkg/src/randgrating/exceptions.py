"""Exception hierarchy shared by the solver modules and the CLI."""


class ConfigError(ValueError):
    """Invalid parameters or configuration (CLI exit code 2)."""


class WoodAnomalyError(ConfigError):
    """A Rayleigh order sits on (or too close to) a branch cut."""

    def __init__(self, report, message=None):
        self.report = report
        super().__init__(message or report.describe())


class NumericalError(RuntimeError):
    """A solve broke down or produced unusable output (CLI exit code 3)."""


class ArtifactMismatchError(RuntimeError):
    """On-disk artifacts are missing, corrupt or from another config (exit code 4)."""
