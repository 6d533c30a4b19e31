"""Error types raised by the open-set services."""
from typing import List, Optional


class OpenSetError(Exception):
    """Base class for every error the services raise on purpose."""
    exit_code = 1


class InvalidArgumentError(OpenSetError, ValueError):
    pass


class NotFoundError(OpenSetError, FileNotFoundError):
    pass


class ParseError(OpenSetError, ValueError):
    pass


class CheckpointVersionError(OpenSetError):
    pass


class MissingArtifactError(NotFoundError):
    """A command needs an artifact an earlier command should have written."""

    def __init__(self, artifact: str, hint: str = ""):
        self.artifact = artifact
        message = f"Missing required artifact: {artifact}"
        if hint:
            message += f" ({hint})"
        super().__init__(message)


class ConfigValidationError(InvalidArgumentError):
    """Carries every violated config field, not only the first one."""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("Invalid configuration:\n  " + "\n  ".join(self.errors))


class TrainingDivergedError(OpenSetError, RuntimeError):
    exit_code = 2

    def __init__(self, stage: str, step: int, variant: Optional[str] = None):
        self.stage = stage
        self.step = step
        self.variant = variant
        message = f"Training diverged in {stage} at step {step}"
        if variant:
            message = f"[{variant}] {message}"
        super().__init__(message)

    def with_variant(self, variant: str) -> "TrainingDivergedError":
        return TrainingDivergedError(self.stage, self.step, variant)
