"""
Exception hierarchy shared by every pipeline stage.

The management command turns any ScfaError into a single-line CommandError.
"""


class ScfaError(Exception):
    """Base class for pipeline errors."""


class InvalidInputError(ScfaError, ValueError):
    """An argument is outside the operation's domain (y = 0, tau <= 0, ...)."""


class ShapeMismatchError(ScfaError, ValueError):
    """Array shapes disagree with the configured architecture or layout."""


class FrameLoadError(ScfaError):
    """A frame directory or raster file could not be loaded."""

    def __init__(self, message, filename=None):
        self.filename = str(filename) if filename is not None else None
        if self.filename:
            message = f"{message}: {self.filename}"
        super().__init__(message)


class ConfigError(ScfaError):
    """A config file or flag set failed validation."""

    def __init__(self, errors):
        if isinstance(errors, dict):
            self.errors = errors
            detail = '; '.join(
                f"{field}: {' '.join(str(m) for m in messages)}"
                for field, messages in errors.items()
            )
        else:
            self.errors = {'__all__': [str(errors)]}
            detail = str(errors)
        super().__init__(f"invalid configuration ({detail})")


class CheckpointError(ScfaError):
    """A checkpoint or feature file is malformed or incompatible."""


class SplitError(ScfaError):
    """No train/test split with every class in the training part could be drawn."""


class TrainingDiverged(ScfaError):
    """The contrastive loss became non-finite."""

    def __init__(self, epoch, step, grad_norms):
        self.epoch = epoch
        self.step = step
        self.grad_norms = dict(grad_norms)
        norms = ', '.join(f"{name}={value:.3e}" for name, value in self.grad_norms.items())
        super().__init__(f"non-finite loss at epoch {epoch} step {step} (grad norms: {norms})")
