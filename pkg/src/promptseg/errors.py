"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates an operation's contract."""


class ConfigError(ValueError):
    """Raised for invalid run configuration. Carries field-level messages."""

    def __init__(self, field_errors):
        self.field_errors = dict(field_errors)
        lines = [f"{field}: {msg}" for field, msg in self.field_errors.items()]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


class WeightLoadError(RuntimeError):
    """Raised when a weight file cannot be applied (shape mismatches etc.)."""

    def __init__(self, message, bad_tensors=()):
        self.bad_tensors = list(bad_tensors)
        super().__init__(message)


class NonFiniteLossError(RuntimeError):
    """Raised when a training step produces a NaN/Inf loss."""

    def __init__(self, loss_value, step, batch_stems):
        self.loss_value = loss_value
        self.step = step
        self.batch_stems = list(batch_stems)
        super().__init__(
            f"non-finite loss {loss_value!r} at step {step}; "
            f"batch stems: {', '.join(self.batch_stems) or '<unknown>'}"
        )
