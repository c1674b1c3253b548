"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid parameter or configuration (exit code 2 at the CLI)."""


class CapacityError(ConfigError):
    """A generator was asked for more items than its space contains."""


class OOVError(ValueError):
    """A symbol outside the tokenizer vocabulary was encountered."""

    def __init__(self, symbol: str):
        self.symbol = symbol
        super().__init__(f"out-of-vocabulary symbol: {symbol!r}")


class LengthError(ValueError):
    """A token sequence exceeds the model's maximum sequence length."""


class DegenerateBatchError(ValueError):
    """A loss/gradient batch contains zero supervised tokens."""


class EmptyDatasetError(ValueError):
    """An operation requiring a nonempty dataset got an empty one."""


class DegenerateGradientError(ValueError):
    """A gradient has zero norm, so cosine alignment is undefined."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite. Carries the last finite curve."""

    def __init__(self, message: str, curve):
        self.curve = list(curve)
        super().__init__(message)
