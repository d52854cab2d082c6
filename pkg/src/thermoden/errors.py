"""Exception types shared across the toolkit."""


class ThermodenError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(ThermodenError):
    """Operand dimensions do not line up."""


class ContractError(ThermodenError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class ConfigError(ThermodenError):
    """Invalid model or training configuration."""


class DataError(ThermodenError):
    """Dataset too short, misaligned, or otherwise unusable."""


class DegenerateChannelError(DataError):
    """Normalization hit one or more constant channels."""

    def __init__(self, group, channels):
        self.group = group
        self.channels = list(channels)
        super().__init__(
            f"constant {group} channel(s) {self.channels}: min == max, cannot min-max scale"
        )


class ParseError(DataError):
    """CSV content violates the expected schema."""


class NumericError(ThermodenError):
    """Non-finite values or failed numeric convergence."""


class StateError(ThermodenError):
    """Stateful block used before initialization."""


class OracleError(ThermodenError):
    """A test oracle's preconditions were violated (e.g. non-deterministic loss)."""


class InputError(ThermodenError):
    """Physically invalid input value (e.g. negative mass flow)."""
