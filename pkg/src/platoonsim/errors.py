"""Exception hierarchy shared across the simulator."""


class SimulationError(Exception):
    """Base class for every error raised by platoonsim."""


class InvalidStateError(SimulationError):
    """A kinematic quantity is non-finite or otherwise physically invalid."""


class ConfigurationError(SimulationError):
    """A scenario document or runtime option failed validation.

    ``path`` names the offending configuration key (dotted path) when known.
    """

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class AddressingError(SimulationError):
    """A V2X message names an unknown sender or recipient."""


class ProtocolError(SimulationError):
    """An illegal platooning protocol action or FSM transition was requested."""


class StaleDataError(ProtocolError):
    """Predecessor data on the V2X bus is older than the staleness bound."""


class TraceError(SimulationError):
    """Traces are misaligned, incomplete, or a metric window is empty."""


class InvariantViolation(SimulationError):
    """A world invariant (vehicle overlap, roster order) broke during a run."""
