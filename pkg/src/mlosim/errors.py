"""Exception types raised by the simulator."""


class ConfigurationError(ValueError):
    """Invalid experiment, policy or binning configuration."""


class TraceFormatError(ValueError):
    """A trace or replay file does not follow the expected layout."""


class TraceParseError(TraceFormatError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SimulationError(RuntimeError):
    """An internal invariant of the engine was violated; the run is aborted."""
