class FloquetDynamicsError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(FloquetDynamicsError, ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class UnsupportedOrbitalCount(FloquetDynamicsError, ValueError):
    pass


class NonHermitianInput(FloquetDynamicsError, ValueError):
    pass


class DimensionMismatch(FloquetDynamicsError, ValueError):
    pass


class NumericalConsistencyError(FloquetDynamicsError, ArithmeticError):
    pass


class StepSizeError(FloquetDynamicsError, ArithmeticError):
    pass


class PhononTruncationError(FloquetDynamicsError, ValueError):
    pass


class SeriesMismatch(FloquetDynamicsError, ValueError):
    pass


class EnsembleError(FloquetDynamicsError, RuntimeError):
    def __init__(self, message: str, completed: int = 0, requested: int = 0):
        self.completed = completed
        self.requested = requested
        super().__init__(f"{message} ({completed}/{requested} trajectories completed)")
