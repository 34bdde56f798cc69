"""
Exception hierarchy shared by every BandINR module
"""


class BandINRError(Exception):
    """Base class for all BandINR errors"""


class ShapeMismatchError(BandINRError, ValueError):
    """Operands of a primitive have incompatible shapes"""


class NonFiniteError(BandINRError, FloatingPointError):
    """A NaN or Inf appeared in a computed value"""


class TapeError(BandINRError, RuntimeError):
    """Misuse of the differentiation tape"""


class LayoutMismatchError(BandINRError, ValueError):
    """Parameter vectors do not share a layout"""


class ParameterRangeError(BandINRError, ValueError):
    """An argument lies outside its admissible range"""


class SimulationDivergedError(BandINRError, FloatingPointError):
    """Band simulation produced a non-finite state"""


class DegenerateViewpointError(BandINRError, ValueError):
    """A viewpoint cannot produce the requested observation"""


class BufferTooSmallError(BandINRError, ValueError):
    """Replay buffer holds too few episodes for the request"""


class TrainingDivergedError(BandINRError, FloatingPointError):
    """A training loss became non-finite"""

    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(BandINRError, ValueError):
    """Invalid run configuration or incompatible checkpoint"""
