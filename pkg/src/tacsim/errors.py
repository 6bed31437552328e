"""Exception types raised by the simulator and estimators."""


class TacsimError(Exception):
    """Base class for all package errors."""


class ConfigError(TacsimError):
    """Bad or unknown configuration key/value."""


class OffsetTooSmall(TacsimError):
    """Field requested closer to a magnet than the model is valid for."""


class NoConvergence(TacsimError):
    """Moment calibration failed to bracket or converge."""


class DisplacementOutOfRange(TacsimError):
    """Bone displacement beyond the mechanical stop."""


class InsufficientSamples(TacsimError):
    """Not enough frames to initialize a baseline."""


class MalformedRecord(TacsimError):
    """Binary frame record truncated or inconsistent."""


class NoContact(TacsimError):
    """No taxel above the activation threshold; location undefined."""


class RankDeficientFit(TacsimError):
    """Regression inputs do not span the fitted parameters."""


class InvalidSignal(TacsimError):
    """Signal strength must be positive for an SNR."""


class DegenerateRotation(TacsimError):
    """A rotation observation is (numerically) the identity."""


class RankDeficient(TacsimError):
    """Stacked rotation system does not constrain all three field components.

    Carries the unobservable direction (unit 3-vector) in `null_direction`.
    """

    def __init__(self, message, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class CrushDetected(TacsimError):
    """Contact force exceeded the object's crush limit."""


class GraspFailed(TacsimError):
    """A grasp run ended without reaching a stable hold."""
