"""Exception types shared across the package.

``CertifiedFailure`` subclasses mark outcomes where a construction ran but a
geometric certificate could not be met; the CLI maps them to exit code 2.
"""

from __future__ import annotations


class BilipError(Exception):
    """Base class for every error raised by this package."""


class InputError(BilipError):
    """Malformed input or usage problem."""


class CertifiedFailure(BilipError):
    """A construction finished but a certificate clause failed."""

    def __init__(self, message: str, clause: str = "") -> None:
        super().__init__(message)
        self.clause = clause or message


# metric_core
class UnknownVertex(InputError, KeyError):
    pass


class SeparationConflict(InputError):
    pass


class EmptySet(InputError):
    pass


class DegenerateCurve(InputError):
    pass


class DisconnectedSpace(InputError):
    pass


# space_gallery
class SizeOverflow(InputError):
    pass


class DisconnectedResult(CertifiedFailure):
    pass


class RangeTooNarrow(InputError):
    pass


class NoFeasibleP(CertifiedFailure):
    pass


# modulus
class NonConvergence(CertifiedFailure):
    pass


class ShapeMismatch(InputError):
    pass


# pathfinder
class NoClearancePath(CertifiedFailure):
    pass


class PorosityWitnessNotFound(CertifiedFailure):
    pass


# straighten
class ChainNotFound(CertifiedFailure):
    pass


# whitney
class DegenerateA(InputError):
    pass


# extension
class PlacementFailed(CertifiedFailure):
    pass


class CertificationFailed(CertifiedFailure):
    pass


class ThresholdNotCrossed(CertifiedFailure):
    pass


# continuum
class NotATree(InputError):
    pass


class EqualEndpoints(InputError):
    pass


class DisconnectedK(CertifiedFailure):
    pass


class EndpointsTooClose(InputError):
    pass
