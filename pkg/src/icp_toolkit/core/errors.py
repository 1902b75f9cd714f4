"""Exception hierarchy for icp-toolkit."""

from typing import Optional

import numpy as np


class IcpToolkitError(Exception):
    """Base class for every error raised by the toolkit."""


class EmptyCloud(IcpToolkitError, ValueError):
    """An operation needed at least one point and got none."""


class InvalidCloud(IcpToolkitError, ValueError):
    """Point, normal or weight arrays violate the cloud invariants."""


class InvalidTransform(IcpToolkitError, ValueError):
    """Rotation is not a proper orthonormal matrix or translation is malformed."""


class TooFewPoints(IcpToolkitError, ValueError):
    """Neighbourhood estimation asked for more neighbours than the cloud holds."""


class MetricUnavailable(IcpToolkitError, ValueError):
    """The chosen error metric's prerequisites (normals, planar data) are missing."""


class IcpFailure(IcpToolkitError):
    """Registration could not produce a transform."""


class NoCorrespondences(IcpFailure):
    """The rejection policy removed every candidate pair."""


class TooFewPairs(IcpFailure):
    """Fewer correspondences than the solver needs."""


class DegenerateGeometry(IcpFailure):
    """The matched geometry does not determine a unique rigid motion."""

    def __init__(self, message: str, unconstrained: Optional[np.ndarray] = None) -> None:
        super().__init__(message)
        self.unconstrained = unconstrained


class InvalidBelief(IcpToolkitError, ValueError):
    """A belief is negative somewhere or does not sum to one."""


class InvalidModel(IcpToolkitError, ValueError):
    """A motion kernel or likelihood violates its invariants."""


class ZeroLikelihood(IcpToolkitError):
    """The observation has zero probability under the predicted belief."""


class ParseError(IcpToolkitError):
    """A cloud or fixture file could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnsupportedProperty(ParseError):
    """A PLY header declares something outside the supported ASCII subset."""


class CloudIoError(IcpToolkitError):
    """Reading or writing a file failed at the OS level."""


class FixtureError(IcpToolkitError, ValueError):
    """A world, trajectory or filter-steps fixture is malformed."""


class UsageError(IcpToolkitError):
    """Command-line arguments were invalid."""
