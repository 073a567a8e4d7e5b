"""Exception types raised across bridgekit."""

from __future__ import annotations


class BridgeKitError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(BridgeKitError, ValueError):
    pass


class DivisionFloorViolated(BridgeKitError, ArithmeticError):
    pass


class NonFiniteValue(BridgeKitError, ArithmeticError):
    pass


class InvalidBounds(BridgeKitError, ValueError):
    pass


class UncertaintyOutOfRange(BridgeKitError, ValueError):
    pass


class EndpointVelocityUndefined(BridgeKitError, ArithmeticError):
    """Path velocity requested at t in {0, 1} where some exponent is below 1."""


class BetaFloorViolated(BridgeKitError, ArithmeticError):
    """A noise coefficient at or below the floor reached a division.

    Usually means a sampler reached t = 0 without taking the direct-output branch.
    """


class NonMonotoneBeta(BridgeKitError, ValueError):
    pass


class InvalidGrid(BridgeKitError, ValueError):
    pass


class PredictorShapeMismatch(ShapeMismatch):
    pass


class RestorerShapeMismatch(ShapeMismatch):
    pass


class DomainError(BridgeKitError, ValueError):
    pass


class InvalidParameters(BridgeKitError, ValueError):
    pass


class GridOutOfRange(BridgeKitError, ValueError):
    pass


class InsufficientPoints(BridgeKitError, ValueError):
    pass


class InsufficientSamples(BridgeKitError, ValueError):
    pass


class ZeroVector(BridgeKitError, ValueError):
    pass


class DegenerateClustering(BridgeKitError, ValueError):
    pass


class EmptyDataset(BridgeKitError, ValueError):
    pass


class DivergenceDetected(BridgeKitError, RuntimeError):
    pass


class MissingAnnotation(BridgeKitError, LookupError):
    pass
