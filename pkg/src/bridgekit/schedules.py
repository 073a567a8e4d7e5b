"""Uncertainty-aware path and noise schedules with their time derivatives.

All coefficients are elementwise fields driven by an uncertainty map ``u``
with values in [0, 1]:

* ``pi(u)    = (1 - u) * pi_ot + u * pi_eot``
* ``alpha_t  = t**pi / (t**pi + (1 - t)**pi)``, ``gamma_t = 1 - alpha_t``
* ``beta_t   = lambda_b * (1 + u) * t * (1 - t) + (1 + u) * t**2``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .docmap import implements
from .errors import DomainError, EndpointVelocityUndefined, InvalidParameters, UncertaintyOutOfRange
from .field import PixelField


@dataclass(frozen=True)
class ScheduleParams:
    lambda_b: float = 1.0
    pi_ot: float = 1.0
    pi_eot: float = 0.5
    t_floor: float = 1e-9

    def checked(self) -> ScheduleParams:
        problems = validate(self)
        if problems:
            raise InvalidParameters("; ".join(problems))
        return self


DEFAULT_PARAMS = ScheduleParams()


def validate(p: ScheduleParams) -> list[str]:
    """Return the violated parameter invariants; an empty list means ok."""
    problems = []
    if not p.lambda_b > 0:
        problems.append(f"lambda_b must be positive (got {p.lambda_b})")
    elif p.lambda_b > 2:
        problems.append(f"beta non-monotone risk: lambda_b={p.lambda_b} > 2 makes beta_dot(1) negative")
    if not p.pi_eot > 0:
        problems.append(f"pi_eot must be positive (got {p.pi_eot})")
    if not p.pi_eot <= p.pi_ot:
        problems.append(f"pi_eot={p.pi_eot} exceeds pi_ot={p.pi_ot}")
    if not 0 < p.t_floor < 0.5:
        problems.append(f"t_floor must lie in (0, 0.5) (got {p.t_floor})")
    return problems


def _u(u: PixelField) -> np.ndarray:
    d = u.data
    if np.any(d < 0.0) or np.any(d > 1.0):
        raise UncertaintyOutOfRange("uncertainty values must lie in [0, 1]")
    return d


def _t(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t={t} outside [0, 1]")
    return t


def sigma_min_sq(u: PixelField) -> float:
    """Smallest terminal variance, min over elements of (1 + u)**2."""
    return float(np.min((1.0 + _u(u)) ** 2))


@implements(
    "uncertainty-adaptive exponent",
    "pi(u) = (1 - u) pi_ot + u pi_eot",
    tests=("test_exponent_pi_examples",),
)
def exponent_pi(u: PixelField, p: ScheduleParams = DEFAULT_PARAMS) -> PixelField:
    d = _u(u)
    return PixelField((1.0 - d) * p.pi_ot + d * p.pi_eot)


@implements(
    "path schedule",
    "alpha_t = t^pi / (t^pi + (1 - t)^pi)",
    tests=("test_path_alpha_examples", "test_boundaries_exact"),
)
def path_alpha(t: float, u: PixelField, p: ScheduleParams = DEFAULT_PARAMS) -> PixelField:
    t = _t(t)
    pi = exponent_pi(u, p).data
    if t == 0.0:
        return PixelField(np.zeros_like(pi))
    if t == 1.0:
        return PixelField(np.ones_like(pi))
    tc = min(max(t, p.t_floor), 1.0 - p.t_floor)
    a = tc**pi
    b = (1.0 - tc) ** pi
    return PixelField(a / (a + b))


@implements(
    "convexity constraint on the path",
    "gamma_t = 1 - alpha_t",
    tests=("test_path_gamma_examples",),
)
def path_gamma(t: float, u: PixelField, p: ScheduleParams = DEFAULT_PARAMS) -> PixelField:
    return PixelField(1.0 - path_alpha(t, u, p).data)


@implements(
    "noise schedule (shared bridge + terminal relaxation)",
    "beta_t = lambda_b (1 + u) t (1 - t) + (1 + u) t^2",
    tests=("test_noise_beta_examples", "test_boundaries_exact"),
)
def noise_beta(t: float, u: PixelField, p: ScheduleParams = DEFAULT_PARAMS) -> PixelField:
    t = _t(t)
    s = 1.0 + _u(u)
    return PixelField(p.lambda_b * s * (t * (1.0 - t)) + s * (t * t))


@implements(
    "kinetic velocity of the path",
    "V_t = pi (t(1 - t))^(pi - 1) / (t^pi + (1 - t)^pi)^2",
    tests=("test_alpha_dot_midpoint_law", "test_alpha_dot_matches_finite_difference"),
)
def alpha_dot(t: float, u: PixelField, p: ScheduleParams = DEFAULT_PARAMS) -> PixelField:
    """Time derivative of :func:`path_alpha`.

    Evaluated as ``pi * a * b / (t (1 - t) (a + b)**2)`` with ``a = t**pi`` and
    ``b = (1 - t)**pi``, which equals the textbook form and makes the
    midpoint value exactly ``pi``. At t in {0, 1} the velocity is 1 where
    ``pi == 1`` and undefined elsewhere.
    """
    t = _t(t)
    pi = exponent_pi(u, p).data
    if t in (0.0, 1.0):
        if np.any(pi < 1.0):
            raise EndpointVelocityUndefined(f"velocity diverges at t={t} where pi(u) < 1")
        return PixelField(np.ones_like(pi))
    tc = min(max(t, p.t_floor), 1.0 - p.t_floor)
    a = tc**pi
    b = (1.0 - tc) ** pi
    return PixelField(pi * (a * b) / ((tc * (1.0 - tc)) * (a + b) ** 2))


@implements(
    "time derivative of the noise schedule",
    "beta_dot_t = (1 + u) (lambda_b (1 - 2t) + 2t)",
    tests=("test_beta_dot_examples", "test_beta_dot_matches_finite_difference"),
)
def beta_dot(t: float, u: PixelField, p: ScheduleParams = DEFAULT_PARAMS) -> PixelField:
    t = _t(t)
    s = 1.0 + _u(u)
    return PixelField(s * (p.lambda_b * (1.0 - 2.0 * t) + 2.0 * t))
