"""Express other bridge/residual diffusion schedules as (alpha, gamma, beta).

Every method's forward marginal has the form
``x_t = alpha x_lq + gamma x_hq + beta eps``; ``alpha`` always multiplies the
degraded image and ``gamma`` the clean one. Methods differ in which endpoint
sits at t = 0, tracked by ``orientation``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

from .docmap import implements
from .errors import InvalidParameters

CLEAN_AT_0 = "clean_at_0"
DEGRADED_AT_0 = "degraded_at_0"

DDBM_BB = "DDBM_BrownianBridge"
I2SB_CONST_G = "I2SB_ConstG"
RESSHIFT = "ResShift"
RDDM = "RDDM"
DIFFUIR = "DiffUIR"

ScalarSchedule = Union[Callable[[float], float], float]


def _call(f: ScalarSchedule, t: float) -> float:
    return float(f(t)) if callable(f) else float(f)


@dataclass(frozen=True)
class MethodSchedule:
    tag: str
    orientation: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class UnifiedCoefficients:
    alpha: float  # multiplies x_lq
    gamma: float  # multiplies x_hq
    beta: float
    t: float
    orientation: str


def ddbm_brownian_bridge() -> MethodSchedule:
    return MethodSchedule(DDBM_BB, CLEAN_AT_0)


def i2sb_const_g(g: float = 1.0) -> MethodSchedule:
    """Schrodinger-bridge reference with constant diffusion ``g``; x_0 is the degraded image."""
    return MethodSchedule(I2SB_CONST_G, DEGRADED_AT_0, {"g": g})


def resshift(eta: ScalarSchedule, sigma: ScalarSchedule) -> MethodSchedule:
    return MethodSchedule(RESSHIFT, CLEAN_AT_0, {"eta": eta, "sigma": sigma})


def rddm(alpha_bar: ScalarSchedule) -> MethodSchedule:
    return MethodSchedule(RDDM, CLEAN_AT_0, {"alpha_bar": alpha_bar})


def diffuir(alpha_bar: ScalarSchedule, delta_bar: ScalarSchedule, beta_bar: ScalarSchedule) -> MethodSchedule:
    return MethodSchedule(DIFFUIR, CLEAN_AT_0, {"alpha_bar": alpha_bar, "delta_bar": delta_bar, "beta_bar": beta_bar})


def ddbm_general_coefficients(
    alpha_bar_t: float, sigma_bar_sq_t: float, alpha_bar_1: float, sigma_bar_sq_1: float
) -> tuple[float, float, float]:
    """VP/VE bridge coefficients from the underlying diffusion's (alpha_bar, sigma_bar^2).

    alpha = s_t a_1 / s_1, gamma = a_t - s_t a_1^2 / (s_1 a_t),
    beta = sqrt(s_t - s_t^2 a_1^2 / s_1) with s = sigma_bar^2, a = alpha_bar.
    The Brownian bridge is a_t = a_1 = 1, s_t = t, s_1 = 1.
    """
    alpha = sigma_bar_sq_t * alpha_bar_1 / sigma_bar_sq_1
    gamma = alpha_bar_t - sigma_bar_sq_t * alpha_bar_1**2 / (sigma_bar_sq_1 * alpha_bar_t)
    var = sigma_bar_sq_t - sigma_bar_sq_t**2 * alpha_bar_1**2 / sigma_bar_sq_1
    return alpha, gamma, math.sqrt(max(var, 0.0))


def _finite(*vals: float) -> None:
    if not all(math.isfinite(v) for v in vals):
        raise InvalidParameters("schedule produced a non-finite value")


@implements(
    "unified coefficients of prior bridge methods",
    "DDBM-BB (t, 1-t, sqrt(t(1-t))); I2SB const-g; ResShift (eta, 1-eta, sigma); "
    "RDDM (1-sqrt(ab), sqrt(ab), sqrt(1-ab)); DiffUIR (ab-db, 1-ab, bb)",
    tests=("test_ddbm_closed_form_grid", "test_resshift_example", "test_rddm_example", "test_i2sb_reorients_to_linear"),
)
def to_unified(m: MethodSchedule, t: float) -> UnifiedCoefficients:
    """Coefficients at native time ``t``, in the method's native orientation."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise InvalidParameters(f"t={t} outside [0, 1]")
    if m.tag == DDBM_BB:
        alpha, gamma, beta = t, 1.0 - t, math.sqrt(t * (1.0 - t))
    elif m.tag == I2SB_CONST_G:
        g = float(m.params.get("g", 1.0))
        if not g > 0:
            raise InvalidParameters("I2SB needs g > 0")
        var_fwd = g * g * t  # sigma_bar_t^2, from the degraded endpoint
        var_bwd = g * g * (1.0 - t)  # sigma_bar_{1|t}^2, to the clean endpoint
        total = var_fwd + var_bwd
        alpha = var_bwd / total
        gamma = var_fwd / total
        beta = math.sqrt(var_fwd * var_bwd / total)
    elif m.tag == RESSHIFT:
        eta = _call(m.params["eta"], t)
        sigma = _call(m.params["sigma"], t)
        if sigma < 0:
            raise InvalidParameters("ResShift sigma must be nonnegative")
        alpha, gamma, beta = eta, 1.0 - eta, sigma
    elif m.tag == RDDM:
        ab = _call(m.params["alpha_bar"], t)
        if not 0.0 <= ab <= 1.0:
            raise InvalidParameters(f"RDDM alpha_bar={ab} outside [0, 1]")
        root = math.sqrt(ab)
        alpha, gamma, beta = 1.0 - root, root, math.sqrt(1.0 - ab)
    elif m.tag == DIFFUIR:
        ab = _call(m.params["alpha_bar"], t)
        db = _call(m.params["delta_bar"], t)
        bb = _call(m.params["beta_bar"], t)
        if bb < 0:
            raise InvalidParameters("DiffUIR beta_bar must be nonnegative")
        alpha, gamma, beta = ab - db, 1.0 - ab, bb
    else:
        raise InvalidParameters(f"unknown method tag {m.tag!r}")
    _finite(alpha, gamma, beta)
    return UnifiedCoefficients(alpha, gamma, beta, t, m.orientation)


def reorient(c: UnifiedCoefficients, target: str) -> UnifiedCoefficients:
    """Re-express coefficients on the opposite time axis (t -> 1 - t).

    alpha and gamma keep their roles relative to (x_lq, x_hq); matching
    orientations are returned unchanged.
    """
    if target not in (CLEAN_AT_0, DEGRADED_AT_0):
        raise InvalidParameters(f"unknown orientation {target!r}")
    if c.orientation == target:
        return c
    return UnifiedCoefficients(c.alpha, c.gamma, c.beta, 1.0 - c.t, target)


def unified_at(m: MethodSchedule, t: float, orientation: str = CLEAN_AT_0) -> UnifiedCoefficients:
    """Coefficients at time ``t`` measured on the requested time axis."""
    native_t = t if m.orientation == orientation else 1.0 - t
    return reorient(to_unified(m, native_t), orientation)


def convexity_report(m: MethodSchedule, grid) -> list[tuple[float, float]]:
    """(t, |alpha + gamma - 1|) at each grid time."""
    out = []
    for t in grid:
        c = to_unified(m, t)
        out.append((float(t), abs(c.alpha + c.gamma - 1.0)))
    return out


def default_methods() -> dict[str, MethodSchedule]:
    """Representative native schedules used by the CLI comparison."""
    return {
        DDBM_BB: ddbm_brownian_bridge(),
        I2SB_CONST_G: i2sb_const_g(1.0),
        RESSHIFT: resshift(lambda t: t, lambda t: 0.5 * math.sqrt(t)),
        RDDM: rddm(lambda t: math.cos(0.5 * math.pi * t) ** 2),
        DIFFUIR: diffuir(lambda t: t, lambda t: 0.1 * t, lambda t: math.sqrt(t)),
    }
