"""Forward marginal, exact reverse posterior and single-step update kernels.

The forward marginal places ``x_t`` at ``alpha_t x_lq + gamma_t x_hq`` with
elementwise standard deviation ``beta_t``. Reverse steps go from time ``t`` to
an earlier ``s`` given a clean-image prediction ``x_hat0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import schedules
from .docmap import implements
from .errors import BetaFloorViolated, DomainError, NonMonotoneBeta, ShapeMismatch
from .field import PixelField, RngState
from .schedules import DEFAULT_PARAMS, ScheduleParams

BETA_FLOOR = 1e-9
VARIANCE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class Coefficients:
    alpha: PixelField
    gamma: PixelField
    beta: PixelField
    t: float


@dataclass(frozen=True)
class PosteriorMoments:
    mean: PixelField
    std: PixelField


def coefficients(t: float, u: PixelField, p: ScheduleParams = DEFAULT_PARAMS) -> Coefficients:
    return Coefficients(
        alpha=schedules.path_alpha(t, u, p),
        gamma=schedules.path_gamma(t, u, p),
        beta=schedules.noise_beta(t, u, p),
        t=float(t),
    )


def _same_shape(*fields: PixelField) -> None:
    shape = fields[0].shape
    for f in fields[1:]:
        if f.shape != shape:
            raise ShapeMismatch(f"shape {f.shape} does not match {shape}")


def _check_floor(beta: PixelField) -> None:
    if np.any(beta.data < BETA_FLOOR):
        raise BetaFloorViolated(f"beta below {BETA_FLOOR:g}; t = 0 must use the direct-output branch")


def _mean(coeff: Coefficients, x_lq: np.ndarray, x_clean: np.ndarray) -> np.ndarray:
    return coeff.alpha.data * x_lq + coeff.gamma.data * x_clean


@implements(
    "bridge marginal",
    "x_t = alpha_t x_lq + gamma_t x_hq + beta_t eps",
    tests=("test_forward_sample_boundaries", "test_forward_sample_monte_carlo_mean"),
)
def forward_sample(
    x_hq: PixelField,
    x_lq: PixelField,
    u: PixelField,
    t: float,
    p: ScheduleParams = DEFAULT_PARAMS,
    rng: RngState | None = None,
    eps: PixelField | None = None,
) -> tuple[PixelField, PixelField]:
    """Draw ``x_t`` and return it with the noise used.

    Pass ``eps`` to reuse a known draw instead of consuming ``rng``.
    """
    _same_shape(x_hq, x_lq, u)
    coeff = coefficients(t, u, p)
    if eps is None:
        if rng is None:
            raise ValueError("forward_sample needs rng or eps")
        eps = PixelField(rng.normal(x_hq.shape))
    _same_shape(x_hq, eps)
    x_t = _mean(coeff, x_lq.data, x_hq.data) + coeff.beta.data * eps.data
    return PixelField(x_t), eps


@implements(
    "noise implied by a clean prediction",
    "eps_pred = (x_t - alpha_t x_lq - gamma_t x_hat0) / beta_t",
    tests=("test_epsilon_round_trip", "test_epsilon_scalar_example"),
)
def epsilon_from_prediction(
    x_t: PixelField, x_lq: PixelField, x_hat0: PixelField, coeff: Coefficients
) -> PixelField:
    _same_shape(x_t, x_lq, x_hat0, coeff.beta)
    _check_floor(coeff.beta)
    return PixelField((x_t.data - _mean(coeff, x_lq.data, x_hat0.data)) / coeff.beta.data)


def _check_pair(coeff_t: Coefficients, coeff_s: Coefficients) -> None:
    if not coeff_s.t < coeff_t.t:
        raise DomainError(f"reverse step needs s < t (got s={coeff_s.t}, t={coeff_t.t})")
    _check_floor(coeff_t.beta)
    if np.any(coeff_s.beta.data >= coeff_t.beta.data):
        raise NonMonotoneBeta(f"beta_s must be below beta_t elementwise (s={coeff_s.t}, t={coeff_t.t})")


def _posterior_std(coeff_t: Coefficients, coeff_s: Coefficients) -> np.ndarray:
    bt2 = coeff_t.beta.data ** 2
    bs2 = coeff_s.beta.data ** 2
    var = bs2 * (bt2 - bs2) / bt2
    if np.any(var < -VARIANCE_TOLERANCE):
        raise NonMonotoneBeta("negative posterior variance")
    return np.sqrt(np.maximum(var, 0.0))


@implements(
    "Gaussian reverse posterior",
    "mu = alpha_s x_lq + gamma_s x_hat0 + (beta_s^2/beta_t^2)(x_t - alpha_t x_lq - gamma_t x_hat0); "
    "var = beta_s^2 (beta_t^2 - beta_s^2) / beta_t^2",
    tests=("test_posterior_variance_hand_value", "test_posterior_terminal_collapse", "test_composition_check_hand_case"),
)
def posterior_moments(
    x_t: PixelField,
    x_lq: PixelField,
    x_hat0: PixelField,
    coeff_t: Coefficients,
    coeff_s: Coefficients,
) -> PosteriorMoments:
    _same_shape(x_t, x_lq, x_hat0, coeff_t.beta, coeff_s.beta)
    _check_pair(coeff_t, coeff_s)
    ratio = coeff_s.beta.data ** 2 / coeff_t.beta.data ** 2
    resid = x_t.data - _mean(coeff_t, x_lq.data, x_hat0.data)
    mean = _mean(coeff_s, x_lq.data, x_hat0.data) + ratio * resid
    return PosteriorMoments(PixelField(mean), PixelField(_posterior_std(coeff_t, coeff_s)))


@implements(
    "stochastic (DDPM-like) reverse step",
    "x_s = mu + sigma z",
    tests=("test_ddpm_step_monte_carlo", "test_ddpm_step_terminal_deterministic"),
)
def ddpm_step(
    x_t: PixelField,
    x_lq: PixelField,
    x_hat0: PixelField,
    coeff_t: Coefficients,
    coeff_s: Coefficients,
    rng: RngState,
) -> PixelField:
    m = posterior_moments(x_t, x_lq, x_hat0, coeff_t, coeff_s)
    z = rng.normal(x_t.shape)
    return PixelField(m.mean.data + m.std.data * z)


@implements(
    "deterministic (DDIM-like) reverse step",
    "x_s = alpha_s x_lq + gamma_s x_hat0 + (beta_s/beta_t)(x_t - alpha_t x_lq - gamma_t x_hat0)",
    tests=("test_ddim_step_preserves_noise", "test_ddim_step_terminal"),
)
def ddim_step(
    x_t: PixelField,
    x_lq: PixelField,
    x_hat0: PixelField,
    coeff_t: Coefficients,
    coeff_s: Coefficients,
) -> PixelField:
    if not coeff_s.t < coeff_t.t:
        raise DomainError(f"reverse step needs s < t (got s={coeff_s.t}, t={coeff_t.t})")
    eps = epsilon_from_prediction(x_t, x_lq, x_hat0, coeff_t)
    _same_shape(x_t, coeff_s.beta)
    return PixelField(_mean(coeff_s, x_lq.data, x_hat0.data) + coeff_s.beta.data * eps.data)


@implements(
    "eta-interpolated reverse step",
    "x_s = alpha_s x_lq + gamma_s x_hat0 + sqrt(beta_s^2 - sigma^2) eps_pred + sigma z, sigma = eta * sigma_post",
    tests=("test_general_step_eta0_is_ddim", "test_general_step_eta1_matches_ddpm"),
)
def general_step(
    x_t: PixelField,
    x_lq: PixelField,
    x_hat0: PixelField,
    coeff_t: Coefficients,
    coeff_s: Coefficients,
    eta: float,
    rng: RngState | None = None,
) -> PixelField:
    """Reverse step interpolating DDIM (``eta=0``) and DDPM (``eta=1``).

    ``eta == 0`` delegates to :func:`ddim_step` and consumes no randomness.
    """
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"eta={eta} outside [0, 1]")
    if eta == 0.0:
        _check_pair(coeff_t, coeff_s)
        return ddim_step(x_t, x_lq, x_hat0, coeff_t, coeff_s)
    if rng is None:
        raise ValueError("general_step with eta > 0 needs rng")
    _same_shape(x_t, x_lq, x_hat0, coeff_t.beta, coeff_s.beta)
    _check_pair(coeff_t, coeff_s)
    eps = epsilon_from_prediction(x_t, x_lq, x_hat0, coeff_t)
    sigma = eta * _posterior_std(coeff_t, coeff_s)
    keep = np.sqrt(np.maximum(coeff_s.beta.data ** 2 - sigma**2, 0.0))
    z = rng.normal(x_t.shape)
    return PixelField(_mean(coeff_s, x_lq.data, x_hat0.data) + keep * eps.data + sigma * z)


@implements(
    "probability-flow ODE velocity",
    "v = (beta_dot/beta)(x_t - alpha_t x_lq - gamma_t x_hat0) + alpha_dot (x_lq - x_hat0)",
    tests=("test_pf_ode_velocity_terminal_example", "test_pf_ode_velocity_direction"),
)
def pf_ode_velocity(
    x_t: PixelField,
    x_lq: PixelField,
    x_hat0: PixelField,
    u: PixelField,
    t: float,
    p: ScheduleParams = DEFAULT_PARAMS,
    alpha_dot_t: float | None = None,
) -> PixelField:
    """Deterministic flow velocity ``dx/dt`` at ``(x_t, t)``.

    ``alpha_dot_t`` evaluates the path velocity at a different time (used by
    the sampler at endpoints where it is undefined); ``gamma_dot = -alpha_dot``.
    """
    _same_shape(x_t, x_lq, x_hat0, u)
    if not 0.0 < t <= 1.0:
        raise DomainError(f"velocity needs t in (0, 1], got {t}")
    coeff = coefficients(t, u, p)
    _check_floor(coeff.beta)
    bdot = schedules.beta_dot(t, u, p).data
    adot = schedules.alpha_dot(t if alpha_dot_t is None else alpha_dot_t, u, p).data
    resid = x_t.data - _mean(coeff, x_lq.data, x_hat0.data)
    return PixelField(bdot / coeff.beta.data * resid + adot * (x_lq.data - x_hat0.data))
