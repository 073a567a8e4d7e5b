"""Procedural clean images and synthetic degradations.

The degradations are lightweight stand-ins for real task families: additive
noise, gamma darkening (low light), box blur, and bright oriented streaks
(rain/snow).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DomainError, InvalidParameters
from .field import PixelField, RngState

ADDITIVE_NOISE = "additive_noise"
GAMMA_DARKEN = "gamma_darken"
BOX_BLUR = "box_blur"
STREAKS = "streaks"


def checkerboard(shape, period: int = 2, lo: float = 0.2, hi: float = 0.8, phase: int = 0) -> PixelField:
    h, w, c = shape
    r, q = np.indices((h, w))
    cells = ((r + phase) // period + (q + phase) // period) % 2
    img = np.where(cells == 1, hi, lo)
    return PixelField(np.repeat(img[:, :, None], c, axis=2))


def gradient(shape, angle: float = 0.0, lo: float = 0.1, hi: float = 0.9) -> PixelField:
    h, w, c = shape
    r, q = np.indices((h, w), dtype=np.float64)
    ramp = math.cos(angle) * q / max(w - 1, 1) + math.sin(angle) * r / max(h - 1, 1)
    span = np.ptp(ramp)
    ramp = (ramp - ramp.min()) / span if span > 0 else np.zeros_like(ramp)
    img = lo + (hi - lo) * ramp
    return PixelField(np.repeat(img[:, :, None], c, axis=2))


def smooth_field(shape, rng: RngState, sigma: float = 2.0, lo: float = 0.1, hi: float = 0.9) -> PixelField:
    noise = ndimage.gaussian_filter(rng.normal(shape), sigma=(sigma, sigma, 0), mode="wrap")
    span = np.ptp(noise)
    scaled = (noise - noise.min()) / span if span > 0 else np.full(shape, 0.5)
    return PixelField(lo + (hi - lo) * scaled)


def toy_images(n: int, shape=(16, 16, 1), rng: RngState | None = None) -> list[PixelField]:
    """``n`` procedural textures cycling checkerboard, gradient, smooth field."""
    rng = rng or RngState(0)
    out = []
    for i in range(n):
        kind = i % 3
        if kind == 0:
            period = int(rng.integers(1, 5))
            lo = float(rng.uniform(0.05, 0.4))
            hi = float(rng.uniform(0.6, 0.95))
            out.append(checkerboard(shape, period, lo, hi, phase=int(rng.integers(0, period + 1))))
        elif kind == 1:
            out.append(gradient(shape, float(rng.uniform(0, 2 * math.pi))))
        else:
            out.append(smooth_field(shape, rng, sigma=float(rng.uniform(1.0, 3.0))))
    return out


@dataclass(frozen=True)
class Degradation:
    tag: str
    params: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return self.tag


def additive_noise(sigma: float = 0.1) -> Degradation:
    return Degradation(ADDITIVE_NOISE, {"sigma": sigma})


def gamma_darken(gamma_exp: float = 2.2) -> Degradation:
    return Degradation(GAMMA_DARKEN, {"gamma_exp": gamma_exp})


def box_blur(k: int = 3) -> Degradation:
    return Degradation(BOX_BLUR, {"k": k})


def streaks(count: int = 4, angle: float = 60.0, intensity: float = 0.5) -> Degradation:
    return Degradation(STREAKS, {"count": count, "angle": angle, "intensity": intensity})


def default_degradations() -> list[Degradation]:
    return [additive_noise(0.1), gamma_darken(2.2), box_blur(3), streaks(4, 60.0, 0.5)]


def parse_degradation(spec: str) -> Degradation:
    """Parse ``tag[:v1,v2,...]``, e.g. ``additive_noise:0.1`` or ``streaks:4,60,0.5``."""
    tag, _, rest = spec.partition(":")
    args = [float(v) for v in rest.split(",")] if rest else []
    makers = {
        ADDITIVE_NOISE: lambda a: additive_noise(*a),
        GAMMA_DARKEN: lambda a: gamma_darken(*a),
        BOX_BLUR: lambda a: box_blur(*(int(v) for v in a)),
        STREAKS: lambda a: streaks(*([int(a[0])] + a[1:] if a else [])),
    }
    if tag not in makers:
        raise InvalidParameters(f"unknown degradation {tag!r}")
    try:
        return makers[tag](args)
    except TypeError as exc:
        raise InvalidParameters(f"bad parameters for {tag}: {rest!r}") from exc


def _streak_mask(shape, count: int, angle_deg: float, rng: RngState) -> np.ndarray:
    h, w, _ = shape
    theta = math.radians(angle_deg)
    r, q = np.indices((h, w), dtype=np.float64)
    # signed distance to a line through (r0, q0) along direction theta
    proj = q * math.sin(theta) - r * math.cos(theta)
    lo, hi = proj.min(), proj.max()
    mask = np.zeros((h, w), dtype=bool)
    for off in rng.uniform(lo, hi, size=count):
        mask |= np.abs(proj - off) < 0.5
    return mask


def apply_degradation(x_hq: PixelField, d: Degradation, rng: RngState) -> PixelField:
    """Degrade a clean image in [0, 1]; the result is clipped to [0, 1]."""
    x = x_hq.data
    if np.any(x < 0) or np.any(x > 1):
        raise DomainError("clean image must lie in [0, 1]")
    p = d.params
    if d.tag == ADDITIVE_NOISE:
        sigma = float(p["sigma"])
        if sigma < 0:
            raise InvalidParameters("noise sigma must be nonnegative")
        y = x + sigma * rng.normal(x.shape) if sigma > 0 else x
    elif d.tag == GAMMA_DARKEN:
        g = float(p["gamma_exp"])
        if not g > 0:
            raise InvalidParameters("gamma exponent must be positive")
        y = x**g
    elif d.tag == BOX_BLUR:
        k = int(p["k"])
        if k < 1:
            raise InvalidParameters("blur size must be at least 1")
        y = ndimage.uniform_filter(x, size=(k, k, 1), mode="nearest") if k > 1 else x
    elif d.tag == STREAKS:
        count = int(p["count"])
        intensity = float(p["intensity"])
        if count < 0 or not 0 <= intensity <= 1:
            raise InvalidParameters("streaks need count >= 0 and intensity in [0, 1]")
        mask = _streak_mask(x.shape, count, float(p["angle"]), rng)
        y = x + intensity * mask[:, :, None]
    else:
        raise InvalidParameters(f"unknown degradation {d.tag!r}")
    return PixelField(np.clip(y, 0.0, 1.0))


def alignment_images(n: int = 16, shape=(16, 16, 1), rng: RngState | None = None) -> list[PixelField]:
    """Low-contrast smooth fields in [0.3, 0.7].

    Content differences stay small next to the degradation effects, so
    clustering by degradation type is measurable.
    """
    rng = rng or RngState(0)
    return [smooth_field(shape, rng, sigma=2.0, lo=0.3, hi=0.7) for _ in range(n)]
