"""Numerical experiments around the bridge: drift blow-up near the terminal
time, endpoint alignment, clustering of degraded states, and a Monte-Carlo
check of the reverse posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import bridge, schedules
from .docmap import implements
from .errors import (
    DegenerateClustering,
    DomainError,
    GridOutOfRange,
    InsufficientPoints,
    InsufficientSamples,
    ShapeMismatch,
    ZeroVector,
)
from .field import PixelField, RngState
from .schedules import DEFAULT_PARAMS, ScheduleParams
from .synthetic import Degradation, apply_degradation
from .uncertainty import BoxFilterRestorer, residual_uncertainty

STRICT_TERMINAL_GAP = 1e-4
MIN_PATHS = 100
MIN_COMPOSITION_SAMPLES = 10_000

# Euler-Maruyama step rule: fixed MAX_STEP far from t = 1, geometric
# refinement (step = REL_STEP * (1 - t)) close to it, never below MIN_STEP.
MAX_STEP = 1e-3
REL_STEP = 0.05
MIN_STEP = 1e-5

STRICT = "strict"
RELAXED_MIN = "relaxed_min"
RELAXED_ELEMENTWISE = "relaxed_elementwise"


# --- drift curves ----------------------------------------------------------


@dataclass
class DriftCurve:
    """Mean drift norm against remaining time ``1 - t``, ordered toward 0."""

    kind: str
    one_minus_t: np.ndarray
    mean_drift_norm: np.ndarray
    drift_norm_se: np.ndarray
    mean_residual_norm: np.ndarray  # E ||x_lq - x_t||
    n_paths: int
    sigma_min_sq: float

    def __post_init__(self) -> None:
        omt = np.asarray(self.one_minus_t, dtype=np.float64)
        if omt.ndim != 1 or omt.size == 0:
            raise GridOutOfRange("drift curve needs at least one grid point")
        if np.any(np.diff(omt) >= 0):
            raise GridOutOfRange("one_minus_t must strictly decrease")
        # only relaxed curves may reach the terminal time itself
        if np.any(omt < 0) or (self.kind == STRICT and np.any(omt <= 0)):
            raise GridOutOfRange("one_minus_t out of range")

    def points(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.one_minus_t, self.mean_drift_norm)]


def strict_drift(x_t: PixelField, x_lq: PixelField, t: float) -> PixelField:
    """Brownian-bridge drift (x_lq - x_t) / (1 - t) pinned at x_lq."""
    if not 0.0 <= t < 1.0:
        raise DomainError(f"strict drift undefined at t={t}")
    return PixelField((x_lq.data - x_t.data) / (1.0 - t))


def relaxed_drift(x_t: PixelField, x_lq: PixelField, u: PixelField, t: float, variant: str = RELAXED_MIN) -> PixelField:
    """Drift toward a Gaussian terminal law N(x_lq, (1+u)^2)."""
    return PixelField((x_lq.data - x_t.data) / _relaxed_denominator(u.data, t, variant))


def _relaxed_denominator(u: np.ndarray, t: float, variant: str):
    if variant == RELAXED_MIN:
        return (1.0 - t) + float(np.min((1.0 + u) ** 2))
    if variant == RELAXED_ELEMENTWISE:
        return (1.0 - t) + (1.0 + u) ** 2
    raise ValueError(f"unknown relaxed variant {variant!r}")


def _sorted_grid(t_grid: Sequence[float], t_max: float) -> np.ndarray:
    ts = np.asarray(sorted(set(float(t) for t in t_grid)), dtype=np.float64)
    if ts.size == 0:
        raise GridOutOfRange("empty time grid")
    if ts[0] < 0.0 or ts[-1] > t_max:
        raise GridOutOfRange(f"grid must lie in [0, {t_max}]")
    return ts


def _step(t: float, target: float) -> float:
    h = min(MAX_STEP, max(REL_STEP * (1.0 - t), MIN_STEP))
    return min(h, target - t)


def _simulate_drift(
    x_hq: PixelField,
    x_lq: PixelField,
    ts: np.ndarray,
    n_paths: int,
    rng: RngState,
    denom: Callable[[float], np.ndarray | float],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Euler-Maruyama on dx = (x_lq - x) / denom(t) dt + dW from x_hq at t = 0.

    All paths advance together. Returns per-grid-point mean and standard
    error of ||drift|| and the mean of ||x_lq - x_t||.
    """
    if x_hq.shape != x_lq.shape:
        raise ShapeMismatch("x_hq and x_lq shapes differ")
    if n_paths < MIN_PATHS:
        raise ValueError(f"need at least {MIN_PATHS} paths")
    lq = x_lq.data.reshape(-1)
    x = np.tile(x_hq.data.reshape(-1), (n_paths, 1))
    dim = lq.size
    means, ses, resids = [], [], []
    t = 0.0
    for target in ts:
        while t < target:
            h = _step(t, target)
            d = denom(t)
            x = x + (lq - x) / d * h + math.sqrt(h) * rng.normal((n_paths, dim))
            t = target if target - (t + h) < 1e-15 else t + h
        resid = lq - x
        r_norm = np.linalg.norm(resid, axis=1)
        d_norm = np.linalg.norm(resid / denom(t), axis=1)
        means.append(d_norm.mean())
        ses.append(d_norm.std(ddof=1) / math.sqrt(n_paths))
        resids.append(r_norm.mean())
    return np.array(means), np.array(ses), np.array(resids)


@implements(
    "drift blow-up of the strict bridge",
    "drift = (x_lq - x_t)/(1 - t), E||drift|| ~ (1 - t)^(-1/2)",
    tests=("test_strict_slope_near_minus_half", "test_strict_drift_zero_at_target", "test_strict_curve_path_doubling"),
)
def strict_drift_curve(
    x_hq: PixelField,
    x_lq: PixelField,
    t_grid: Sequence[float],
    n_paths: int,
    rng: RngState,
) -> DriftCurve:
    """E||drift|| of the pinned Brownian bridge from x_hq to x_lq."""
    ts = _sorted_grid(t_grid, 1.0 - STRICT_TERMINAL_GAP)
    means, ses, resids = _simulate_drift(x_hq, x_lq, ts, n_paths, rng, lambda t: 1.0 - t)
    return DriftCurve(STRICT, 1.0 - ts, means, ses, resids, n_paths, math.nan)


@implements(
    "bounded drift of the relaxed bridge",
    "drift = (x_lq - x_t)/((1 - t) + sigma_min^2), sigma_min^2 = min (1 + u)^2",
    tests=("test_relaxed_bounded_by_residual", "test_relaxed_terminal_limit", "test_relaxed_slope_flat"),
)
def relaxed_drift_curve(
    x_hq: PixelField,
    x_lq: PixelField,
    u: PixelField,
    t_grid: Sequence[float],
    n_paths: int,
    rng: RngState,
    variant: str = RELAXED_MIN,
) -> DriftCurve:
    """E||drift|| when the terminal constraint is Gaussian instead of a point.

    ``variant="relaxed_min"`` uses the scalar floor min (1+u)^2;
    ``"relaxed_elementwise"`` keeps (1+u)^2 per pixel.
    """
    if u.shape != x_lq.shape:
        raise ShapeMismatch("u must match the image shape")
    schedules.sigma_min_sq(u)  # range check
    ts = _sorted_grid(t_grid, 1.0)
    means, ses, resids = _simulate_drift(
        x_hq, x_lq, ts, n_paths, rng, lambda t: _relaxed_denominator(u.data.reshape(-1), t, variant)
    )
    return DriftCurve(variant, 1.0 - ts, means, ses, resids, n_paths, schedules.sigma_min_sq(u))


def fit_loglog_slope(curve: DriftCurve, window: tuple[float, float]) -> tuple[float, float]:
    """OLS slope of log(mean drift) on log(1 - t) inside ``window`` and its r^2."""
    lo, hi = window
    x = np.asarray(curve.one_minus_t, dtype=np.float64)
    y = np.asarray(curve.mean_drift_norm, dtype=np.float64)
    keep = (x >= lo * (1 - 1e-12)) & (x <= hi * (1 + 1e-12))
    if keep.sum() < 3:
        raise InsufficientPoints(f"need at least 3 points in window {window}, got {int(keep.sum())}")
    x, y = x[keep], y[keep]
    if np.any(x <= 0) or np.any(y <= 0):
        raise InsufficientPoints("log-log fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    dx = lx - lx.mean()
    dy = ly - ly.mean()
    sxx = float(dx @ dx)
    slope = float(dx @ dy) / sxx
    syy = float(dy @ dy)
    if syy == 0.0:
        return slope, 1.0
    resid = dy - slope * dx
    return slope, 1.0 - float(resid @ resid) / syy


def default_drift_grid(points: int = 25) -> list[float]:
    """Times whose distance to 1 is log-spaced over [1e-4, 0.3]."""
    return sorted(1.0 - np.logspace(math.log10(0.3), -4, points))


# --- geometry --------------------------------------------------------------


@implements(
    "end-point alignment",
    "cos(x_hq - x_lq, x_restored - x_lq)",
    tests=("test_alignment_identity", "test_alignment_scale_invariant", "test_alignment_zero_vector"),
)
def endpoint_alignment(x_lq: PixelField, x_hq: PixelField, x_restored: PixelField) -> float:
    if not x_lq.shape == x_hq.shape == x_restored.shape:
        raise ShapeMismatch("endpoint_alignment inputs must share a shape")
    ideal = (x_hq.data - x_lq.data).reshape(-1)
    pred = (x_restored.data - x_lq.data).reshape(-1)
    ni, npred = np.linalg.norm(ideal), np.linalg.norm(pred)
    if ni == 0.0 or npred == 0.0:
        raise ZeroVector("alignment needs nonzero displacements")
    return float(np.clip(ideal @ pred / (ni * npred), -1.0, 1.0))


@implements(
    "silhouette coefficient",
    "s_i = (b_i - a_i) / max(a_i, b_i), singleton clusters score 0",
    tests=("test_silhouette_far_clusters", "test_silhouette_matches_sklearn", "test_silhouette_singletons"),
)
def silhouette(points, labels) -> float:
    """Mean Euclidean silhouette over all points."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    labels = np.asarray(labels)
    n = pts.shape[0]
    if n < 2 or labels.shape != (n,):
        raise DegenerateClustering("need at least 2 labelled points")
    classes, inv = np.unique(labels, return_inverse=True)
    if classes.size < 2:
        raise DegenerateClustering("need at least 2 clusters")
    sq = np.sum(pts * pts, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * pts @ pts.T, 0.0)
    dist = np.sqrt(d2)
    np.fill_diagonal(dist, 0.0)
    onehot = np.eye(classes.size)[inv]  # (n, k)
    sums = dist @ onehot
    counts = onehot.sum(axis=0)
    own = counts[inv]
    a = np.where(own > 1, sums[np.arange(n), inv] / np.maximum(own - 1, 1), 0.0)
    other = sums / counts
    other[np.arange(n), inv] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def pca_scores(rows: np.ndarray, k: int = 2, max_iter: int = 5000, tol: float = 1e-12) -> np.ndarray:
    """Projections of the centred rows onto their top-``k`` principal axes.

    Subspace power iteration on the Gram matrix with a fixed starting block,
    so the result is deterministic. Components are ordered by variance and
    signed so the largest-magnitude entry of each score vector is positive.
    """
    x = np.asarray(rows, dtype=np.float64)
    x = x - x.mean(axis=0)
    n = x.shape[0]
    k = min(k, n)
    gram = x @ x.T
    idx = np.arange(1, n + 1, dtype=np.float64)
    block = np.stack([np.cos(idx * (j + 1) * 0.7 + j) for j in range(k)], axis=1)
    q, _ = np.linalg.qr(block)
    for _ in range(max_iter):
        z = gram @ q
        q_new, _ = np.linalg.qr(z)
        # the subspace has converged when the projector stops moving
        if np.linalg.norm(q_new @ (q_new.T @ q) - q) < tol * max(1.0, np.linalg.norm(q)):
            q = q_new
            break
        q = q_new
    # Rayleigh-Ritz inside the converged subspace
    small = q.T @ gram @ q
    evals, evecs = np.linalg.eigh(small)
    order = np.argsort(evals)[::-1]
    evals = np.maximum(evals[order], 0.0)
    u = q @ evecs[:, order]
    scores = u * np.sqrt(evals)
    for j in range(scores.shape[1]):
        col = scores[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            scores[:, j] = -col
    return scores


@dataclass
class AlignmentSet:
    """Degraded copies of every clean image, with per-pair uncertainty."""

    x_hq: list[PixelField]
    x_lq: list[PixelField]
    u: list[PixelField]
    labels: list[str]
    clean_index: list[int] = field(default_factory=list)


def build_alignment_set(
    x_hq_set: Sequence[PixelField], degradations: Sequence[Degradation], rng: RngState, psi=None
) -> AlignmentSet:
    psi = psi or BoxFilterRestorer(3)
    out = AlignmentSet([], [], [], [], [])
    for d in degradations:
        for i, x in enumerate(x_hq_set):
            lq = apply_degradation(x, d, rng)
            out.x_hq.append(x)
            out.x_lq.append(lq)
            out.u.append(residual_uncertainty(psi, lq))
            out.labels.append(d.tag)
            out.clean_index.append(i)
    return out


@implements(
    "manifold alignment along the bridge",
    "SC(t) = silhouette(PCA_2(x_t over pairs), degradation tag)",
    tests=("test_alignment_curve_trend", "test_alignment_curve_terminal_value", "test_alignment_curve_low_noise"),
)
def manifold_alignment_curve(
    x_hq_set: Sequence[PixelField],
    degradations: Sequence[Degradation],
    t_grid: Sequence[float],
    p: ScheduleParams = DEFAULT_PARAMS,
    rng: RngState | None = None,
    psi=None,
    pairs: AlignmentSet | None = None,
) -> list[tuple[float, float]]:
    """Silhouette of bridge states grouped by degradation type, per time.

    Degraded images and uncertainty maps are drawn once; each time point
    then draws fresh bridge noise for every pair. Pass ``pairs`` to reuse a
    prepared set (its uncertainty maps are used as given).
    """
    rng = rng or RngState(0)
    if len({d.tag for d in degradations}) < 2:
        raise DegenerateClustering("need at least 2 degradation tags")
    if len(x_hq_set) < 4:
        raise DegenerateClustering("need at least 4 images per tag")
    data = pairs or build_alignment_set(x_hq_set, degradations, rng, psi)
    curve = []
    for t in t_grid:
        rows = []
        for hq, lq, u in zip(data.x_hq, data.x_lq, data.u):
            x_t, _ = bridge.forward_sample(hq, lq, u, t, p, rng=rng)
            rows.append(x_t.data.reshape(-1))
        scores = pca_scores(np.stack(rows), 2)
        curve.append((float(t), silhouette(scores, data.labels)))
    return curve


# --- posterior oracle ------------------------------------------------------


@dataclass(frozen=True)
class CompositionReport:
    t: float
    s: float
    u: float
    n_samples: int
    mean_err: float  # worst bin, in standard errors
    var_err: float  # relative, or absolute when the analytic variance is 0
    empirical_var: float
    analytic_var: float
    mean_tolerance: float = 4.0
    var_tolerance: float = 0.02

    @property
    def passed(self) -> bool:
        return self.mean_err <= self.mean_tolerance and self.var_err <= self.var_tolerance


@implements(
    "Monte-Carlo check of the reverse posterior",
    "x_s ~ marginal(s); x_t = x_s + dalpha x_lq + dgamma x_hq + sqrt(beta_t^2 - beta_s^2) z; "
    "compare E[x_s | x_t], Var[x_s | x_t] with posterior_moments",
    tests=("test_composition_check_hand_case", "test_composition_check_random_configs", "test_composition_check_s_zero"),
)
def gaussian_composition_check(
    p: ScheduleParams,
    t: float,
    s: float,
    u: float,
    n_samples: int,
    rng: RngState,
    x_hq: float = 0.2,
    x_lq: float = 0.7,
    bins: int = 20,
) -> CompositionReport:
    """Compare posterior moments with a simulated Markov pair on one pixel.

    Samples are batched as the pixels of a single field, which is valid
    because every operation acts elementwise. The conditional variance is
    the residual variance of regressing x_s on x_t; the conditional mean is
    compared bin by bin over quantiles of x_t.
    """
    if not 0.0 <= s < t <= 1.0:
        raise DomainError(f"need 0 <= s < t <= 1, got s={s}, t={t}")
    if n_samples < MIN_COMPOSITION_SAMPLES:
        raise InsufficientSamples(f"need at least {MIN_COMPOSITION_SAMPLES} samples")
    uf = PixelField.full((1, n_samples, 1), u)
    hq = PixelField.full((1, n_samples, 1), x_hq)
    lq = PixelField.full((1, n_samples, 1), x_lq)
    cs = bridge.coefficients(s, uf, p)
    ct = bridge.coefficients(t, uf, p)
    x_s, _ = bridge.forward_sample(hq, lq, uf, s, p, rng=rng)
    bs2 = cs.beta.data ** 2
    bt2 = ct.beta.data ** 2
    step = (ct.alpha.data - cs.alpha.data) * x_lq + (ct.gamma.data - cs.gamma.data) * x_hq
    x_t = PixelField(x_s.data + step + np.sqrt(np.maximum(bt2 - bs2, 0.0)) * rng.normal(uf.shape))
    post = bridge.posterior_moments(x_t, lq, hq, ct, cs)

    xs = x_s.data.reshape(-1)
    xt = x_t.data.reshape(-1)
    mu = post.mean.data.reshape(-1)
    analytic_var = float(post.std.data.reshape(-1)[0] ** 2)

    xt_c = xt - xt.mean()
    sxx = float(xt_c @ xt_c)
    slope = float(xt_c @ (xs - xs.mean())) / sxx if sxx > 0 else 0.0
    resid = xs - xs.mean() - slope * xt_c
    empirical_var = float(resid @ resid) / (n_samples - 2)

    order = np.argsort(xt, kind="stable")
    worst = 0.0
    for chunk in np.array_split(order, bins):
        diff = abs(float(xs[chunk].mean() - mu[chunk].mean()))
        se = max(math.sqrt(max(empirical_var, 0.0) / chunk.size), 1e-12)
        worst = max(worst, diff / se)

    if analytic_var > 0:
        var_err = abs(empirical_var - analytic_var) / analytic_var
    else:
        var_err = abs(empirical_var)
    return CompositionReport(float(t), float(s), float(u), n_samples, worst, var_err, empirical_var, analytic_var)
