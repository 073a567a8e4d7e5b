"""Training loop for a clean-image predictor, at toy scale.

The predictor is elementwise linear, ``x_hat0 = a*x_t + b*x_lq + c``, so the
L1 subgradient is available in closed form and plain SGD suffices. It is a
stand-in for a neural network and its PSNR numbers mean nothing beyond the
toy data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import bridge
from .docmap import implements
from .errors import DivergenceDetected, EmptyDataset, InvalidParameters, ShapeMismatch
from .field import PixelField, RngState, psnr
from .sampler import TimeGrid, run_reverse
from .schedules import DEFAULT_PARAMS, ScheduleParams
from .synthetic import Degradation, additive_noise, apply_degradation, toy_images
from .uncertainty import BoxFilterRestorer, residual_uncertainty

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 100


@dataclass(frozen=True)
class LinearPredictor:
    a: PixelField  # gain on x_t
    b: PixelField  # gain on x_lq
    c: PixelField  # bias

    def __post_init__(self) -> None:
        if not self.a.shape == self.b.shape == self.c.shape:
            raise ShapeMismatch("predictor parameters must share a shape")

    @classmethod
    def zeros(cls, shape) -> LinearPredictor:
        z = PixelField.zeros(shape)
        return cls(z, z, z)

    @property
    def shape(self):
        return self.a.shape

    def predict(self, x_t: PixelField, x_lq: PixelField) -> PixelField:
        if x_t.shape != self.shape or x_lq.shape != self.shape:
            raise ShapeMismatch(f"predictor expects shape {self.shape}")
        return PixelField(self.a.data * x_t.data + self.b.data * x_lq.data + self.c.data)

    def conditioned(self, x_lq: PixelField) -> BoundPredictor:
        """Sampler-compatible callable with ``x_lq`` fixed."""
        return BoundPredictor(self, x_lq)


@dataclass(frozen=True)
class BoundPredictor:
    model: LinearPredictor
    x_lq: PixelField

    def __call__(self, x_t: PixelField, t: float, u: PixelField) -> PixelField:
        return self.model.predict(x_t, self.x_lq)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 5000
    learning_rate: float = 1e-2
    batch: int = 1
    seed: int = 0
    schedule: ScheduleParams = DEFAULT_PARAMS
    window: int = 100

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise InvalidParameters("iterations must be nonnegative")
        if not 0.0 <= self.learning_rate <= 1.0:
            raise InvalidParameters("learning_rate must lie in [0, 1]")
        if self.batch < 1:
            raise InvalidParameters("batch must be at least 1")
        if self.window < 1:
            raise InvalidParameters("window must be at least 1")


@dataclass
class TrainResult:
    predictor: LinearPredictor
    losses: list[float] = field(default_factory=list)

    def windowed_mean(self, window: int) -> list[float]:
        """Trailing mean over up to ``window`` previous losses."""
        arr = np.asarray(self.losses, dtype=np.float64)
        csum = np.concatenate([[0.0], np.cumsum(arr)])
        idx = np.arange(1, arr.size + 1)
        start = np.maximum(idx - window, 0)
        return list((csum[idx] - csum[start]) / (idx - start))


@implements(
    "L1 reconstruction loss",
    "mean |x_hat0 - x_hq|",
    tests=("test_l1_loss_examples", "test_l1_loss_symmetric"),
)
def l1_loss(x_hat0: PixelField, x_hq: PixelField) -> float:
    if x_hat0.shape != x_hq.shape:
        raise ShapeMismatch("l1_loss inputs must share a shape")
    return float(np.mean(np.abs(x_hat0.data - x_hq.data)))


def l1_subgradient(
    model: LinearPredictor, x_t: PixelField, x_lq: PixelField, x_hq: PixelField
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Subgradient of ``sum |x_hat0 - x_hq|`` with respect to (a, b, c), sign(0) = 0."""
    g = np.sign(model.predict(x_t, x_lq).data - x_hq.data)
    return g * x_t.data, g * x_lq.data, g


@implements(
    "x0-prediction training loop",
    "sample (pair, t, eps); u = clip(U(psi(x_lq))); x_t = alpha x_lq + gamma x_hq + beta eps; "
    "theta -= lr * d||N(x_t) - x_hq||_1 / d theta",
    tests=("test_train_oracle_stationary", "test_train_zero_lr_constant", "test_train_halves_loss"),
)
def train(
    pairs: Sequence[tuple[PixelField, PixelField]],
    psi,
    cfg: TrainConfig,
    init: LinearPredictor | None = None,
) -> TrainResult:
    """SGD on the L1 loss; the history holds the batch-mean loss before each update.

    Uncertainty maps are computed once per pair since the restorer is frozen.
    """
    if not pairs:
        raise EmptyDataset("training needs at least one pair")
    shape = pairs[0][0].shape
    for hq, lq in pairs:
        if hq.shape != shape or lq.shape != shape:
            raise ShapeMismatch("all training pairs must share a shape")
    maps = [residual_uncertainty(psi, lq) for _, lq in pairs]
    model = init or LinearPredictor.zeros(shape)
    a, b, c = (np.array(f.data) for f in (model.a, model.b, model.c))
    rng = RngState(cfg.seed)
    p = cfg.schedule
    losses: list[float] = []
    bad_run = 0
    for it in range(cfg.iterations):
        ga, gb, gc = np.zeros(shape), np.zeros(shape), np.zeros(shape)
        batch_loss = 0.0
        current = LinearPredictor(PixelField(a), PixelField(b), PixelField(c))
        for _ in range(cfg.batch):
            k = int(rng.integers(0, len(pairs)))
            hq, lq = pairs[k]
            t = float(rng.uniform())
            x_t, _ = bridge.forward_sample(hq, lq, maps[k], t, p, rng=rng)
            batch_loss += l1_loss(current.predict(x_t, lq), hq)
            da, db, dc = l1_subgradient(current, x_t, lq, hq)
            ga += da
            gb += db
            gc += dc
        loss = batch_loss / cfg.batch
        if not math.isfinite(loss):
            raise DivergenceDetected(f"non-finite loss at iteration {it}")
        losses.append(loss)
        if losses[0] > 0 and loss > DIVERGENCE_FACTOR * losses[0]:
            bad_run += 1
            if bad_run >= DIVERGENCE_PATIENCE:
                raise DivergenceDetected(f"loss above {DIVERGENCE_FACTOR:g}x initial for {bad_run} iterations")
        else:
            bad_run = 0
        step = cfg.learning_rate / cfg.batch
        a = a - step * ga
        b = b - step * gb
        c = c - step * gc
    final = LinearPredictor(PixelField(a), PixelField(b), PixelField(c))
    return TrainResult(final, losses)


@dataclass(frozen=True)
class EvalReport:
    psnr_restored: float
    psnr_degraded: float
    n_pairs: int


def evaluate(
    model: LinearPredictor,
    pairs: Sequence[tuple[PixelField, PixelField]],
    psi,
    p: ScheduleParams = DEFAULT_PARAMS,
    grid: TimeGrid | None = None,
    eta: float = 0.0,
    mode: str = "deterministic",
    rng: RngState | None = None,
) -> EvalReport:
    """Mean PSNR of restorations and of the degraded inputs; ``inf`` if any is exact."""
    if not pairs:
        raise EmptyDataset("evaluation needs at least one pair")
    grid = grid or TimeGrid.uniform(1)
    restored, degraded = [], []
    for hq, lq in pairs:
        u = residual_uncertainty(psi, lq)
        out, _ = run_reverse(model.conditioned(lq), lq, u, grid, eta, mode, p, rng)
        restored.append(psnr(out, hq))
        degraded.append(psnr(lq, hq))
    return EvalReport(float(np.mean(restored)), float(np.mean(degraded)), len(pairs))


def toy_pairs(
    n: int,
    degradation: Degradation | None = None,
    rng: RngState | None = None,
    shape=(16, 16, 1),
) -> list[tuple[PixelField, PixelField]]:
    """(clean, degraded) pairs of procedural textures."""
    rng = rng or RngState(0)
    degradation = degradation or additive_noise(0.1)
    return [(hq, apply_degradation(hq, degradation, rng)) for hq in toy_images(n, shape, rng)]


def default_restorer():
    return BoxFilterRestorer(3)


TOY_TRAIN_PAIRS = 256
TOY_TEST_PAIRS = 16
TOY_BATCH = 8
TEST_SEED_OFFSET = 1000


@dataclass
class ToySetup:
    train_pairs: list
    test_pairs: list
    config: TrainConfig


def default_toy_setup(seed: int = 0, iterations: int = 5000, learning_rate: float = 1e-2) -> ToySetup:
    """Additive-noise toy problem with test textures drawn from an independent stream.

    The per-pixel model only generalizes across textures when it sees many
    of them, hence the large training set; batching averages the sign
    subgradients so the final parameters do not jitter.
    """
    train_pairs = toy_pairs(TOY_TRAIN_PAIRS, additive_noise(0.1), RngState(seed))
    test_pairs = toy_pairs(TOY_TEST_PAIRS, additive_noise(0.1), RngState(seed + TEST_SEED_OFFSET))
    cfg = TrainConfig(iterations=iterations, learning_rate=learning_rate, batch=TOY_BATCH, seed=seed)
    return ToySetup(train_pairs, test_pairs, cfg)
