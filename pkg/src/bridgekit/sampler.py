"""Reverse-time inference over a descending time grid.

:func:`run_reverse` is the unified DDPM/DDIM loop: start near ``x_lq`` at
t = 1, predict the clean image at each grid time, step to the next time,
and return the prediction directly at the final step (where beta_0 = 0).
:func:`run_pf_ode` integrates the probability-flow ODE with explicit Euler.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from . import bridge, schedules
from .docmap import implements
from .errors import DomainError, InvalidGrid, NonFiniteValue, PredictorShapeMismatch
from .field import PixelField, RngState, clip
from .schedules import DEFAULT_PARAMS, ScheduleParams


class Predictor(Protocol):
    def __call__(self, x_t: PixelField, t: float, u: PixelField) -> PixelField: ...


@dataclass(frozen=True)
class OraclePredictor:
    """Always returns the stored clean image."""

    x_hq: PixelField

    def __call__(self, x_t: PixelField, t: float, u: PixelField) -> PixelField:
        return self.x_hq


class IdentityPredictor:
    def __call__(self, x_t: PixelField, t: float, u: PixelField) -> PixelField:
        return x_t


@dataclass(frozen=True)
class TimeGrid:
    times: tuple[float, ...]  # descending, times[0] == 1, times[-1] == 0

    def __post_init__(self) -> None:
        ts = self.times
        if len(ts) < 2 or ts[0] != 1.0 or ts[-1] != 0.0:
            raise InvalidGrid("grid must start at exactly 1 and end at exactly 0")
        if any(b >= a for a, b in zip(ts, ts[1:])):
            raise InvalidGrid("grid times must strictly descend")

    @classmethod
    def uniform(cls, steps: int) -> TimeGrid:
        if steps < 1:
            raise InvalidGrid("need at least one step")
        return cls(tuple(i / steps for i in range(steps, -1, -1)))

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    def pairs(self):
        """Yield (t, s) for each step, t > s."""
        return zip(self.times[:-1], self.times[1:])


@dataclass
class TrajectoryEntry:
    t: float
    state_mean: float
    state_std: float
    dist_to_lq: float
    pred_dist_to_lq: float


@dataclass
class TrajectoryRecord:
    entries: list[TrajectoryEntry] = field(default_factory=list)
    states: list[PixelField] = field(default_factory=list)
    raw_output: PixelField | None = None
    metadata: dict = field(default_factory=dict)

    CSV_COLUMNS = ("t", "state_mean", "state_std", "dist_to_lq", "pred_dist_to_lq")

    def add(self, t: float, state: PixelField, pred: PixelField, x_lq: PixelField, keep: bool) -> None:
        self.entries.append(
            TrajectoryEntry(
                t=float(t),
                state_mean=float(state.data.mean()),
                state_std=float(state.data.std()),
                dist_to_lq=float(np.linalg.norm(state.data - x_lq.data)),
                pred_dist_to_lq=float(np.linalg.norm(pred.data - x_lq.data)),
            )
        )
        if keep:
            self.states.append(state)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_COLUMNS)
            for e in self.entries:
                w.writerow([f"{getattr(e, c):.12g}" for c in self.CSV_COLUMNS])
        return path

    def write_snapshots(self, directory: str | Path) -> list[Path]:
        from .pnm import write_field

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for i, state in enumerate(self.states):
            ext = "pgm" if state.channels == 1 else "ppm"
            out.append(write_field(clip(state, 0.0, 1.0), directory / f"step_{i}.{ext}"))
        return out


def _predict(pred: Predictor | Callable, x_t: PixelField, t: float, u: PixelField) -> PixelField:
    x_hat0 = pred(x_t, t, u)
    if not isinstance(x_hat0, PixelField):
        try:
            x_hat0 = PixelField(np.asarray(x_hat0, dtype=np.float64).reshape(x_t.shape))
        except ValueError as exc:
            raise PredictorShapeMismatch(str(exc)) from exc
    if x_hat0.shape != x_t.shape:
        raise PredictorShapeMismatch(f"predictor returned {x_hat0.shape}, expected {x_t.shape}")
    return x_hat0


@implements(
    "relaxed terminal initialization",
    "x_1 = x_lq + (1 + u) z",
    tests=("test_init_terminal_deterministic", "test_init_terminal_std"),
)
def init_terminal(
    x_lq: PixelField, u: PixelField, mode: str = "stochastic", rng: RngState | None = None
) -> PixelField:
    beta1 = schedules.noise_beta(1.0, u)  # validates u; equals 1 + u
    if mode == "deterministic":
        return x_lq
    if mode != "stochastic":
        raise ValueError(f"unknown init mode {mode!r}")
    if rng is None:
        raise ValueError("stochastic initialization needs rng")
    return PixelField(x_lq.data + beta1.data * rng.normal(x_lq.shape))


def _check_eta(eta: float) -> None:
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"eta={eta} outside [0, 1]")


@implements(
    "unified DDPM/DDIM inference loop",
    "for t > s on the grid: x_hat0 = N(x_t, t, u); x_s = general_step(...) or x_hat0 at s = 0; return clip(x_0)",
    tests=("test_run_reverse_oracle_single_step", "test_run_reverse_oracle_saturation", "test_run_reverse_identity"),
)
def run_reverse(
    pred: Predictor,
    x_lq: PixelField,
    u: PixelField,
    grid: TimeGrid,
    eta: float = 0.0,
    mode: str = "stochastic",
    p: ScheduleParams = DEFAULT_PARAMS,
    rng: RngState | None = None,
    keep_states: bool = False,
) -> tuple[PixelField, TrajectoryRecord]:
    _check_eta(eta)
    record = TrajectoryRecord(metadata={"sampler": "reverse", "eta": eta, "mode": mode, "steps": grid.steps})
    x = init_terminal(x_lq, u, mode, rng)
    for t, s in grid.pairs():
        x_hat0 = _predict(pred, x, t, u)
        record.add(t, x, x_hat0, x_lq, keep_states)
        if s > 0.0:
            x = bridge.general_step(
                x, x_lq, x_hat0, bridge.coefficients(t, u, p), bridge.coefficients(s, u, p), eta, rng
            )
        else:
            x = x_hat0
    record.add(0.0, x, x, x_lq, keep_states)
    record.raw_output = x
    return clip(x, 0.0, 1.0), record


@implements(
    "probability-flow ODE, explicit Euler",
    "x_s = x_t - (t - s) v(x_t, t)",
    tests=("test_run_pf_ode_single_step_exact", "test_run_pf_ode_step_count_consistency"),
)
def run_pf_ode(
    pred: Predictor,
    x_lq: PixelField,
    u: PixelField,
    grid: TimeGrid,
    mode: str = "deterministic",
    p: ScheduleParams = DEFAULT_PARAMS,
    rng: RngState | None = None,
    keep_states: bool = False,
) -> tuple[PixelField, TrajectoryRecord]:
    """Euler-integrate the flow from t = 1 to 0.

    Where the path velocity is undefined (t = 1 with some pi(u) < 1) it is
    evaluated at the step midpoint instead; such steps are listed in
    ``record.metadata["alpha_dot_midpoint_steps"]``.
    """
    record = TrajectoryRecord(metadata={"sampler": "pf_ode", "mode": mode, "steps": grid.steps})
    midpoint_steps = []
    slow = bool(np.any(schedules.exponent_pi(u, p).data < 1.0))
    x = init_terminal(x_lq, u, mode, rng)
    for i, (t, s) in enumerate(grid.pairs()):
        x_hat0 = _predict(pred, x, t, u)
        record.add(t, x, x_hat0, x_lq, keep_states)
        adot_t = None
        if slow and t == 1.0:
            adot_t = 0.5 * (t + s)
            midpoint_steps.append(i)
        v = bridge.pf_ode_velocity(x, x_lq, x_hat0, u, t, p, alpha_dot_t=adot_t)
        try:
            x = PixelField(x.data - (t - s) * v.data)
        except NonFiniteValue as exc:
            raise NonFiniteValue(f"Euler step from t={t} diverged") from exc
    record.add(0.0, x, x, x_lq, keep_states)
    record.raw_output = x
    record.metadata["alpha_dot_midpoint_steps"] = midpoint_steps
    return clip(x, 0.0, 1.0), record
