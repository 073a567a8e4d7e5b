"""Command-line entry point: one subcommand per experiment.

Every run writes its artifacts plus ``manifest.json`` (resolved inputs, seed,
sha256 of each output) into the output directory. Options come from
defaults, then ``--config`` JSON, then flags; flags win.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import analysis, bridge, mappings, schedules, toytrain
from .errors import BridgeKitError
from .field import PixelField, RngState, psnr
from .plot import PlotError, emit_svg_lineplot
from .pnm import read_field, write_field
from .sampler import IdentityPredictor, OraclePredictor, TimeGrid, run_pf_ode, run_reverse
from .schedules import ScheduleParams
from .synthetic import alignment_images, default_degradations, parse_degradation, smooth_field
from .uncertainty import make_restorer, residual_uncertainty

__all__ = ["main", "emit_svg_lineplot", "PlotError"]

ENV_OUT = "BRIDGEKIT_OUT"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
HIST_BINS = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


@dataclass
class Run:
    """Output directory and the list of files a subcommand produced."""

    out: Path
    options: dict
    files: list[Path] = field(default_factory=list)

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def csv(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
        self.files.append(p)
        return p

    def field(self, name: str, x: PixelField) -> Path:
        p = write_field(x, self.path(name))
        self.files.append(p)
        return p

    def svg(self, name: str, series, xlabel: str, ylabel: str, log_x=False, log_y=False) -> Path:
        p = emit_svg_lineplot(series, xlabel, ylabel, self.path(name), log_x, log_y)
        self.files.append(p)
        return p

    def manifest(self, command: str) -> Path:
        outputs = {}
        for p in sorted(set(self.files)):
            outputs[p.relative_to(self.out).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
        doc = {"command": command, "seed": self.options.get("seed"), "inputs": self.options, "outputs": outputs}
        p = self.out / "manifest.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p


def _params(o: dict) -> ScheduleParams:
    return ScheduleParams(lambda_b=float(o["lambda_b"]), pi_eot=float(o["pi_eot"])).checked()


def _image_size(o: dict) -> tuple[int, int, int]:
    n = int(o["size"])
    if n < 2:
        raise UsageError("--size must be at least 2")
    return (n, n, 1)


def _toy_pair(o: dict, rng: RngState) -> tuple[PixelField, PixelField]:
    from .synthetic import apply_degradation

    hq = smooth_field(_image_size(o), rng)
    return hq, apply_degradation(hq, parse_degradation(o["degradation"][0]), rng)


# --- subcommands -----------------------------------------------------------


def cmd_schedule_trace(run: Run, o: dict) -> None:
    steps = int(o["steps"])
    if steps < 2:
        raise UsageError("--steps must be at least 2")
    p = _params(o)
    u = PixelField.full((1, 1, 1), float(o["u"]))
    rows = []
    for t in np.linspace(0.0, 1.0, steps):
        t = float(t)
        try:
            adot = float(schedules.alpha_dot(t, u, p).data[0, 0, 0])
        except BridgeKitError:
            adot = math.nan  # endpoint velocity undefined for exponents below 1
        rows.append(
            (
                t,
                float(o["u"]),
                float(schedules.path_alpha(t, u, p).data[0, 0, 0]),
                float(schedules.path_gamma(t, u, p).data[0, 0, 0]),
                float(schedules.noise_beta(t, u, p).data[0, 0, 0]),
                adot,
                float(schedules.beta_dot(t, u, p).data[0, 0, 0]),
            )
        )
    run.csv("schedule.csv", ("t", "u", "alpha", "gamma", "beta", "alpha_dot", "beta_dot"), rows)
    run.svg(
        "schedule.svg",
        {name: [(r[0], r[i]) for r in rows] for i, name in ((2, "alpha"), (3, "gamma"), (4, "beta"))},
        "t",
        "coefficient",
    )


def cmd_singularity_demo(run: Run, o: dict) -> None:
    rng = RngState(int(o["seed"]))
    hq, lq = _toy_pair(o, rng.child(0))
    u = PixelField.full(hq.shape, float(o["u"]))
    grid = analysis.default_drift_grid(int(o["points"]))
    paths = int(o["paths"])
    curves = [
        analysis.strict_drift_curve(hq, lq, grid, paths, rng.child(1)),
        analysis.relaxed_drift_curve(hq, lq, u, grid + [1.0], paths, rng.child(2), analysis.RELAXED_MIN),
        analysis.relaxed_drift_curve(hq, lq, u, grid + [1.0], paths, rng.child(3), analysis.RELAXED_ELEMENTWISE),
    ]
    window = (1e-3, 1e-1)
    rows, slopes, series = [], [], {}
    for c in curves:
        rows.extend((c.kind, a, b) for a, b in c.points())
        slope, r2 = analysis.fit_loglog_slope(c, window)
        slopes.append((c.kind, slope, r2, window[0], window[1]))
        series[c.kind] = [(a, b) for a, b in c.points() if a > 0]
    run.csv("drift_curves.csv", ("bridge_type", "one_minus_t", "mean_drift_norm"), rows)
    run.csv("drift_slopes.csv", ("bridge_type", "slope", "r2", "window_lo", "window_hi"), slopes)
    run.svg("drift_curves.svg", series, "1 - t", "mean drift norm", log_x=True, log_y=True)


def _predictor(name: str, hq: PixelField | None, o: dict):
    if name == "oracle":
        if hq is None:
            raise UsageError("--predictor oracle needs a clean image")
        return OraclePredictor(hq)
    if name == "identity":
        return IdentityPredictor()
    if name == "restorer":
        psi = make_restorer(o["restorer"], int(o["k"]))
        return lambda x_t, t, u: psi(x_t)
    raise UsageError(f"unknown predictor {name!r}")


def _sampler(o: dict, pred, lq, u, steps: int, p, rng, keep_states: bool = False):
    grid = TimeGrid.uniform(steps)
    if o["sampler"] == "pf-ode":
        return run_pf_ode(pred, lq, u, grid, o["init"], p, rng, keep_states)
    if o["sampler"] != "reverse":
        raise UsageError(f"unknown sampler {o['sampler']!r}")
    return run_reverse(pred, lq, u, grid, float(o["eta"]), o["init"], p, rng, keep_states)


def _uncertainty(o: dict, lq: PixelField) -> PixelField:
    if o.get("u") is not None:
        return PixelField.full(lq.shape, float(o["u"]))
    return residual_uncertainty(make_restorer(o["restorer"], int(o["k"])), lq)


def cmd_sample(run: Run, o: dict) -> None:
    rng = RngState(int(o["seed"]))
    if o.get("lq"):
        lq = read_field(o["lq"])
        hq = read_field(o["hq"]) if o.get("hq") else None
    else:
        hq, lq = _toy_pair(o, rng.child(0))
    if hq is not None and hq.shape != lq.shape:
        raise UsageError("clean and degraded images differ in shape")
    p = _params(o)
    u = _uncertainty(o, lq)
    pred = _predictor(o["predictor"], hq, o)
    out, record = _sampler(o, pred, lq, u, int(o["steps"]), p, rng.child(1), bool(o.get("snapshots")))
    ext = "pgm" if out.channels == 1 else "ppm"
    run.field(f"restored.{ext}", out)
    run.field("restored.pfield", out)
    run.csv("trajectory.csv", record.CSV_COLUMNS, ([getattr(e, c) for c in record.CSV_COLUMNS] for e in record.entries))
    if hq is not None:
        run.csv("metrics.csv", ("psnr_restored", "psnr_degraded"), [(psnr(out, hq), psnr(lq, hq))])
    if o.get("snapshots"):
        run.files.extend(record.write_snapshots(run.out / "snapshots"))


def cmd_compare_mappings(run: Run, o: dict) -> None:
    points = int(o["points"])
    if points < 2:
        raise UsageError("--points must be at least 2")
    grid = [i / (points - 1) for i in range(points)]
    rows, series = [], {}
    for tag, m in mappings.default_methods().items():
        pts = []
        for t in grid:
            c = mappings.unified_at(m, t, mappings.CLEAN_AT_0)
            rows.append((tag, t, c.alpha, c.gamma, c.beta, abs(c.alpha + c.gamma - 1.0)))
            pts.append((t, c.beta))
        series[tag] = pts
    p = _params(o)
    u = PixelField.full((1, 1, 1), float(o["u"]))
    pts = []
    for t in grid:
        c = bridge.coefficients(t, u, p)
        a, g, b = (float(f.data[0, 0, 0]) for f in (c.alpha, c.gamma, c.beta))
        rows.append(("UDBM", t, a, g, b, abs(a + g - 1.0)))
        pts.append((t, b))
    series["UDBM"] = pts
    run.csv("mappings.csv", ("method", "t", "alpha", "gamma", "beta", "convexity_gap"), rows)
    run.svg("mappings_beta.svg", series, "t (clean at 0)", "beta")


def cmd_align_curve(run: Run, o: dict) -> None:
    rng = RngState(int(o["seed"]))
    p = _params(o)
    points = int(o["points"])
    if points < 2:
        raise UsageError("--points must be at least 2")
    imgs = alignment_images(int(o["images"]), _image_size(o), rng)
    degs = [parse_degradation(s) for s in o["degradation"]] if o.get("degradation") else default_degradations()
    grid = [i / (points - 1) for i in range(points)]
    curve = analysis.manifold_alignment_curve(imgs, degs, grid, p, rng)
    run.csv("sc_curve.csv", ("t", "silhouette"), curve)
    run.svg("sc_curve.svg", {f"lambda_b={p.lambda_b:g}": curve}, "t", "silhouette")


def cmd_train_toy(run: Run, o: dict) -> None:
    seed = int(o["seed"])
    setup = toytrain.default_toy_setup(seed, int(o["iterations"]), float(o["lr"]))
    cfg = toytrain.TrainConfig(
        iterations=setup.config.iterations,
        learning_rate=setup.config.learning_rate,
        batch=int(o["batch"]),
        seed=seed,
        schedule=_params(o),
    )
    psi = make_restorer(o["restorer"], int(o["k"]))
    result = toytrain.train(setup.train_pairs, psi, cfg)
    windowed = result.windowed_mean(cfg.window)
    run.csv("loss.csv", ("iteration", "loss", "windowed_mean"), ((i, l, w) for i, (l, w) in enumerate(zip(result.losses, windowed))))
    model = result.predictor
    run.field("params_a.pfield", model.a)
    run.field("params_b.pfield", model.b)
    run.field("params_c.pfield", model.c)
    ev = toytrain.evaluate(model, setup.test_pairs, psi, cfg.schedule, TimeGrid.uniform(int(o["steps"])), float(o["eta"]))
    run.csv("eval.csv", ("psnr_restored", "psnr_degraded", "n_pairs"), [(ev.psnr_restored, ev.psnr_degraded, ev.n_pairs)])
    if result.losses:
        run.svg("loss.svg", {"windowed loss": list(enumerate(windowed))}, "iteration", "L1 loss")


def cmd_geometry_check(run: Run, o: dict) -> None:
    rng = RngState(int(o["seed"]))
    p = _params(o)
    counts = [int(v) for v in str(o["step_counts"]).split(",")]
    if any(n < 1 for n in counts):
        raise UsageError("step counts must be positive")
    pairs = [_toy_pair(o, rng.child(i)) for i in range(int(o["pairs"]))]
    rows = []
    for n in counts:
        aligns, gains = [], []
        for i, (hq, lq) in enumerate(pairs):
            u = _uncertainty(o, lq)
            pred = _predictor(o["predictor"], hq, o)
            out, record = _sampler(o, pred, lq, u, n, p, rng.child(1000 + i))
            aligns.append(analysis.endpoint_alignment(lq, hq, record.raw_output))
            gains.append(psnr(out, hq))
        rows.append((n, float(np.mean(aligns)), float(np.mean(gains))))
    run.csv("geometry.csv", ("steps", "endpoint_alignment", "psnr_restored"), rows)
    run.svg("geometry.svg", {"alignment": [(r[0], r[1]) for r in rows]}, "sampling steps", "cosine similarity", log_x=True)


def cmd_uncertainty_map(run: Run, o: dict) -> None:
    rng = RngState(int(o["seed"]))
    lq = read_field(o["lq"]) if o.get("lq") else _toy_pair(o, rng)[1]
    psi = make_restorer(o["restorer"], int(o["k"]))
    u = residual_uncertainty(psi, lq)
    ext = "pgm" if u.channels == 1 else "ppm"
    run.field(f"uncertainty.{ext}", u)
    run.field("uncertainty.pfield", u)
    d = u.data
    run.csv("uncertainty_stats.csv", ("mean", "std", "min", "max"), [(d.mean(), d.std(), d.min(), d.max())])
    counts, edges = np.histogram(d, bins=HIST_BINS, range=(0.0, 1.0))
    run.csv("uncertainty_hist.csv", ("bin_lo", "bin_hi", "count"), zip(edges[:-1], edges[1:], counts))


def cmd_composition_check(run: Run, o: dict) -> None:
    rng = RngState(int(o["seed"]))
    n = int(o["samples"])
    configs = [(0.8, 0.4, 0.0, 1.0)]  # hand case: posterior variance 0.12
    for _ in range(int(o["configs"]) - 1):
        t = float(rng.uniform(0.05, 1.0))
        configs.append((t, float(rng.uniform(0.0, 0.95 * t)), float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.05, 2.0))))
    rows = []
    for i, (t, s, u, lb) in enumerate(configs):
        p = ScheduleParams(lambda_b=lb, pi_eot=float(o["pi_eot"])).checked()
        r = analysis.gaussian_composition_check(p, t, s, u, n, rng.child(i))
        rows.append((t, s, u, lb, r.mean_err, r.var_err, r.empirical_var, r.analytic_var, r.passed))
    run.csv(
        "composition.csv",
        ("t", "s", "u", "lambda_b", "mean_err", "var_err", "empirical_var", "analytic_var", "passed"),
        rows,
    )


# --- argument parsing ------------------------------------------------------

COMMON_DEFAULTS = {"seed": 0, "lambda_b": 1.0, "pi_eot": 0.5}


@dataclass(frozen=True)
class Command:
    run: Callable[[Run, dict], None]
    help: str
    defaults: dict


COMMANDS: dict[str, Command] = {
    "schedule-trace": Command(cmd_schedule_trace, "tabulate path and noise coefficients over t", {"u": 0.5, "steps": 101}),
    "singularity-demo": Command(
        cmd_singularity_demo,
        "drift norm near t = 1 for the pinned and relaxed bridges",
        {"paths": 1000, "u": 0.0, "points": 25, "size": 8, "degradation": ["additive_noise:0.1"]},
    ),
    "sample": Command(
        cmd_sample,
        "restore one image with the reverse sampler",
        {
            "hq": None, "lq": None, "predictor": "oracle", "steps": 10, "eta": 0.0, "init": "stochastic",
            "sampler": "reverse", "restorer": "box", "k": 3, "u": None, "size": 16,
            "degradation": ["additive_noise:0.1"], "snapshots": False,
        },
    ),
    "compare-mappings": Command(cmd_compare_mappings, "express other bridge schedules in unified coefficients", {"points": 101, "u": 0.0}),
    "align-curve": Command(
        cmd_align_curve,
        "silhouette of degradation clusters along the bridge",
        {"points": 11, "images": 16, "size": 16, "degradation": None},
    ),
    "train-toy": Command(
        cmd_train_toy,
        "train the linear toy predictor and evaluate single-step restoration",
        {"iterations": 5000, "lr": 1e-2, "batch": toytrain.TOY_BATCH, "restorer": "box", "k": 3, "steps": 1, "eta": 0.0},
    ),
    "geometry-check": Command(
        cmd_geometry_check,
        "end-point alignment of restorations across step counts",
        {
            "step_counts": "1,2,5,10,20", "pairs": 4, "predictor": "restorer", "restorer": "box", "k": 3,
            "eta": 0.0, "init": "deterministic", "sampler": "reverse", "u": None, "size": 16,
            "degradation": ["additive_noise:0.1"],
        },
    ),
    "uncertainty-map": Command(
        cmd_uncertainty_map,
        "pixel-wise uncertainty of a degraded image",
        {"lq": None, "restorer": "box", "k": 3, "size": 16, "degradation": ["additive_noise:0.1"]},
    ),
    "composition-check": Command(
        cmd_composition_check,
        "Monte-Carlo check of the reverse posterior moments",
        {"configs": 20, "samples": 100_000},
    ),
}

# flag name -> (type, extra argparse kwargs)
FLAGS: dict[str, tuple] = {
    "u": (float, {}),
    "steps": (int, {}),
    "paths": (int, {}),
    "points": (int, {}),
    "size": (int, {}),
    "degradation": (str, {"action": "append", "metavar": "TAG[:ARGS]"}),
    "hq": (str, {"metavar": "PATH"}),
    "lq": (str, {"metavar": "PATH"}),
    "predictor": (str, {"choices": ("oracle", "identity", "restorer")}),
    "eta": (float, {}),
    "init": (str, {"choices": ("stochastic", "deterministic")}),
    "sampler": (str, {"choices": ("reverse", "pf-ode")}),
    "restorer": (str, {"choices": ("identity", "box", "median")}),
    "k": (int, {}),
    "snapshots": (None, {"action": "store_true", "default": None}),
    "images": (int, {}),
    "iterations": (int, {}),
    "lr": (float, {}),
    "batch": (int, {}),
    "step_counts": (str, {"metavar": "N1,N2,..."}),
    "pairs": (int, {}),
    "configs": (int, {}),
    "samples": (int, {}),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bridgekit", description="Diffusion bridge experiments")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, cmd in COMMANDS.items():
        sp = sub.add_parser(name, help=cmd.help, description=cmd.help)
        sp.add_argument("--config", metavar="PATH", help="JSON file of option values; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", metavar="DIR", help=f"output directory (default ${ENV_OUT} or ./out)")
        sp.add_argument("--lambda-b", dest="lambda_b", type=float)
        sp.add_argument("--pi-eot", dest="pi_eot", type=float)
        for key in cmd.defaults:
            typ, extra = FLAGS[key]
            kwargs = dict(extra)
            if typ is not None:
                kwargs["type"] = typ
            sp.add_argument("--" + key.replace("_", "-"), dest=key, **kwargs)
    return parser


def resolve_options(command: str, ns: argparse.Namespace) -> dict:
    """Merge defaults, the JSON config and explicit flags (in that order)."""
    allowed = {**COMMON_DEFAULTS, **COMMANDS[command].defaults}
    config: dict = {}
    if ns.config:
        try:
            config = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from exc
        if not isinstance(config, dict):
            raise UsageError("config must be a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
        unknown = sorted(set(config) - set(allowed) - {"out"})
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    flags = {k: v for k, v in vars(ns).items() if k in allowed and v is not None}
    opts = {**allowed, **{k: v for k, v in config.items() if k != "out"}, **flags}
    out = ns.out or config.get("out") or os.environ.get(ENV_OUT) or "out"
    opts["out"] = str(out)
    return opts


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = ns.command
    try:
        opts = resolve_options(command, ns)
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        run = Run(out, opts)
        COMMANDS[command].run(run, opts)
        run.manifest(command)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"bridgekit {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BridgeKitError, ValueError, OSError, ArithmeticError) as exc:
        print(f"bridgekit {command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
