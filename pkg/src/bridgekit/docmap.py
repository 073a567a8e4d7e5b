"""Formula-to-code map generated from in-source annotations.

Functions that implement a published relation are decorated with
:func:`implements`, naming the relation and the tests that pin it down.
:func:`generate_equation_map` renders the registry as a markdown table and
fails loudly when a required operation is unannotated or cites a test that
does not exist.
"""

from __future__ import annotations

import importlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, TypeVar

from .errors import MissingAnnotation

F = TypeVar("F", bound=Callable)


@dataclass(frozen=True)
class EquationMapEntry:
    operation: str  # "module.function"
    relation: str
    formula: str
    tests: tuple[str, ...]


_REGISTRY: dict[str, EquationMapEntry] = {}

# Operations backed by a published relation; each must carry an annotation.
REQUIRED_OPERATIONS: tuple[str, ...] = (
    "field.sample_gaussian",
    "field.clip",
    "schedules.exponent_pi",
    "schedules.path_alpha",
    "schedules.path_gamma",
    "schedules.noise_beta",
    "schedules.alpha_dot",
    "schedules.beta_dot",
    "bridge.forward_sample",
    "bridge.epsilon_from_prediction",
    "bridge.posterior_moments",
    "bridge.ddpm_step",
    "bridge.ddim_step",
    "bridge.general_step",
    "bridge.pf_ode_velocity",
    "sampler.init_terminal",
    "sampler.run_reverse",
    "sampler.run_pf_ode",
    "uncertainty.residual_uncertainty",
    "uncertainty.ggd_uncertainty",
    "uncertainty.heteroscedastic_nll",
    "uncertainty.gamma_function",
    "mappings.to_unified",
    "analysis.strict_drift_curve",
    "analysis.relaxed_drift_curve",
    "analysis.endpoint_alignment",
    "analysis.silhouette",
    "analysis.manifold_alignment_curve",
    "analysis.gaussian_composition_check",
    "toytrain.l1_loss",
    "toytrain.train",
)

_MODULES = ("field", "schedules", "bridge", "sampler", "uncertainty", "mappings", "analysis", "toytrain")


def implements(relation: str, formula: str, tests: Iterable[str]) -> Callable[[F], F]:
    """Register the decorated function as the home of ``relation``."""

    def deco(fn: F) -> F:
        module = fn.__module__.rsplit(".", 1)[-1]
        key = f"{module}.{fn.__name__}"
        _REGISTRY[key] = EquationMapEntry(key, relation, formula, tuple(tests))
        return fn

    return deco


def registry() -> dict[str, EquationMapEntry]:
    for name in _MODULES:
        importlib.import_module(f"bridgekit.{name}")
    return dict(_REGISTRY)


def _collect_test_names(test_dir: Path) -> set[str]:
    names: set[str] = set()
    for path in sorted(test_dir.glob("test_*.py")):
        names.update(re.findall(r"^\s*def (test_\w+)", path.read_text(encoding="utf-8"), flags=re.M))
    return names


def generate_equation_map(
    test_dir: str | Path,
    entries: dict[str, EquationMapEntry] | None = None,
    required: Iterable[str] = REQUIRED_OPERATIONS,
) -> str:
    """Render the registry as a markdown table.

    Raises MissingAnnotation naming the first required operation without an
    entry, or the first entry citing a test absent from ``test_dir``.
    """
    entries = registry() if entries is None else entries
    known_tests = _collect_test_names(Path(test_dir))
    for op in required:
        if op not in entries:
            raise MissingAnnotation(f"{op} has no formula annotation")
    for op in sorted(entries):
        entry = entries[op]
        if not entry.tests:
            raise MissingAnnotation(f"{op} registers no test")
        for test in entry.tests:
            if test not in known_tests:
                raise MissingAnnotation(f"{op} cites unknown test {test}")

    lines = [
        "# Formula map",
        "",
        "Generated by `python -m bridgekit.docs`; do not edit by hand.",
        "",
        "| Relation | Formula | Implementation | Tests |",
        "|---|---|---|---|",
    ]
    for op in sorted(entries):
        e = entries[op]
        tests = ", ".join(f"`{t}`" for t in e.tests)
        formula = e.formula.replace("|", "\\|")
        lines.append(f"| {e.relation} | `{formula}` | `bridgekit.{op}` | {tests} |")
    return "\n".join(lines) + "\n"
